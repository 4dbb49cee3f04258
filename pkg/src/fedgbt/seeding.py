"""Deterministic seed and mask derivation shared by the protocol modules."""

from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    """Collision-resistant 63-bit seed from an arbitrary label tuple."""
    material = "|".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big") >> 1


def derive_uniform_int(modulus: int, *parts) -> int:
    """Uniform residue mod ``modulus`` derived from a label tuple.

    Enough digest bits are drawn that the modular bias is below 2^-128 even
    for moduli close to the digest size.
    """
    material = "|".join(str(p) for p in parts).encode()
    need_bits = modulus.bit_length() + 128
    blocks = []
    counter = 0
    while sum(len(b) for b in blocks) * 8 < need_bits:
        blocks.append(hashlib.sha512(material + b"#" + str(counter).encode()).digest())
        counter += 1
    return int.from_bytes(b"".join(blocks), "big") % modulus
