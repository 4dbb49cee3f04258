"""Additively homomorphic Paillier cryptosystem with a signed fixed-point codec.

Multiplying two ciphertexts modulo n^2 adds their plaintexts modulo n, which
is the only homomorphic operation the protocols in this package need: parties
encrypt per-slot (or per-sample) gradient statistics, an aggregator multiplies
the ciphertexts, and the key holder decrypts the sum.

Plaintexts are residues in [0, n).  Real-valued statistics are embedded
through :class:`FixedPointCodec`, which scales by ``2**scale_bits`` and maps
negatives into the upper half of the residue ring.

All structures are immutable and safe to share between concurrently running
parties.  When ``rng`` / ``rng_seed`` arguments are supplied, key generation
and encryption randomness are fully deterministic, which the protocol tests
rely on for reproducible transcripts.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

try:  # pragma: no cover - exercised implicitly when gmpy2 is installed
    import gmpy2

    def _powmod(base: int, exp: int, mod: int) -> int:
        return int(gmpy2.powmod(base, exp, mod))

    def _invert(a: int, mod: int) -> int:
        return int(gmpy2.invert(a, mod))

    def _is_probable_prime(n: int) -> bool:
        return bool(gmpy2.is_prime(n, 40))

except ImportError:  # pragma: no cover
    _powmod = pow

    def _invert(a: int, mod: int) -> int:
        return pow(a, -1, mod)

    _SMALL_PRIMES = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37]

    def _is_probable_prime(n: int) -> bool:
        if n < 2:
            return False
        for p in _SMALL_PRIMES:
            if n % p == 0:
                return n == p
        d, s = n - 1, 0
        while d % 2 == 0:
            d //= 2
            s += 1
        # Fixed-base Miller-Rabin; 40 small-prime bases keep the error
        # probability far below 2^-80 for the key sizes used here.
        for a in _SMALL_PRIMES + list(range(41, 180, 2)):
            x = pow(a, d, n)
            if x in (1, n - 1):
                continue
            for _ in range(s - 1):
                x = x * x % n
                if x == n - 1:
                    break
            else:
                return False
        return True


class KeyGenerationError(Exception):
    """Prime search failed within the retry budget."""


class EncodingError(ValueError):
    """Value outside the admissible plaintext or fixed-point range."""


@dataclass(frozen=True)
class PublicKey:
    """Encryption key ``(n, g)`` with the modulus square cached."""

    n: int
    g: int
    n_squared: int

    def __post_init__(self):
        if self.n_squared != self.n * self.n:
            raise ValueError("n_squared does not match n")
        if math.gcd(self.g, self.n_squared) != 1:
            raise ValueError("g is not invertible modulo n^2")

    @property
    def key_bits(self) -> int:
        return self.n.bit_length()


@dataclass(frozen=True)
class PrivateKey:
    """Decryption key: Carmichael value ``lam`` and its companion ``mu``."""

    lam: int
    mu: int


@dataclass(frozen=True)
class Ciphertext:
    """A Paillier ciphertext value in [0, n^2)."""

    value: int


def _l_function(u: int, n: int) -> int:
    return (u - 1) // n


def _generate_prime(bits: int, rng: random.Random, max_tries: int = 100_000) -> int:
    for _ in range(max_tries):
        candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if _is_probable_prime(candidate):
            return candidate
    raise KeyGenerationError(f"no {bits}-bit prime found in {max_tries} tries")


def keypair_from_primes(p: int, q: int, g: int | None = None) -> tuple[PublicKey, PrivateKey]:
    """Assemble a keypair from explicit primes (mainly for small worked examples)."""
    if p == q:
        raise KeyGenerationError("p and q must be distinct")
    n = p * q
    phi = (p - 1) * (q - 1)
    if math.gcd(n, phi) != 1:
        raise KeyGenerationError("gcd(n, phi(n)) != 1; pick different primes")
    lam = math.lcm(p - 1, q - 1)
    if g is None:
        g = n + 1
    n_squared = n * n
    denom = _l_function(_powmod(g, lam, n_squared), n) % n
    if math.gcd(denom, n) != 1:
        raise KeyGenerationError("g admits no mu; choose another generator")
    mu = _invert(denom, n)
    return PublicKey(n=n, g=g, n_squared=n_squared), PrivateKey(lam=lam, mu=mu)


def keygen(
    key_bits: int = 2048,
    rng_seed: int | None = None,
    random_g: bool = False,
) -> tuple[PublicKey, PrivateKey]:
    """Generate a keypair from two equal-bit-length primes.

    ``g = n + 1`` by default (one multiplication cheaper to encrypt);
    ``random_g=True`` draws g uniformly from the invertible residues mod n^2
    instead.  A seed makes the whole procedure deterministic.
    """
    if key_bits < 16:
        raise ValueError("key_bits too small to form a workable modulus")
    rng = random.Random(rng_seed) if rng_seed is not None else random.SystemRandom()
    half = key_bits // 2
    for _ in range(1000):
        p = _generate_prime(half, rng)
        q = _generate_prime(half, rng)
        if p == q:
            continue
        n = p * q
        # Equal-length primes guarantee gcd(n, phi(n)) = 1, but verify anyway.
        if n.bit_length() < key_bits - 1 or math.gcd(n, (p - 1) * (q - 1)) != 1:
            continue
        g = None
        if random_g:
            n_squared = n * n
            while True:
                g = rng.randrange(2, n_squared)
                if math.gcd(g, n_squared) != 1:
                    continue
                try:
                    return keypair_from_primes(p, q, g)
                except KeyGenerationError:
                    continue
        return keypair_from_primes(p, q, g)
    raise KeyGenerationError("failed to assemble a valid keypair")


def sample_obfuscator(pk: PublicKey, rng: random.Random) -> int:
    """Draw r in (0, n) with gcd(r, n) = 1, resampling on the (negligible) failure."""
    while True:
        r = rng.randrange(1, pk.n)
        if math.gcd(r, pk.n) == 1:
            return r


def encrypt(pk: PublicKey, m: int, r: int | None = None, rng: random.Random | None = None) -> Ciphertext:
    """Encrypt plaintext ``m`` in [0, n) as ``g^m * r^n mod n^2``."""
    if not 0 <= m < pk.n:
        raise EncodingError(f"plaintext {m} outside [0, n)")
    if r is None:
        r = sample_obfuscator(pk, rng if rng is not None else random.SystemRandom())
    elif not (0 < r < pk.n) or math.gcd(r, pk.n) != 1:
        r = sample_obfuscator(pk, rng if rng is not None else random.SystemRandom())
    if pk.g == pk.n + 1:
        # (n+1)^m = 1 + m*n (mod n^2), saving one exponentiation.
        g_m = (1 + m * pk.n) % pk.n_squared
    else:
        g_m = _powmod(pk.g, m, pk.n_squared)
    return Ciphertext((g_m * _powmod(r, pk.n, pk.n_squared)) % pk.n_squared)


def decrypt(sk: PrivateKey, pk: PublicKey, c: Ciphertext) -> int:
    """Recover the plaintext: ``L(c^lam mod n^2) * mu mod n``."""
    if not 0 <= c.value < pk.n_squared:
        raise EncodingError("ciphertext outside [0, n^2)")
    u = _powmod(c.value, sk.lam, pk.n_squared)
    return (_l_function(u, pk.n) * sk.mu) % pk.n


def aggregate(pk: PublicKey, cs: list[Ciphertext]) -> Ciphertext:
    """Homomorphically add: the product of ciphertexts decrypts to the plaintext sum.

    An empty list yields the identity ciphertext (value 1, decrypts to 0).
    """
    acc = 1
    for c in cs:
        acc = (acc * c.value) % pk.n_squared
    return Ciphertext(acc)


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed fixed-point embedding of reals into the plaintext ring.

    ``encode`` scales by 2**scale_bits and wraps negatives into the upper
    half of [0, n); ``decode`` inverts.  Sums of at most ``max_terms``
    encodings stay decodable as long as
    ``2 * max_terms * max_magnitude * 2**scale_bits < n``.
    """

    scale_bits: int = 40
    max_terms: int = 1_000_000

    @property
    def scale(self) -> int:
        return 1 << self.scale_bits

    def check_capacity(self, n: int, max_magnitude: float) -> None:
        if 2 * self.max_terms * max_magnitude * self.scale >= n:
            raise EncodingError(
                "modulus too small for the configured term count and magnitude"
            )

    def encode(self, x: float, n: int) -> int:
        scaled = round(x * self.scale)
        if 2 * abs(scaled) >= n:
            raise EncodingError(f"magnitude of {x} overflows the plaintext range")
        return scaled % n

    def decode(self, m: int, n: int) -> float:
        if m > n // 2:
            m -= n
        return m / self.scale

    def decode_int(self, m: int, n: int) -> int:
        """Signed integer (still scaled by 2**scale_bits) without float rounding."""
        if m > n // 2:
            m -= n
        return m


def int_to_hex(value: int) -> str:
    """Lowercase big-endian hex, the wire form for keys and ciphertexts."""
    if value < 0:
        raise ValueError("only nonnegative integers are serialized")
    return format(value, "x")


def hex_to_int(text: str) -> int:
    return int(text, 16)
