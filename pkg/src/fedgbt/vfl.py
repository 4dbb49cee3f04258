"""Feature-partitioned (vertical) federated boosted-tree training.

One active party holds the labels (and possibly a feature block); passive
parties hold disjoint feature blocks over the same, pre-aligned sample ids.
Per tree, the active party encrypts every sample's gradient pair under its
own Paillier key and broadcasts the ciphertexts; passive parties sum them
homomorphically per (feature, bin) and return encrypted histograms.  The
active party decrypts the aggregates, picks the best split across all
parties, and records only (owning party, record id) for foreign nodes — the
winning threshold value stays at its owner, which also resolves sample
partitions and answers left/right queries at inference time.

Wire protocol: ``GRADIENT_BROADCAST``, ``SAMPLE_SPACE``,
``ENC_HISTOGRAM_SUBMIT``, ``SPLIT_NOTICE``, ``PARTITION_REPLY`` during
training; ``INFER_QUERY`` / ``INFER_REPLY`` during prediction.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from .data import PartyDataset
from .gbt import (
    Binning,
    BoostedEnsemble,
    GbtParams,
    GradHistogram,
    Tree,
    TreeNode,
    compute_binning,
    find_best_split,
    initial_margins,
    leaf_weight,
    logistic_gradients,
    sigmoid,
    soft_threshold,
    tree_row_sample,
)
from .hfl import ProtocolError
from .paillier import (
    Ciphertext,
    FixedPointCodec,
    PublicKey,
    aggregate,
    decrypt,
    encrypt,
    hex_to_int,
    int_to_hex,
    keygen,
)
from .seeding import derive_seed
from .transport import MessageBus


@dataclass(frozen=True)
class VflRoster:
    """Feature ownership map over one aligned sample universe."""

    active_id: str
    passive_ids: tuple[str, ...]
    feature_slices: dict  # party id -> (start, stop) in the global feature order
    feature_names: tuple[str, ...]

    def __post_init__(self):
        if self.active_id in self.passive_ids:
            raise ProtocolError("active party cannot also be passive")
        covered = np.zeros(len(self.feature_names), dtype=bool)
        for party, (start, stop) in self.feature_slices.items():
            if covered[start:stop].any():
                raise ProtocolError("overlapping feature ranges")
            covered[start:stop] = True
        if not covered.all():
            raise ProtocolError("feature ranges must cover the whole space")

    @property
    def party_ids(self) -> tuple[str, ...]:
        return (self.active_id, *self.passive_ids)

    def owner_of(self, global_feature: int) -> str:
        for party, (start, stop) in self.feature_slices.items():
            if start <= global_feature < stop:
                return party
        raise ProtocolError(f"feature {global_feature} has no owner")

    def to_local(self, party: str, global_feature: int) -> int:
        start, stop = self.feature_slices[party]
        if not start <= global_feature < stop:
            raise ProtocolError(f"feature {global_feature} is not owned by {party}")
        return global_feature - start


def make_vfl_roster(active_id: str, datasets: dict[str, PartyDataset]) -> VflRoster:
    """Build the roster with the active party's features first, then each
    passive block in sorted party order (this defines the global feature
    order used for centralized comparisons)."""
    if active_id not in datasets:
        raise ProtocolError(f"active party {active_id!r} missing a dataset")
    if datasets[active_id].labels is None:
        raise ProtocolError("active party must hold the labels")
    ids0 = datasets[active_id].sample_ids
    passive_ids = tuple(sorted(p for p in datasets if p != active_id))
    for p in passive_ids:
        if not np.array_equal(datasets[p].sample_ids, ids0):
            raise ProtocolError(f"sample ids of {p} are not aligned with the active party")
    slices = {}
    names: list[str] = []
    cursor = 0
    for party in (active_id, *passive_ids):
        width = datasets[party].n_features
        slices[party] = (cursor, cursor + width)
        names.extend(datasets[party].feature_names)
        cursor += width
    return VflRoster(
        active_id=active_id,
        passive_ids=passive_ids,
        feature_slices=slices,
        feature_names=tuple(names),
    )


def joined_matrix(roster: VflRoster, datasets: dict[str, PartyDataset]) -> np.ndarray:
    """The plaintext join in roster feature order (oracle/test helper)."""
    blocks = [datasets[p].features for p in roster.party_ids]
    return np.hstack(blocks)


@dataclass
class SplitRecord:
    record_id: int
    feature_local: int
    bin_index: int
    threshold: float


class PassiveParty:
    """Feature owner without labels; sees only gradient ciphertexts."""

    def __init__(self, party_id: str, dataset: PartyDataset, n_bins: int):
        self.party_id = party_id
        self.dataset = dataset
        self.n_bins = n_bins
        self.binning: Binning = compute_binning(dataset.features, n_bins)
        self.binned: np.ndarray = self.binning.bin_matrix(dataset.features)
        self.pk: PublicKey | None = None
        self.enc_g: dict[int, Ciphertext] = {}
        self.enc_h: dict[int, Ciphertext] = {}
        self.records: dict[int, SplitRecord] = {}
        self.pos_of_id = {int(s): i for i, s in enumerate(dataset.sample_ids)}
        self.inference_rows: dict[int, np.ndarray] = {}

    def receive_gradients(self, sample_ids: list[int], enc_g: list[Ciphertext],
                          enc_h: list[Ciphertext]) -> None:
        self.enc_g = dict(zip(sample_ids, enc_g))
        self.enc_h = dict(zip(sample_ids, enc_h))

    def bin_aggregate(self, sample_ids: list[int]) -> tuple[list, list, np.ndarray]:
        """Homomorphic per-(feature, bin) sums over the given sample space."""
        unknown = [s for s in sample_ids if s not in self.pos_of_id]
        if unknown:
            raise ProtocolError(f"{self.party_id} received unknown sample ids {unknown[:3]}")
        F, B = self.dataset.n_features, self.n_bins
        buckets_g: list[list[Ciphertext]] = [[] for _ in range(F * B)]
        buckets_h: list[list[Ciphertext]] = [[] for _ in range(F * B)]
        counts = np.zeros((F, B), dtype=np.int64)
        for sid in sample_ids:
            pos = self.pos_of_id[sid]
            cg, ch = self.enc_g[sid], self.enc_h[sid]
            for f in range(F):
                b = self.binned[pos, f]
                buckets_g[f * B + b].append(cg)
                buckets_h[f * B + b].append(ch)
                counts[f, b] += 1
        enc_g = [aggregate(self.pk, bucket) for bucket in buckets_g]
        enc_h = [aggregate(self.pk, bucket) for bucket in buckets_h]
        return enc_g, enc_h, counts

    def store_record(self, record_id: int, feature_local: int, bin_index: int) -> SplitRecord:
        if not 0 <= bin_index < self.n_bins - 1:
            raise ProtocolError(f"split bin {bin_index} outside the boundary range")
        record = SplitRecord(
            record_id=record_id,
            feature_local=feature_local,
            bin_index=bin_index,
            threshold=self.binning.threshold(feature_local, bin_index),
        )
        self.records[record_id] = record
        return record

    def resolve_partition(self, record_id: int, sample_ids: list[int]) -> list[int]:
        """Sample ids from the given space that fall left of the stored split."""
        if record_id not in self.records:
            raise ProtocolError(f"{self.party_id} has no record {record_id}")
        rec = self.records[record_id]
        out = []
        for sid in sample_ids:
            pos = self.pos_of_id[sid]
            if self.binned[pos, rec.feature_local] <= rec.bin_index:
                out.append(sid)
        return out

    def load_inference_rows(self, sample_ids: np.ndarray, rows: np.ndarray) -> None:
        for sid, row in zip(sample_ids, rows):
            self.inference_rows[int(sid)] = np.asarray(row, dtype=np.float64)

    def answer_query(self, record_id: int, sample_id: int) -> bool:
        if record_id not in self.records:
            raise ProtocolError(f"{self.party_id} cannot resolve record {record_id}")
        rec = self.records[record_id]
        row = self.inference_rows.get(sample_id)
        if row is None:
            raise ProtocolError(f"{self.party_id} holds no feature slice for sample {sample_id}")
        return bool(row[rec.feature_local] <= rec.threshold)


class ActiveParty:
    """Label owner, Paillier key holder, and training driver."""

    def __init__(self, party_id: str, dataset: PartyDataset, params: GbtParams,
                 codec: FixedPointCodec, seed: int, key_bits: int = 512):
        if dataset.labels is None:
            raise ProtocolError("active party needs labels")
        self.party_id = party_id
        self.dataset = dataset
        self.params = params
        self.codec = codec
        self.seed = seed
        self.pk, self.sk = keygen(key_bits=key_bits, rng_seed=derive_seed("vfl-key", seed))
        self.codec.check_capacity(self.pk.n, max_magnitude=1.0)
        self.enc_rng = random.Random(derive_seed("vfl-enc", seed))
        self.binning: Binning = compute_binning(dataset.features, params.max_bin)
        self.binned: np.ndarray = self.binning.bin_matrix(dataset.features)
        self.margins = initial_margins(dataset.n_samples, params, seed)
        self.g = np.zeros(dataset.n_samples)
        self.h = np.zeros(dataset.n_samples)
        self.records: dict[int, SplitRecord] = {}
        self.pos_of_id = {int(s): i for i, s in enumerate(dataset.sample_ids)}

    def encrypt_gradients(self, positions: np.ndarray) -> tuple[list[int], list[Ciphertext], list[Ciphertext]]:
        ids, enc_g, enc_h = [], [], []
        for pos in positions:
            ids.append(int(self.dataset.sample_ids[pos]))
            enc_g.append(encrypt(self.pk, self.codec.encode(float(self.g[pos]), self.pk.n),
                                 rng=self.enc_rng))
            enc_h.append(encrypt(self.pk, self.codec.encode(float(self.h[pos]), self.pk.n),
                                 rng=self.enc_rng))
        return ids, enc_g, enc_h

    def decrypt_histogram(self, enc_g: list[Ciphertext], enc_h: list[Ciphertext],
                          counts: np.ndarray) -> GradHistogram:
        F, B = counts.shape
        hist = GradHistogram.zeros(F, B)
        for f in range(F):
            for b in range(B):
                flat = f * B + b
                hist.g[f, b] = self.codec.decode(decrypt(self.sk, self.pk, enc_g[flat]), self.pk.n)
                hist.h[f, b] = self.codec.decode(decrypt(self.sk, self.pk, enc_h[flat]), self.pk.n)
        hist.counts = counts.astype(np.int64)
        return hist

    def own_histogram(self, positions: np.ndarray) -> GradHistogram:
        from .gbt import build_histogram

        return build_histogram(self.binned, self.g, self.h, positions, self.params.max_bin)

    def leaf_weight_for(self, positions: np.ndarray) -> float:
        G = float(self.g[positions].sum())
        H = float(self.h[positions].sum())
        return leaf_weight(float(soft_threshold(G, self.params.reg_alpha)), H,
                           self.params.reg_lambda)


@dataclass
class VflTrained:
    """The distributed model: skeleton at the active party, thresholds at owners."""

    roster: VflRoster
    ensemble: BoostedEnsemble
    active: ActiveParty
    passives: dict[str, PassiveParty]

    def lookup(self, tree_index: int, node_id: int) -> tuple[str, int]:
        node = self.ensemble.trees[tree_index].nodes[node_id]
        return node.owner, node.record_id


def vfl_train(
    roster: VflRoster,
    datasets: dict[str, PartyDataset],
    params: GbtParams,
    seed: int = 0,
    bus: MessageBus | None = None,
    key_bits: int = 512,
    codec: FixedPointCodec | None = None,
) -> tuple[VflTrained, MessageBus]:
    bus = bus or MessageBus()
    codec = codec or FixedPointCodec()
    active = ActiveParty(roster.active_id, datasets[roster.active_id], params, codec,
                         seed, key_bits)
    passives = {
        pid: PassiveParty(pid, datasets[pid], params.max_bin) for pid in roster.passive_ids
    }
    aid = roster.active_id
    round_id = 0
    next_record = 0
    trees: list[Tree] = []

    for t in range(params.n_estimators):
        rows = tree_row_sample(active.dataset.n_samples, params.subsample, seed, t)
        active.g, active.h = logistic_gradients(active.dataset.labels, active.margins)

        round_id += 1
        ids, enc_g, enc_h = active.encrypt_gradients(rows)
        payload = {
            "tree": t,
            "enc_g": {str(s): int_to_hex(c.value) for s, c in zip(ids, enc_g)},
            "enc_h": {str(s): int_to_hex(c.value) for s, c in zip(ids, enc_h)},
        }
        for pid in roster.passive_ids:
            bus.send(aid, pid, "GRADIENT_BROADCAST", round_id, payload)
        for pid, passive in passives.items():
            env = bus.recv(pid, "GRADIENT_BROADCAST")
            passive.pk = active.pk  # public key is public by definition
            g_map = env.payload["enc_g"]
            h_map = env.payload["enc_h"]
            passive.receive_gradients(
                [int(s) for s in g_map],
                [Ciphertext(hex_to_int(v)) for v in g_map.values()],
                [Ciphertext(hex_to_int(v)) for v in h_map.values()],
            )

        tree = Tree()
        tree.nodes.append(TreeNode(node_id=0, is_leaf=False))
        node_positions: dict[int, np.ndarray] = {0: rows}
        level: list[tuple[int, np.ndarray]] = [(0, rows)]
        depth = 0
        while level:
            next_level: list[tuple[int, np.ndarray]] = []
            for node_id, positions in level:
                node = tree.nodes[node_id]
                if depth >= params.max_depth or positions.size < 2:
                    node.is_leaf = True
                    node.weight = active.leaf_weight_for(positions)
                    continue

                sample_ids = [int(active.dataset.sample_ids[p]) for p in positions]
                round_id += 1
                for pid in roster.passive_ids:
                    bus.send(aid, pid, "SAMPLE_SPACE", round_id, {
                        "tree": t, "node": node_id, "sample_ids": sample_ids,
                    })
                round_id += 1
                party_hists: dict[str, GradHistogram] = {
                    aid: active.own_histogram(positions)
                }
                for pid, passive in sorted(passives.items()):
                    env = bus.recv(pid, "SAMPLE_SPACE")
                    eg, eh, counts = passive.bin_aggregate(env.payload["sample_ids"])
                    bus.send(pid, aid, "ENC_HISTOGRAM_SUBMIT", round_id, {
                        "tree": t,
                        "node": node_id,
                        "enc_g": [int_to_hex(c.value) for c in eg],
                        "enc_h": [int_to_hex(c.value) for c in eh],
                        "counts": counts.flatten().tolist(),
                    })
                if roster.passive_ids:
                    envs = bus.recv_from_each(aid, list(roster.passive_ids), "ENC_HISTOGRAM_SUBMIT")
                    for pid in roster.passive_ids:
                        payload = envs[pid].payload
                        F = datasets[pid].n_features
                        counts = np.array(payload["counts"], dtype=np.int64).reshape(F, params.max_bin)
                        party_hists[pid] = active.decrypt_histogram(
                            [Ciphertext(hex_to_int(v)) for v in payload["enc_g"]],
                            [Ciphertext(hex_to_int(v)) for v in payload["enc_h"]],
                            counts,
                        )

                # assemble the global histogram in roster feature order
                global_hist = GradHistogram(
                    g=np.vstack([party_hists[p].g for p in roster.party_ids]),
                    h=np.vstack([party_hists[p].h for p in roster.party_ids]),
                    counts=np.vstack([party_hists[p].counts for p in roster.party_ids]),
                )
                best = find_best_split(global_hist, params)
                if best is None:
                    node.is_leaf = True
                    node.weight = active.leaf_weight_for(positions)
                    continue

                owner = roster.owner_of(best.feature)
                local_feature = roster.to_local(owner, best.feature)
                record_id = next_record
                next_record += 1
                if owner == aid:
                    record = SplitRecord(
                        record_id=record_id,
                        feature_local=local_feature,
                        bin_index=best.bin_index,
                        threshold=active.binning.threshold(local_feature, best.bin_index),
                    )
                    active.records[record_id] = record
                    left_mask = active.binned[positions, local_feature] <= best.bin_index
                    left_positions = positions[left_mask]
                else:
                    round_id += 1
                    bus.send(aid, owner, "SPLIT_NOTICE", round_id, {
                        "tree": t,
                        "node": node_id,
                        "record": record_id,
                        "feature_local": local_feature,
                        "bin": best.bin_index,
                    })
                    env = bus.recv(owner, "SPLIT_NOTICE")
                    passives[owner].store_record(
                        record_id, env.payload["feature_local"], env.payload["bin"]
                    )
                    round_id += 1
                    left_ids = passives[owner].resolve_partition(record_id, sample_ids)
                    bus.send(owner, aid, "PARTITION_REPLY", round_id, {
                        "tree": t, "node": node_id, "sample_ids": left_ids,
                    })
                    reply = bus.recv(aid, "PARTITION_REPLY")
                    left_positions = np.array(
                        sorted(active.pos_of_id[s] for s in reply.payload["sample_ids"]),
                        dtype=np.int64,
                    )
                right_positions = np.setdiff1d(positions, left_positions)

                left_id, right_id = len(tree.nodes), len(tree.nodes) + 1
                node.is_leaf = False
                node.owner = owner
                node.record_id = record_id
                node.left, node.right = left_id, right_id
                # the active party ran the argmax, so the winning feature and
                # bin position are known to it; only the threshold value is
                # private to the owner
                node.feature = best.feature
                node.bin_index = best.bin_index
                if owner == aid:
                    node.threshold = active.binning.threshold(local_feature, best.bin_index)
                tree.nodes.append(TreeNode(node_id=left_id, is_leaf=False))
                tree.nodes.append(TreeNode(node_id=right_id, is_leaf=False))
                node_positions[left_id] = left_positions
                node_positions[right_id] = right_positions
                next_level.append((left_id, left_positions))
                next_level.append((right_id, right_positions))
            level = next_level
            depth += 1

        # margin update: with subsample=1 the training partitions already
        # route every row; otherwise route the full row set, querying the
        # owner of each foreign split
        weights = np.zeros(active.dataset.n_samples)
        if params.subsample >= 1.0:
            for node in tree.nodes:
                if node.is_leaf:
                    weights[node_positions[node.node_id]] = node.weight
        else:
            round_id = _route_all_rows(
                tree, active, passives, roster, bus, t, round_id, weights
            )
        active.margins += params.learning_rate * weights
        trees.append(tree)

    ensemble = BoostedEnsemble(
        trees=trees,
        params=params,
        base_score_logit=params.base_score_logit,
        feature_names=roster.feature_names,
    )
    trained = VflTrained(roster=roster, ensemble=ensemble, active=active, passives=passives)
    return trained, bus


def _route_all_rows(tree: Tree, active: ActiveParty, passives: dict[str, PassiveParty],
                    roster: VflRoster, bus: MessageBus, tree_index: int,
                    round_id: int, out: np.ndarray) -> int:
    """Route every training row down the tree, asking owners of foreign
    splits to partition (used when subsampling left rows unrouted)."""
    aid = roster.active_id
    stack = [(0, np.arange(active.dataset.n_samples, dtype=np.int64))]
    while stack:
        node_id, positions = stack.pop()
        node = tree.nodes[node_id]
        if node.is_leaf:
            out[positions] = node.weight
            continue
        if node.owner == aid:
            record = active.records[node.record_id]
            mask = active.binned[positions, record.feature_local] <= record.bin_index
            left = positions[mask]
        else:
            sample_ids = [int(active.dataset.sample_ids[p]) for p in positions]
            round_id += 1
            bus.send(aid, node.owner, "SAMPLE_SPACE", round_id, {
                "tree": tree_index, "node": node_id, "sample_ids": sample_ids,
            })
            env = bus.recv(node.owner, "SAMPLE_SPACE")
            left_ids = passives[node.owner].resolve_partition(
                node.record_id, env.payload["sample_ids"]
            )
            round_id += 1
            bus.send(node.owner, aid, "PARTITION_REPLY", round_id, {
                "tree": tree_index, "node": node_id, "sample_ids": left_ids,
            })
            reply = bus.recv(aid, "PARTITION_REPLY")
            left = np.array(
                sorted(active.pos_of_id[s] for s in reply.payload["sample_ids"]),
                dtype=np.int64,
            )
        stack.append((node.left, left))
        stack.append((node.right, np.setdiff1d(positions, left)))
    return round_id


def vfl_predict(
    trained: VflTrained,
    parts: dict[str, PartyDataset],
    bus: MessageBus | None = None,
    round_start: int = 10_000,
) -> tuple[np.ndarray, MessageBus]:
    """Federated inference over vertically-split feature rows.

    ``parts`` maps each roster party to its feature slice of the query rows
    (same sample ids everywhere).  The active party walks each tree and asks
    a node's owner to answer left/right; only leaf weights accumulate here.
    """
    bus = bus or MessageBus()
    roster = trained.roster
    active = trained.active
    aid = roster.active_id
    sample_ids = parts[aid].sample_ids
    for pid in roster.passive_ids:
        if not np.array_equal(parts[pid].sample_ids, sample_ids):
            raise ProtocolError("inference rows are not aligned across parties")
        trained.passives[pid].load_inference_rows(parts[pid].sample_ids, parts[pid].features)

    X_active = parts[aid].features
    margins = np.full(len(sample_ids), trained.ensemble.base_score_logit)
    round_id = round_start
    query = 0
    for i, sid in enumerate(sample_ids):
        for tree in trained.ensemble.trees:
            node = tree.nodes[0]
            while not node.is_leaf:
                if node.owner == aid:
                    record = active.records[node.record_id]
                    go_left = X_active[i, record.feature_local] <= record.threshold
                else:
                    round_id += 1
                    query += 1
                    bus.send(aid, node.owner, "INFER_QUERY", round_id, {
                        "query": query, "record": node.record_id, "sample_id": int(sid),
                    })
                    env = bus.recv(node.owner, "INFER_QUERY")
                    answer = trained.passives[node.owner].answer_query(
                        env.payload["record"], env.payload["sample_id"]
                    )
                    bus.send(node.owner, aid, "INFER_REPLY", round_id, {
                        "query": query, "go_left": bool(answer),
                    })
                    go_left = bus.recv(aid, "INFER_REPLY").payload["go_left"]
                node = tree.nodes[node.left if go_left else node.right]
            margins[i] += trained.ensemble.params.learning_rate * node.weight
    return sigmoid(margins), bus
