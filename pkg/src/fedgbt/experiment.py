"""Experiment harness: paired comparison of separate / federated / centralized
modeling over a shared fold plan, with privacy-cost and communication
accounting.

Every regime in one experiment consumes the same stratified fold plan, so
per-fold metric differences are paired.  Reports split into deterministic
files (metrics, privacy costs, byte counts, model hashes — byte-identical
across reruns with the same config and seeds) and a timing file, which is
hardware-dependent and excluded from the determinism guarantee.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import (
    PartyDataset,
    SynthConfig,
    default_synth_config,
    join_datasets,
    load_csv,
    split_train_valid_test,
    synth_generate,
    vertical_partition,
)
from .gbt import GbtParams, model_to_dict, model_to_json, predict_proba, train_centralized
from .hfl import SECAGG_MASK_ONLY, SECAGG_PAILLIER, hfl_train, make_roster
from .hpo import SearchSpace, default_search_space, params_from_vector, tune_objective
from .metrics import MetricReport, average_reports, evaluate_scores, privacy_cost
from .transport import MessageBus, write_transcript
from .vfl import make_vfl_roster, vfl_predict, vfl_train

SCENARIO_HFL = "hfl_case_one"
SCENARIO_VFL = "vfl_case_two"
REGIMES = ("separate", "federated", "centralized")
TUNING_MODES = ("none", "direct_bo", "aggregated_bo")

HEADLINE_METRICS = ("auc", "accuracy", "f1")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = SCENARIO_HFL
    regimes: tuple[str, ...] = ("separate", "federated", "centralized")
    tuning: str = "none"
    params: GbtParams = field(default_factory=GbtParams)
    csv_paths: dict | None = None  # district name -> csv path
    synth: SynthConfig | None = None
    k_folds: int = 5
    seed: int = 0
    secagg_mode: str = SECAGG_PAILLIER
    key_bits: int = 512
    bo_budget: int = 12
    tuning_space: SearchSpace | None = None

    def __post_init__(self):
        if self.scenario not in (SCENARIO_HFL, SCENARIO_VFL):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        unknown = set(self.regimes) - set(REGIMES)
        if unknown:
            raise ConfigError(f"unknown regimes {sorted(unknown)}")
        if not self.regimes:
            raise ConfigError("at least one regime is required")
        if self.tuning not in TUNING_MODES:
            raise ConfigError(f"unknown tuning mode {self.tuning!r}")
        if self.tuning == "direct_bo" and "federated" in self.regimes:
            raise ConfigError(
                "federated training cannot use direct tuning: it would need "
                "pooled data; use aggregated_bo"
            )
        if self.secagg_mode not in (SECAGG_PAILLIER, SECAGG_MASK_ONLY):
            raise ConfigError(f"unknown secure-aggregation mode {self.secagg_mode!r}")


def config_from_dict(doc: dict) -> ExperimentConfig:
    params = GbtParams(**doc.get("params", {}))
    synth = None
    if "synth" in doc.get("data", {}):
        s = doc["data"]["synth"]
        synth = SynthConfig(
            seed=s.get("seed", 0),
            noise_scale=s.get("noise_scale", 0.25),
            signal_weights=s.get("signal_weights", None) or dict(
                default_synth_config().signal_weights
            ),
            label_threshold=s.get("label_threshold", 2.0e4),
        )
    csv_paths = doc.get("data", {}).get("csv")
    return ExperimentConfig(
        scenario=doc.get("scenario", SCENARIO_HFL),
        regimes=tuple(doc.get("regimes", ["separate", "federated", "centralized"])),
        tuning=doc.get("tuning", "none"),
        params=params,
        csv_paths=csv_paths,
        synth=synth,
        k_folds=doc.get("k_folds", 5),
        seed=doc.get("seed", 0),
        secagg_mode=doc.get("secagg", SECAGG_PAILLIER),
        key_bits=doc.get("key_bits", 512),
        bo_budget=doc.get("bo_budget", 12),
    )


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def load_districts(config: ExperimentConfig) -> list[PartyDataset]:
    if config.csv_paths:
        return [load_csv(path, party_id=name) for name, path in sorted(config.csv_paths.items())]
    synth = config.synth or default_synth_config(seed=config.seed)
    return list(synth_generate(synth))


@dataclass
class RegimeResult:
    tag: str
    per_fold: list[MetricReport] = field(default_factory=list)
    averaged: MetricReport | None = None
    model_hashes: list[str] = field(default_factory=list)
    wall_time: float = 0.0
    bytes_by_role: dict = field(default_factory=dict)
    messages_by_role: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class ExperimentReport:
    config_digest: str
    fold_plan_hash: str
    regimes: dict  # tag -> RegimeResult
    privacy_costs: list  # PrivacyCost entries

    def deterministic_dict(self) -> dict:
        out = {
            "config_digest": self.config_digest,
            "fold_plan_hash": self.fold_plan_hash,
            "regimes": {},
            "privacy_costs": [asdict(c) for c in self.privacy_costs],
        }
        for tag, result in sorted(self.regimes.items()):
            out["regimes"][tag] = {
                "error": result.error,
                "averaged": result.averaged.as_dict() if result.averaged else None,
                "per_fold": [r.as_dict() for r in result.per_fold],
                "model_hashes": result.model_hashes,
                "bytes_by_role": dict(sorted(result.bytes_by_role.items())),
                "messages_by_role": dict(sorted(result.messages_by_role.items())),
            }
        return out


def _hash_json(obj) -> str:
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def _hash_fold_plan(plan) -> str:
    doc = [
        {
            "train": fold.train_idx.tolist(),
            "valid": fold.valid_idx.tolist(),
            "test": fold.test_idx.tolist(),
        }
        for fold in plan.folds
    ]
    return _hash_json(doc)


def _party_rows(joined: PartyDataset, district: PartyDataset) -> np.ndarray:
    return np.flatnonzero(np.isin(joined.sample_ids, district.sample_ids))


def _tune_params_for(regime: str, config: ExperimentConfig, train_sets: list[PartyDataset],
                     fold_seed: int) -> GbtParams:
    if config.tuning == "none":
        return config.params
    space = config.tuning_space or default_search_space()
    if regime == "separate":
        mode = "separate"
    elif regime == "centralized":
        mode = "centralized" if config.tuning == "direct_bo" else "federated-aggregated"
    else:
        mode = "federated-aggregated"
    tuned = tune_objective(mode, train_sets, base=config.params, space=space,
                           seed=fold_seed, budget=config.bo_budget)
    return params_from_vector(config.params, tuned.vector)


def run_experiment(config: ExperimentConfig, out_dir: str | None = None) -> ExperimentReport:
    districts = load_districts(config)
    joined = join_datasets(districts, "joined")
    plan = split_train_valid_test(joined, k=config.k_folds, seed=config.seed)
    fold_plan_hash = _hash_fold_plan(plan)

    results: dict[str, RegimeResult] = {}
    saved_transcript: MessageBus | None = None

    def get(tag: str) -> RegimeResult:
        if tag not in results:
            results[tag] = RegimeResult(tag=tag)
        return results[tag]

    for fold in plan.folds:
        train = joined.subset(fold.full_train_idx, "train")
        test = joined.subset(fold.test_idx, "test")
        fold_seed = config.seed + 101 * fold.fold_id

        if config.scenario == SCENARIO_HFL:
            party_train = {
                d.party_id: train.subset(_party_rows(train, d), d.party_id)
                for d in districts
            }
            runs = _hfl_fold_runs(config, party_train, train, test, fold_seed)
        else:
            runs = _vfl_fold_runs(config, train, test, fold_seed)

        for tag, runner in runs:
            result = get(tag)
            if result.error:
                continue
            started = time.perf_counter()
            try:
                scores, model_hash, bus = runner()
            except Exception as exc:  # keep other regimes alive, record the failure
                result.error = f"fold {fold.fold_id}: {type(exc).__name__}: {exc}"
                continue
            result.wall_time += time.perf_counter() - started
            result.per_fold.append(
                evaluate_scores(test.labels, scores, fold_id=fold.fold_id, model_tag=tag)
            )
            result.model_hashes.append(model_hash)
            if bus is not None:
                for role, nbytes in bus.bytes_by_sender().items():
                    result.bytes_by_role[role] = result.bytes_by_role.get(role, 0) + nbytes
                for role, count in bus.messages_by_sender().items():
                    result.messages_by_role[role] = result.messages_by_role.get(role, 0) + count
                if saved_transcript is None:
                    saved_transcript = bus

    for result in results.values():
        if result.per_fold:
            result.averaged = average_reports(result.per_fold, result.tag)

    costs = []
    centralized = results.get("centralized")
    if centralized and centralized.averaged:
        for metric in HEADLINE_METRICS:
            base = getattr(centralized.averaged, metric)
            federated = results.get("federated")
            if federated and federated.averaged:
                costs.append(privacy_cost("federated", metric, base,
                                          getattr(federated.averaged, metric)))
            for tag, result in sorted(results.items()):
                if tag.startswith("separate:") and result.averaged:
                    party = tag.split(":", 1)[1]
                    costs.append(
                        privacy_cost(
                            "open_share", f"{metric}[{party}]", base,
                            getattr(result.averaged, metric),
                        )
                    )

    report = ExperimentReport(
        config_digest=_hash_json(_config_doc(config)),
        fold_plan_hash=fold_plan_hash,
        regimes=results,
        privacy_costs=costs,
    )
    if out_dir:
        write_report_files(report, out_dir, results, saved_transcript)
    return report


def _hfl_fold_runs(config, party_train, train, test, fold_seed):
    runs = []
    if "separate" in config.regimes:
        for pid, pdata in sorted(party_train.items()):
            def run_separate(pdata=pdata):
                params = _tune_params_for("separate", config, [pdata], fold_seed)
                model = train_centralized(pdata, params, seed=fold_seed)
                return predict_proba(model, test.features), _model_hash(model), None

            runs.append((f"separate:{pid}", run_separate))
    if "centralized" in config.regimes:
        def run_centralized():
            params = _tune_params_for(
                "centralized", config, [p for _, p in sorted(party_train.items())], fold_seed
            )
            model = train_centralized(train, params, seed=fold_seed)
            return predict_proba(model, test.features), _model_hash(model), None

        runs.append(("centralized", run_centralized))
    if "federated" in config.regimes:
        def run_federated():
            params = _tune_params_for(
                "federated", config, [p for _, p in sorted(party_train.items())], fold_seed
            )
            roster = make_roster(
                sorted(party_train), [party_train[p].n_samples for p in sorted(party_train)],
                master_seed=fold_seed, secagg_mode=config.secagg_mode,
            )
            model, bus = hfl_train(roster, party_train, params, seed=fold_seed,
                                   key_bits=config.key_bits)
            return predict_proba(model, test.features), _model_hash(model), bus

        runs.append(("federated", run_federated))
    return runs


def _vfl_fold_runs(config, train, test, fold_seed):
    train_parts = vertical_partition(train)
    test_parts = vertical_partition(test)
    label_party = "oil_company"
    runs = []
    if "separate" in config.regimes:
        for pid in sorted(train_parts):
            part = train_parts[pid]
            labeled = PartyDataset(pid, part.sample_ids, part.features,
                                   part.feature_names, train.labels)
            test_block = test_parts[pid]

            def run_separate(labeled=labeled, test_block=test_block):
                params = _tune_params_for("separate", config, [labeled], fold_seed)
                model = train_centralized(labeled, params, seed=fold_seed)
                return predict_proba(model, test_block.features), _model_hash(model), None

            runs.append((f"separate:{pid}", run_separate))
    if "centralized" in config.regimes:
        def run_centralized():
            sets = [
                PartyDataset(p, train_parts[p].sample_ids, train_parts[p].features,
                             train_parts[p].feature_names, train.labels)
                for p in sorted(train_parts)
            ]
            params = _tune_params_for("centralized", config, sets, fold_seed)
            # the pooled model trains on the joined matrix in roster order
            roster = make_vfl_roster(label_party, train_parts)
            from .vfl import joined_matrix

            joined_train = PartyDataset("joined", train.sample_ids,
                                        joined_matrix(roster, train_parts),
                                        roster.feature_names, train.labels)
            model = train_centralized(joined_train, params, seed=fold_seed)
            test_roster_parts = {p: test_parts[p] for p in roster.party_ids}
            X_test = joined_matrix(roster, test_roster_parts)
            return predict_proba(model, X_test), _model_hash(model), None

        runs.append(("centralized", run_centralized))
    if "federated" in config.regimes:
        def run_federated():
            sets = [
                PartyDataset(p, train_parts[p].sample_ids, train_parts[p].features,
                             train_parts[p].feature_names, train.labels)
                for p in sorted(train_parts)
            ]
            params = _tune_params_for("federated", config, sets, fold_seed)
            roster = make_vfl_roster(label_party, train_parts)
            trained, bus = vfl_train(roster, train_parts, params, seed=fold_seed,
                                     key_bits=config.key_bits)
            scores, bus = vfl_predict(trained, test_parts, bus=bus)
            return scores, _hash_json(model_to_dict(trained.ensemble)), bus

        runs.append(("federated", run_federated))
    return runs


def _model_hash(model) -> str:
    return hashlib.sha256(model_to_json(model).encode()).hexdigest()


def _config_doc(config: ExperimentConfig) -> dict:
    doc = {
        "scenario": config.scenario,
        "regimes": list(config.regimes),
        "tuning": config.tuning,
        "params": asdict(config.params),
        "k_folds": config.k_folds,
        "seed": config.seed,
        "secagg": config.secagg_mode,
        "key_bits": config.key_bits,
        "bo_budget": config.bo_budget,
    }
    if config.csv_paths:
        doc["csv"] = dict(sorted(config.csv_paths.items()))
    if config.synth:
        doc["synth_seed"] = config.synth.seed
    return doc


# ---------------------------------------------------------------------------
# Report files


def write_report_files(report: ExperimentReport, out_dir: str,
                       results: dict[str, RegimeResult],
                       transcript: MessageBus | None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report.deterministic_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(os.path.join(out_dir, "summary.tsv"), "w") as fh:
        fh.write("model\tprivacy\tauc\tacc\tf1_score\n")
        for tag, result in sorted(results.items()):
            if not result.averaged:
                continue
            privacy = "not-safe" if tag == "centralized" else "safe"
            r = result.averaged
            fh.write(f"{tag}\t{privacy}\t{r.auc:.6f}\t{r.accuracy:.6f}\t{r.f1:.6f}\n")
        for cost in report.privacy_costs:
            fh.write(
                f"privacy_cost[{cost.kind}:{cost.metric}]\t-\t{cost.cost:.6f}\t-\t-\n"
            )

    with open(os.path.join(out_dir, "folds.tsv"), "w") as fh:
        fields = ("auc", "accuracy", "precision", "recall", "f1", "fpr_standard", "fpr_paper")
        fh.write("model\tfold\t" + "\t".join(fields) + "\n")
        for tag, result in sorted(results.items()):
            for rep in result.per_fold:
                row = "\t".join(f"{getattr(rep, f):.6f}" for f in fields)
                fh.write(f"{tag}\t{rep.fold_id}\t{row}\n")

    # wall time is hardware-dependent and deliberately not part of the
    # deterministic report set
    with open(os.path.join(out_dir, "timing.tsv"), "w") as fh:
        fh.write("model\twall_time_seconds\n")
        for tag, result in sorted(results.items()):
            fh.write(f"{tag}\t{result.wall_time:.3f}\n")

    if transcript is not None:
        write_transcript(transcript, os.path.join(out_dir, "transcript_fold0.log"))
