import json
import os

import numpy as np
import pytest

from fedgbt.cli import main as cli_main
from fedgbt.data import SynthConfig
from fedgbt.experiment import (
    SCENARIO_HFL,
    SCENARIO_VFL,
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    run_experiment,
)
from fedgbt.gbt import GbtParams
from fedgbt.hfl import SECAGG_MASK_ONLY


def small_synth(seed=0):
    from fedgbt.data import DistrictSpec, DISTRICT_A_STATS, DISTRICT_B_STATS

    return SynthConfig(
        districts=(
            DistrictSpec("A", 40, 0.35, DISTRICT_A_STATS),
            DistrictSpec("B", 80, 0.69, DISTRICT_B_STATS),
        ),
        seed=seed,
    )


def fast_params(**kw):
    base = dict(n_estimators=2, max_depth=2, max_bin=8, reg_lambda=1.0,
                min_child_weight=1.0)
    base.update(kw)
    return GbtParams(**base)


def hfl_config(seed=0, regimes=("separate", "federated", "centralized"), **kw):
    return ExperimentConfig(
        scenario=SCENARIO_HFL,
        regimes=tuple(regimes),
        params=fast_params(),
        synth=small_synth(seed),
        k_folds=3,
        seed=seed,
        secagg_mode=SECAGG_MASK_ONLY,
        **kw,
    )


@pytest.fixture(scope="module")
def hfl_report():
    return run_experiment(hfl_config(seed=1))


def test_all_regimes_complete(hfl_report):
    assert set(hfl_report.regimes) == {"separate:A", "separate:B", "federated", "centralized"}
    for result in hfl_report.regimes.values():
        assert result.error is None
        assert len(result.per_fold) == 3
        assert result.averaged is not None


def test_federated_close_to_centralized(hfl_report):
    fed = hfl_report.regimes["federated"]
    central = hfl_report.regimes["centralized"]
    for f_rep, c_rep in zip(fed.per_fold, central.per_fold):
        for metric in ("auc", "accuracy", "f1"):
            assert abs(getattr(f_rep, metric) - getattr(c_rep, metric)) <= 0.005


def test_regime_failure_is_isolated_and_reported():
    # a modulus too small for the fixed-point capacity aborts the federated
    # regime while the plaintext regimes still complete
    config = ExperimentConfig(
        scenario=SCENARIO_HFL,
        regimes=("separate", "federated", "centralized"),
        params=fast_params(),
        synth=small_synth(6),
        k_folds=2,
        seed=6,
        secagg_mode="paillier+mask",
        key_bits=32,
    )
    report = run_experiment(config)
    assert report.regimes["federated"].error is not None
    assert report.regimes["centralized"].error is None
    assert report.regimes["centralized"].averaged is not None


def test_privacy_cost_rows_present_and_consistent(hfl_report):
    kinds = {(c.kind, c.metric) for c in hfl_report.privacy_costs}
    assert ("federated", "auc") in kinds
    assert any(k == "open_share" and m.startswith("auc[") for k, m in kinds)
    central = hfl_report.regimes["centralized"].averaged
    fed = hfl_report.regimes["federated"].averaged
    fed_auc_cost = next(
        c for c in hfl_report.privacy_costs if c.kind == "federated" and c.metric == "auc"
    )
    assert fed_auc_cost.cost == pytest.approx(central.auc - fed.auc, abs=1e-12)


def test_averaged_rows_are_fold_means(hfl_report):
    for result in hfl_report.regimes.values():
        for metric in ("auc", "accuracy", "f1"):
            values = [getattr(r, metric) for r in result.per_fold]
            assert getattr(result.averaged, metric) == pytest.approx(
                float(np.mean(values)), abs=1e-12
            )


def test_byte_accounting_only_for_federated(hfl_report):
    assert hfl_report.regimes["federated"].bytes_by_role
    assert not hfl_report.regimes["centralized"].bytes_by_role
    sent = hfl_report.regimes["federated"].bytes_by_role
    assert sent.get("server", 0) > 0 and any(k != "server" for k in sent)


def test_separate_only_run_has_no_privacy_rows():
    report = run_experiment(hfl_config(seed=2, regimes=("separate",)))
    assert report.privacy_costs == []
    assert set(report.regimes) == {"separate:A", "separate:B"}


def test_reports_are_deterministic(tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    r1 = run_experiment(hfl_config(seed=3), out_dir=str(out1))
    r2 = run_experiment(hfl_config(seed=3), out_dir=str(out2))
    assert r1.fold_plan_hash == r2.fold_plan_hash
    for name in ("report.json", "summary.tsv", "folds.tsv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name
    for tag in r1.regimes:
        assert r1.regimes[tag].model_hashes == r2.regimes[tag].model_hashes


def test_vfl_scenario_runs_end_to_end():
    config = ExperimentConfig(
        scenario=SCENARIO_VFL,
        regimes=("separate", "federated", "centralized"),
        params=fast_params(),
        synth=small_synth(4),
        k_folds=2,
        seed=4,
        key_bits=256,
    )
    report = run_experiment(config)
    assert set(report.regimes) == {
        "separate:exploration_institute", "separate:oil_company",
        "federated", "centralized",
    }
    for result in report.regimes.values():
        assert result.error is None, result.error
    fed = report.regimes["federated"]
    central = report.regimes["centralized"]
    for f_rep, c_rep in zip(fed.per_fold, central.per_fold):
        assert abs(f_rep.auc - c_rep.auc) <= 0.005


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(scenario="other")
    with pytest.raises(ConfigError):
        ExperimentConfig(regimes=("federated",), tuning="direct_bo")
    with pytest.raises(ConfigError):
        ExperimentConfig(regimes=())
    config = config_from_dict({
        "scenario": "hfl_case_one",
        "regimes": ["centralized"],
        "params": {"n_estimators": 3},
        "data": {"synth": {"seed": 5}},
    })
    assert config.params.n_estimators == 3
    assert config.synth.seed == 5


# ---------------------------------------------------------------------------
# CLI


def write_cli_config(path, seed=0, k_folds=2):
    doc = {
        "scenario": "hfl_case_one",
        "regimes": ["separate", "federated", "centralized"],
        "params": {"n_estimators": 2, "max_depth": 2, "max_bin": 8, "reg_lambda": 1.0},
        "data": {"synth": {"seed": seed}},
        "k_folds": k_folds,
        "seed": seed,
        "secagg": "mask-only",
    }
    path.write_text(json.dumps(doc))
    return str(path)


def test_cli_synth_deterministic(tmp_path):
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    assert cli_main(["synth", "--seed", "7", "--out", str(out1)]) == 0
    assert cli_main(["synth", "--seed", "7", "--out", str(out2)]) == 0
    for name in ("district_A.csv", "district_B.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_cli_synth_accepts_district_overrides(tmp_path):
    doc = {
        "seed": 5,
        "districts": [
            {"name": "A", "n_samples": 30, "positive_rate": 0.4},
            {"name": "B", "n_samples": 50, "positive_rate": 0.6},
        ],
    }
    cfg = tmp_path / "synth.json"
    cfg.write_text(json.dumps(doc))
    out = tmp_path / "data"
    assert cli_main(["synth", "--seed", "5", "--config", str(cfg),
                     "--out", str(out)]) == 0
    from fedgbt.data import load_csv

    a = load_csv(str(out / "district_A.csv"))
    b = load_csv(str(out / "district_B.csv"))
    assert a.n_samples == 30 and b.n_samples == 50
    assert abs(a.labels.mean() - 0.4) <= 0.05


def test_random_margin_initialization_mode():
    # the seeded random-start alternative to the deterministic base score
    from fedgbt.data import PartyDataset
    from fedgbt.gbt import initial_margins, train_centralized

    params = fast_params(random_init_scale=0.1)
    m1 = initial_margins(20, params, seed=3)
    m2 = initial_margins(20, params, seed=3)
    m3 = initial_margins(20, params, seed=4)
    np.testing.assert_array_equal(m1, m2)
    assert not np.array_equal(m1, m3)
    assert np.std(m1) > 0
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 2))
    y = (X[:, 0] > 0).astype(int)
    data = PartyDataset("p", np.arange(30), X, ("a", "b"), y)
    t1 = train_centralized(data, params, seed=3)
    t2 = train_centralized(data, params, seed=3)
    from fedgbt.gbt import model_to_json

    assert model_to_json(t1) == model_to_json(t2)


def test_cli_keygen_writes_hex_key_files(tmp_path):
    assert cli_main(["keygen", "--key-bits", "256", "--seed", "3",
                     "--out", str(tmp_path)]) == 0
    public = json.loads((tmp_path / "public_key.json").read_text())
    private = json.loads((tmp_path / "private_key.json").read_text())
    assert public["kind"] == "paillier-public"
    assert int(public["n"], 16) == int(private["n"], 16)
    assert int(private["lambda"], 16) > 0


def test_cli_compare_is_byte_deterministic(tmp_path):
    config = write_cli_config(tmp_path / "cfg.json", seed=11)
    out1, out2 = tmp_path / "c1", tmp_path / "c2"
    assert cli_main(["compare", "--config", config, "--out", str(out1)]) == 0
    assert cli_main(["compare", "--config", config, "--out", str(out2)]) == 0
    for name in ("report.json", "summary.tsv", "folds.tsv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    r1 = json.loads((out1 / "report.json").read_text())
    r2 = json.loads((out2 / "report.json").read_text())
    for tag in r1["regimes"]:
        assert r1["regimes"][tag]["model_hashes"] == r2["regimes"][tag]["model_hashes"]


def test_cli_train_federated_writes_model_and_transcript(tmp_path):
    config = write_cli_config(tmp_path / "cfg.json", seed=12)
    out = tmp_path / "train"
    assert cli_main(["train", "--config", config, "--regime", "federated",
                     "--out", str(out)]) == 0
    assert (out / "model.json").exists()
    assert (out / "transcript.log").exists()
    assert cli_main(["inspect-transcript", str(out / "transcript.log")]) == 0


def test_cli_evaluate_saved_model(tmp_path, capsys):
    config = write_cli_config(tmp_path / "cfg.json", seed=13)
    out = tmp_path / "m"
    assert cli_main(["train", "--config", config, "--regime", "centralized",
                     "--out", str(out)]) == 0
    assert cli_main(["synth", "--seed", "13", "--out", str(tmp_path)]) == 0
    capsys.readouterr()  # drop the train/synth progress lines
    code = cli_main(["evaluate", "--model", str(out / "model.json"),
                     "--data", str(tmp_path / "district_A.csv")])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert 0.0 <= doc["auc"] <= 1.0


def test_cli_usage_errors_exit_1():
    assert cli_main(["--definitely-not-a-flag"]) == 1
    assert cli_main(["compare"]) == 1  # missing required args


def test_cli_runtime_errors_exit_2(tmp_path):
    missing = str(tmp_path / "nope.json")
    assert cli_main(["compare", "--config", missing, "--out", str(tmp_path / "o")]) == 2


def test_cli_tune_writes_fold_table(tmp_path):
    doc = {
        "scenario": "hfl_case_one",
        "regimes": ["centralized"],
        "params": {"n_estimators": 2, "max_depth": 2, "max_bin": 8, "reg_lambda": 1.0},
        "data": {"synth": {"seed": 9}},
        "k_folds": 2,
        "seed": 9,
        "secagg": "mask-only",
        "bo_budget": 6,
    }
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(doc))
    out = tmp_path / "tuned"
    assert cli_main(["tune", "--config", str(cfg), "--mode", "aggregated",
                     "--out", str(out)]) == 0
    table = (out / "tuned.tsv").read_text().splitlines()
    assert table[0].startswith("hyperparameter\t1\t2")
    assert any(line.startswith("learning_rate") for line in table)
    tuned = json.loads((out / "tuned.json").read_text())
    assert len(tuned) == 2
    assert all(t["provenance"] == "aggregated" for t in tuned)
