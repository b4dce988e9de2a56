import json
from pathlib import Path

import numpy as np
import pytest

from congrad import io
from congrad.config import ExperimentConfig
from congrad.errors import ConfigError, ReportParseError
from congrad.harness import analysis, runner
from congrad.harness.cli import main
from congrad.selfloop import build_scenario, run_experiment

SMALL = {"languages": ["en", "de", "fr"], "prompts_per_language": 16, "heldout_per_language": 8, "rounds": 3}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# ---------------------------------------------------------------- config

def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(languages=("a", "b"), lr=0.05, seed=3)
    assert ExperimentConfig.from_dict(json.loads(cfg.to_json())) == cfg
    cfg.save(tmp_path / "c.json")
    assert ExperimentConfig.load(tmp_path / "c.json") == cfg


def test_default_config_values():
    cfg = ExperimentConfig()
    assert (cfg.k, cfg.batch_size, cfg.ema.rank, cfg.ema.power_iters, cfg.filter.retain_fraction) == (4, 16, 64, 3, 0.5)
    assert len(cfg.languages) == 10 and cfg.prompts_per_language == 100 and cfg.rounds == 5


@pytest.mark.parametrize("bad,field", [({"prompts_per_language": 0}, "prompts_per_language"),
                                       ({"rounds": 0}, "rounds"), ({"languages": []}, "languages"),
                                       ({"nope": 1}, "nope"), ({"ema": {"rank": 0}}, "ema"),
                                       ({"filter": {"colour": 1}}, "filter.colour"), ({"k": 1}, "k")])
def test_config_field_errors(bad, field):
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(bad)
    assert exc.value.field == field


# ---------------------------------------------------------------- io

def test_policy_and_checkpoint_round_trip(tmp_path):
    cfg = ExperimentConfig(**{**SMALL, "rounds": 2})
    sc = build_scenario(cfg)
    io.save_policy(tmp_path / "p.ckpt", sc.initial_policy)
    assert np.array_equal(io.load_policy(tmp_path / "p.ckpt").flat(), sc.initial_policy.flat())
    state = run_experiment(cfg, sc)["final_state"]
    io.save_round_checkpoint(tmp_path / "r.ckpt", state, cfg.to_json())
    back, meta = io.load_round_checkpoint(tmp_path / "r.ckpt")
    assert back.round == state.round and meta["completed_round"] == 2
    assert np.array_equal(back.consensus_prev.vector, state.consensus_prev.vector)
    assert back.consensus_steps == state.consensus_steps
    io.save_round_checkpoint(tmp_path / "r2.ckpt", back, cfg.to_json())
    assert (tmp_path / "r.ckpt").read_bytes() == (tmp_path / "r2.ckpt").read_bytes()


def test_array_file_rejects_wrong_format(tmp_path):
    io.save_policy(tmp_path / "p.ckpt", build_scenario(ExperimentConfig(**SMALL)).initial_policy)
    with pytest.raises(Exception):
        io.load_stores(tmp_path / "p.ckpt")
    (tmp_path / "junk").write_bytes(b"hello")
    with pytest.raises(Exception):
        io.load_policy(tmp_path / "junk")


def test_jsonl_header_and_parse_errors(tmp_path):
    p = tmp_path / "m.jsonl"
    io.write_jsonl(p, io.METRICS_FORMAT, [{"round": 1}, {"round": 2}])
    assert [r for _, r in io.read_jsonl(p, io.METRICS_FORMAT)] == [{"round": 1}, {"round": 2}]
    with pytest.raises(ReportParseError, match=":1:"):
        io.read_jsonl(p, io.FILTER_REPORT_FORMAT)
    p.write_text(p.read_text() + "[1, 2]\n")
    with pytest.raises(ReportParseError, match=":4:"):
        io.read_jsonl(p, io.METRICS_FORMAT)


# ---------------------------------------------------------------- CLI

def test_gen_data_counts_and_idempotence(tmp_path):
    out = tmp_path / "run"
    assert main(["gen-data", "--out", str(out)]) == 0
    recs = [r for _, r in io.read_jsonl(out / "data" / "prompts.jsonl", io.PROMPTS_FORMAT)]
    assert len(recs) == 1000
    counts = {}
    for r in recs:
        counts[r["language"]] = counts.get(r["language"], 0) + 1
    assert len(counts) == 10 and set(counts.values()) == {100}
    first = tree_bytes(out / "data")
    assert main(["gen-data", "--out", str(out)]) == 0
    assert tree_bytes(out / "data") == first


def test_validation_exit_codes(tmp_path, cfg_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"prompts_per_language": 0}))
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert "prompts_per_language" in capsys.readouterr().err
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "nodata")]) == 1
    assert "gen-data" in capsys.readouterr().err
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path), "--arm", "bogus"]) == 1
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_lock_gives_runtime_exit(tmp_path, cfg_path):
    out = tmp_path / "run"
    assert main(["gen-data", "--config", str(cfg_path), "--out", str(out)]) == 0
    (out / "random").mkdir()
    (out / "random" / ".lock").write_text("123")
    assert main(["train", "--config", str(cfg_path), "--out", str(out), "--arm", "random"]) == 2


def test_train_outputs(tmp_path, cfg_path):
    out = tmp_path / "run"
    main(["gen-data", "--config", str(cfg_path), "--out", str(out)])
    assert main(["train", "--config", str(cfg_path), "--out", str(out), "--arm", "congrad-max"]) == 0
    arm = out / "congrad-max"
    assert len(list((arm / "checkpoints").glob("*.ckpt"))) == 3
    metrics = analysis.load_metrics(arm)
    assert len(metrics) == 3 * 3
    for m in metrics:
        assert 0.0 <= m["preference_accuracy"] <= 1.0 and m["retained_count"] >= 0 and m["conflict_count"] >= 0
    manifest = json.loads((arm / "manifest.json").read_text())
    assert manifest["status"] == "complete" and manifest["rounds_completed"] == 3
    conflicts = [r for _, r in io.read_jsonl(arm / "conflicts.jsonl", io.CONFLICT_REPORT_FORMAT)]
    assert all(set(r) == {"round", "pair", "cosine", "projected"} for r in conflicts)
    report = [r for _, r in io.read_jsonl(arm / "filter_report.jsonl", io.FILTER_REPORT_FORMAT)]
    assert {r["round"] for r in report} == {2, 3}
    assert set(report[0]) == {"round", "language", "sample_id", "kind", "score", "retained"}


def test_arms_differ_only_in_selection(tmp_path, cfg_path):
    out = tmp_path / "run"
    main(["gen-data", "--config", str(cfg_path), "--out", str(out)])
    for arm in ("congrad-max", "random"):
        assert main(["train", "--config", str(cfg_path), "--out", str(out), "--arm", arm]) == 0
    pa = (out / "congrad-max" / "pairs" / "round_001.jsonl").read_bytes()
    assert pa == (out / "random" / "pairs" / "round_001.jsonl").read_bytes()
    fa = [r for _, r in io.read_jsonl(out / "congrad-max" / "filter_report.jsonl", io.FILTER_REPORT_FORMAT)]
    fr = [r for _, r in io.read_jsonl(out / "random" / "filter_report.jsonl", io.FILTER_REPORT_FORMAT)]
    r2a = {(r["language"], r["sample_id"]) for r in fa if r["round"] == 2}
    r2r = {(r["language"], r["sample_id"]) for r in fr if r["round"] == 2}
    assert r2a == r2r  # same candidate pool in round 2
    kept = lambda rs: {(r["language"], r["sample_id"]) for r in rs if r["round"] == 2 and r["retained"]}
    assert kept(fa) != kept(fr)


def test_resume_is_byte_identical(tmp_path, cfg_path):
    out = tmp_path / "run"
    main(["gen-data", "--config", str(cfg_path), "--out", str(out)])
    main(["train", "--config", str(cfg_path), "--out", str(out), "--arm", "congrad-max"])
    full = tree_bytes(out / "congrad-max")
    assert main(["train", "--config", str(cfg_path), "--out", str(out), "--arm", "congrad-max",
                 "--stop-after", "1"]) == 0
    assert json.loads((out / "congrad-max" / "manifest.json").read_text())["status"] == "partial"
    assert main(["train", "--config", str(cfg_path), "--out", str(out), "--arm", "congrad-max", "--resume"]) == 0
    assert tree_bytes(out / "congrad-max") == full


def test_failure_leaves_partial_manifest(tmp_path, cfg_path, monkeypatch):
    out = tmp_path / "run"
    main(["gen-data", "--config", str(cfg_path), "--out", str(out)])
    import congrad.selfloop as sl
    real = sl.run_round

    def flaky(state, scenario, cfg):
        if state.round == 2:
            raise RuntimeError("disk on fire")
        return real(state, scenario, cfg)
    monkeypatch.setattr(sl, "run_round", flaky)
    assert main(["train", "--config", str(cfg_path), "--out", str(out), "--arm", "random"]) == 2
    manifest = json.loads((out / "random" / "manifest.json").read_text())
    assert manifest["status"] == "partial" and manifest["rounds_completed"] == 1
    assert "disk on fire" in manifest["error"]
    assert not (out / "random" / ".lock").exists()


def test_seed_flag_changes_data(tmp_path):
    main(["gen-data", "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["gen-data", "--out", str(tmp_path / "b"), "--seed", "2"])
    a = (tmp_path / "a" / "data" / "prompts.jsonl").read_bytes()
    assert a != (tmp_path / "b" / "data" / "prompts.jsonl").read_bytes()


def test_train_refuses_mismatched_data(tmp_path, cfg_path):
    out = tmp_path / "run"
    main(["gen-data", "--config", str(cfg_path), "--out", str(out)])
    assert main(["train", "--config", str(cfg_path), "--out", str(out), "--seed", "9"]) == 1


# ---------------------------------------------------------------- analysis

@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("arms")
    cfg = ExperimentConfig.from_dict(SMALL)
    runner.gen_data(cfg, out)
    dirs = {arm: runner.train(runner.apply_arm(cfg, arm), out) for arm in ("congrad-max", "random")}
    return out, dirs


def test_filter_analyze_structure(trained):
    out, dirs = trained
    records = analysis.load_filter_report(dirs["congrad-max"] / "filter_report.jsonl")
    res = analysis.filter_analyze(records, (0.25, 0.5, 0.75, 1.0))
    for g in res["groups"]:
        assert sum(g["histogram"]["counts"]) == g["n"]
        for s in g["sweep"]:
            assert s["retained_count"] == s["quota"] == max(1, -(-int(s["rho"] * 100) * g["n"] // 100))
        assert g["sweep"][-1]["retention_rate"] == 1.0
        assert g["sweep"][1]["jaccard_vs_recorded"] == 1.0  # recorded run used rho = 0.5


def test_filter_analyze_cli(trained, tmp_path, capsys):
    out, dirs = trained
    assert main(["filter-analyze", str(dirs["congrad-max"]), "--rho", "1.0", "--output", str(tmp_path / "a.json")]) == 0
    res = json.loads((tmp_path / "a.json").read_text())
    assert all(s["retention_rate"] == 1.0 for g in res["groups"] for s in g["sweep"])


def test_filter_analyze_line_numbered_errors(tmp_path, capsys):
    p = tmp_path / "f.jsonl"
    p.write_text('{"format":"congrad.filter-report","version":1}\n'
                 '{"round":2,"language":"en","sample_id":1,"kind":"congrad","score":0.1,"retained":true}\n'
                 '{"round":2,"language":"en","sample_id":2,"kind":"congrad","retained":true}\n')
    with pytest.raises(ReportParseError, match=":3:.*score"):
        analysis.load_filter_report(p)
    assert main(["filter-analyze", str(p)]) == 1
    assert ":3:" in capsys.readouterr().err


def test_report_tables(trained, tmp_path):
    out, dirs = trained
    assert main(["report", str(dirs["congrad-max"]), str(dirs["random"]), "--output", str(tmp_path / "r")]) == 0
    text = (tmp_path / "r" / "report.md").read_text()
    assert "| arm | round 1 | round 2 | round 3 |" in text
    assert text.count("| congrad-max |") == 4 and text.count("| random |") == 4
    metrics = analysis.load_metrics(dirs["random"])
    for m in metrics:
        assert repr(m["mean_lp_dpo_loss"]) in (tmp_path / "r" / "series_random.csv").read_text()
    joint = analysis.round_table(metrics)[0]["joint_loss"]
    assert repr(joint) in text
    # idempotent
    first = tree_bytes(tmp_path / "r")
    main(["report", str(dirs["congrad-max"]), str(dirs["random"]), "--output", str(tmp_path / "r")])
    assert tree_bytes(tmp_path / "r") == first


def test_report_single_round_and_empty(tmp_path):
    rec = {"round": 1, "language": "en", "preference_accuracy": 0.5, "mean_lp_dpo_loss": 0.7,
           "retained_count": 3, "pair_count": 3, "conflict_count": 0}
    text = analysis.render_report({"one": [rec]})
    assert "| arm | round 1 |" in text and "| one | 0.7 |" in text
    assert "Empty report" in analysis.render_report({"none": []})
    p = tmp_path / "m.jsonl"
    io.write_jsonl(p, io.METRICS_FORMAT, [])
    assert main(["report", str(p), "--output", str(tmp_path / "r")]) == 0
    assert "Empty report" in (tmp_path / "r" / "report.md").read_text()
