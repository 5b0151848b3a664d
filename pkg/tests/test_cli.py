import json

import pytest

from obdistill.cli import main, read_config_file
from obdistill.codegen import parse_program
from obdistill.envs import make_env

SMALL = ["--iters", "2", "--transitions", "2000", "--eval-episodes", "3"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def pong_run(tmp_path, capsys):
    out = tmp_path / "pong"
    code, _, _ = run(capsys, "distill", "--env", "toypong", "--oracle", "builtin:tracker",
                     "--leaves", "4", *SMALL, "--out", str(out))
    assert code == 0
    return out


def test_distill_writes_artifacts(pong_run):
    names = sorted(p.name for p in pong_run.iterdir())
    assert names == ["importances.json", "mask_report.json", "program.py", "program_ast.json",
                     "run_report.json", "tree.json"]


def test_distill_root_condition(pong_run):
    env = make_env("toypong")
    prog = parse_program((pong_run / "program.py").read_text(), env.feature_names,
                         env.action_spec.names)
    assert prog.cond.expr.render() == "ball.y - player.y"
    assert prog.cond.op == "<="
    assert abs(prog.cond.threshold) <= 0.05


def test_run_report_fields(pong_run):
    report = json.loads((pong_run / "run_report.json").read_text())
    assert report["config"]["iters"] == 2
    assert len(report["iterations"]) == 2
    for rec in report["iterations"]:
        assert {"dataset_size", "fit_seconds", "eval_mean", "eval_std"} <= set(rec)
    assert report["oracle_normalized_score"] == pytest.approx(
        report["best_eval_mean"] / report["oracle_eval_mean"])


def test_leaves_one_is_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, "distill", "--env", "toypong", "--oracle", "builtin:tracker",
                       "--leaves", "1", "--out", str(tmp_path))
    assert code == 2
    assert json.loads(err)["error"] == "UsageError"


def test_default_budget():
    from obdistill.cli import DEFAULTS
    assert DEFAULTS["iters"] == 10 and DEFAULTS["transitions"] == 10_000


def test_config_file_and_flag_precedence(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("OBDISTILL_SEED", raising=False)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# budget\niters = 1\ntransitions = 1500\nleaves = 3\nseed = 5\n")
    assert read_config_file(cfg)["transitions"] == 1500
    out = tmp_path / "r"
    code, _, _ = run(capsys, "distill", "--env", "toypong", "--oracle", "builtin:tracker",
                     "--config", str(cfg), "--leaves", "4", "--eval-episodes", "2", "--out", str(out))
    assert code == 0
    conf = json.loads((out / "run_report.json").read_text())["config"]
    assert (conf["iters"], conf["transitions"], conf["leaves"], conf["seed"]) == (1, 1500, 4, 5)


def test_env_seed_overrides_flag(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("OBDISTILL_SEED", "77")
    out = tmp_path / "r"
    run(capsys, "distill", "--env", "toypong", "--oracle", "builtin:tracker", "--seed", "3",
        "--iters", "1", "--transitions", "1000", "--eval-episodes", "2", "--out", str(out))
    assert json.loads((out / "run_report.json").read_text())["config"]["seed"] == 77


def test_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    code, _, err = run(capsys, "distill", "--env", "toypong", "--oracle", "builtin:tracker",
                       "--config", str(cfg), "--out", str(tmp_path / "x"))
    assert code == 2 and "colour" in json.loads(err)["message"]


def test_eval_oracle_against_itself(capsys):
    code, out, _ = run(capsys, "eval", "--env", "toypong", "--policy", "builtin:tracker",
                       "--baseline", "builtin:tracker", "--episodes", "4")
    report = json.loads(out)
    assert code == 0
    assert report["normalized_score"] == 1.0 and report["std_return"] == 0.0


def test_eval_edited_crop_program(tmp_path, capsys):
    out = tmp_path / "crop"
    run(capsys, "distill", "--env", "cropsim", "--oracle", "builtin:crop", "--leaves", "8",
        "--iters", "2", "--transitions", "4000", "--eval-episodes", "2", "--out", str(out))
    text = (out / "program.py").read_text()
    lines = text.splitlines()
    lines.insert(1, "    if days_after_planting <= 10.0:")
    lines.insert(2, '        return "apply_0"')
    edited = tmp_path / "edited.py"
    edited.write_text("\n".join(lines) + "\n")
    code, report_text, _ = run(capsys, "eval", "--env", "cropsim", "--policy", str(edited),
                               "--compare", str(out / "program.py"), "--episodes", "3")
    report = json.loads(report_text)
    assert code == 0
    assert 0.0 <= report["agreement"]["fraction"] <= 1.0
    code, report_text, _ = run(capsys, "eval", "--env", "cropsim", "--policy", str(out / "program.py"),
                               "--episodes", "3")
    assert code == 0 and "mean_return" in json.loads(report_text)


def test_eval_unknown_extension(tmp_path, capsys):
    path = tmp_path / "policy.pkl"
    path.write_bytes(b"\x80")
    code, _, err = run(capsys, "eval", "--env", "toypong", "--policy", str(path))
    assert code == 1 and json.loads(err)["error"] == "LoadError"


def test_eval_tree_and_program_agree(pong_run, capsys):
    _, out_tree, _ = run(capsys, "eval", "--env", "toypong", "--policy", str(pong_run / "tree.json"))
    _, out_prog, _ = run(capsys, "eval", "--env", "toypong", "--policy", str(pong_run / "program.py"))
    assert json.loads(out_tree)["returns"] == json.loads(out_prog)["returns"]


def test_bench_inference(pong_run, capsys):
    code, out, _ = run(capsys, "bench-inference", "--policy", str(pong_run / "tree.json"),
                       "--samples", "1000")
    report = json.loads(out)
    assert code == 0 and report["agreement"] == 1.0
    for rep in ("tree", "program", "python"):
        stats = report["latency"][rep]
        assert 0 < stats["p50_us"] <= stats["p99_us"]


def test_bench_rejects_small_samples(pong_run, capsys):
    code, _, err = run(capsys, "bench-inference", "--policy", str(pong_run / "tree.json"),
                       "--samples", "0")
    assert code == 2 and json.loads(err)["error"] == "UsageError"


def test_mask_report(capsys):
    code, out, _ = run(capsys, "mask-report", "--env", "toypong", "--oracle", "builtin:tracker",
                       "--transitions", "1000")
    report = json.loads(out)
    assert code == 0 and sorted(report["dropped"]) == ["enemy.x", "player.x"]


def test_importances(pong_run, capsys):
    code, out, _ = run(capsys, "importances", "--policy", str(pong_run / "tree.json"))
    rows = json.loads(out)
    assert code == 0
    top = max(rows, key=lambda r: r["importance"])
    assert top["feature"] == "ball.y - player.y"
    assert sum(r["importance"] for r in rows) == pytest.approx(1.0)


def test_no_temp_files_left(pong_run):
    assert not [p for p in pong_run.iterdir() if p.name.startswith(".")]


def test_missing_oracle_file(tmp_path, capsys):
    code, _, err = run(capsys, "distill", "--env", "toypong", "--oracle", str(tmp_path / "none.json"),
                       "--out", str(tmp_path / "o"))
    assert code == 1 and "error" in json.loads(err)
