import json
from pathlib import Path

import pytest

from neodefence import cli


def run(*argv):
    return cli.main([str(a) for a in argv])


def gen(out, seed=7, split=0, poison="0.10", per_class=10, extra=()):
    return run(
        "gen-dataset", "--classes", 5, "--per-class", per_class,
        "--trigger", "square", "--trigger-size", 4, "--trigger-pos", "26,26",
        "--target", 0, "--poison-fraction", poison, "--split", split,
        "--seed", seed, "--out", out, *extra,
    )


def read_tree(directory):
    return {
        p.name: p.read_bytes()
        for p in sorted(Path(directory).iterdir())
        if p.is_file()
    }


# --- seeds and usage -----------------------------------------------------------


def test_missing_seed_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc_info:
        run("gen-dataset", "--out", tmp_path / "d")
    assert exc_info.value.code == cli.EXIT_USAGE
    assert "--seed" in capsys.readouterr().err


def test_entropy_substitutes_for_seed(tmp_path):
    assert run("gen-dataset", "--per-class", 2, "--poison-fraction", "0",
               "--entropy", "--out", tmp_path / "d") == cli.EXIT_OK


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc_info:
        run("no-such-command")
    assert exc_info.value.code == cli.EXIT_USAGE


def test_bad_dims_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc_info:
        run("gen-dataset", "--dims", "32by32", "--seed", 0, "--out", tmp_path / "d")
    assert exc_info.value.code == cli.EXIT_USAGE


# --- gen-dataset -----------------------------------------------------------------


def test_gen_dataset_deterministic(tmp_path):
    assert gen(tmp_path / "a") == cli.EXIT_OK
    assert gen(tmp_path / "b") == cli.EXIT_OK
    assert read_tree(tmp_path / "a") == read_tree(tmp_path / "b")
    assert gen(tmp_path / "c", seed=8) == cli.EXIT_OK
    assert read_tree(tmp_path / "a") != read_tree(tmp_path / "c")


def test_gen_dataset_poison_counts(tmp_path):
    gen(tmp_path / "none", poison="0")
    man = json.loads((tmp_path / "none" / "manifest.json").read_text())
    assert sum(e["poisoned"] for e in man["entries"]) == 0

    gen(tmp_path / "tenth", poison="0.10", per_class=20)  # 100 images
    man = json.loads((tmp_path / "tenth" / "manifest.json").read_text())
    assert len(man["entries"]) == 100
    assert sum(e["poisoned"] for e in man["entries"]) == 10


def test_gen_dataset_rejects_oversized_trigger(tmp_path, capsys):
    rc = run("gen-dataset", "--trigger-size", 11, "--trigger-pos", "0,0",
             "--seed", 0, "--out", tmp_path / "d")
    assert rc == cli.EXIT_USAGE
    assert "localized" in capsys.readouterr().err


def test_gen_dataset_stream_size_truncates(tmp_path):
    gen(tmp_path / "d", poison="0", extra=("--stream-size", "7"))
    man = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert len(man["entries"]) == 7


# --- pipeline fixture -------------------------------------------------------------


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-dataset -> calibrate -> defend -> evaluate over one small world."""
    root = tmp_path_factory.mktemp("pipeline")
    stream, ref, out = root / "stream", root / "ref", root / "out"
    assert gen(stream, seed=7, split=0, poison="0.10", per_class=10) == cli.EXIT_OK
    assert gen(ref, seed=7, split=1, poison="0") == cli.EXIT_OK

    oracle = f"simlab:{stream}"
    assert run("calibrate", "--oracle", oracle, "--reference", ref,
               "--blocker", "4x4", "--trials", 2, "--samples", 25,
               "--seed", 7, "--out", out) == cli.EXIT_OK
    assert run("defend", "--oracle", oracle, "--input", stream,
               "--reference", ref, "--seed", 7, "--out", out) == cli.EXIT_OK
    assert run("evaluate", "--report", out / "report.json",
               "--manifest", stream / "manifest.json",
               "--seed", 7, "--out", out) == cli.EXIT_OK
    return {"root": root, "stream": stream, "ref": ref, "out": out}


def test_calibration_output(pipeline):
    cal = json.loads((pipeline["out"] / "calibration.json").read_text())
    assert cal["r_av"] <= 0.05
    assert cal["interval"] is not None
    lo, hi = cal["interval"]
    assert lo < hi


def test_defend_report_contents(pipeline):
    report = json.loads((pipeline["out"] / "report.json").read_text())
    man = json.loads((pipeline["stream"] / "manifest.json").read_text())
    truth = {e["file"]: e["poisoned"] for e in man["entries"]}
    assert len(report["verdicts"]) == len(man["entries"])
    for v in report["verdicts"]:
        assert (v["status"] == "backdoored") == truth[v["id"]]
    assert report["trigger_position"] == [26, 26] or (
        abs(report["trigger_position"][0] - 26) < 4
        and abs(report["trigger_position"][1] - 26) < 4
    )
    assert report["aborted"] is None
    recon_dir = pipeline["out"] / "reconstruction"
    assert (recon_dir / "reconstructed_trigger.png").exists()


def test_evaluate_output(pipeline):
    ev = json.loads((pipeline["out"] / "evaluation.json").read_text())
    man = json.loads((pipeline["stream"] / "manifest.json").read_text())
    poisoned = sum(e["poisoned"] for e in man["entries"])
    conf = ev["confusion"]["confirmed"]
    assert conf["tp"] == poisoned and conf["fn"] == 0 and conf["fp"] == 0
    assert conf["tn"] == len(man["entries"]) - poisoned
    for row in ev["mitigation"]:
        assert row["ji_fix"] == 1.0
    text = (pipeline["out"] / "evaluation.txt").read_text()
    assert "confirmed" in text


def test_defend_byte_identical_across_runs(pipeline):
    out2 = pipeline["root"] / "out2"
    assert run("defend", "--oracle", f"simlab:{pipeline['stream']}",
               "--input", pipeline["stream"], "--reference", pipeline["ref"],
               "--seed", 7, "--out", out2) == cli.EXIT_OK
    a = (pipeline["out"] / "report.json").read_bytes()
    b = (out2 / "report.json").read_bytes()
    assert a == b


# --- failure exit codes --------------------------------------------------------------


def test_defend_missing_reference_exit_3(tmp_path, capsys):
    stream = tmp_path / "stream"
    gen(stream, poison="0")
    rc = run("defend", "--oracle", f"simlab:{stream}", "--input", stream,
             "--reference", tmp_path / "nowhere", "--seed", 0,
             "--out", tmp_path / "out")
    assert rc == cli.EXIT_MISSING_REFERENCE
    assert "reference" in capsys.readouterr().err


def test_calibrate_missing_reference_exit_3(tmp_path):
    rc = run("calibrate", "--oracle", "simlab:/nonexistent",
             "--reference", tmp_path / "nowhere", "--blocker", "4x4",
             "--seed", 0, "--out", tmp_path / "out")
    assert rc == cli.EXIT_MISSING_REFERENCE


def test_bad_oracle_spec_exit_2(tmp_path, capsys):
    ref = tmp_path / "ref"
    gen(ref, poison="0")
    rc = run("calibrate", "--oracle", "http://nope", "--reference", ref,
             "--blocker", "4x4", "--seed", 0, "--out", tmp_path / "out")
    assert rc == cli.EXIT_ORACLE
    assert "oracle" in capsys.readouterr().err


def test_broken_subprocess_oracle_exit_2(tmp_path):
    ref = tmp_path / "ref"
    gen(ref, poison="0")
    rc = run("calibrate", "--oracle", "cmd:false", "--reference", ref,
             "--blocker", "4x4", "--seed", 0, "--out", tmp_path / "out")
    assert rc == cli.EXIT_ORACLE


def test_evaluate_id_mismatch_exit_1(tmp_path):
    stream = tmp_path / "stream"
    gen(stream, poison="0", per_class=2)
    report = {
        "verdicts": [
            {"id": "not-a-real-file", "status": "clean",
             "original_label": 0, "sanitized_label": 0}
        ]
    }
    (tmp_path / "report.json").write_text(json.dumps(report))
    rc = run("evaluate", "--report", tmp_path / "report.json",
             "--manifest", stream / "manifest.json", "--seed", 0,
             "--out", tmp_path / "out")
    assert rc == cli.EXIT_USAGE
