import csv
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from swarmvv.cli import DEFAULT_PROPERTIES, RunManifest, build_report, main
from swarmvv.pipeline import FLAG_NAMES, CleanSeries, write_clean
from swarmvv.propspec import parse_file


def results(path):
    with open(path) as fh:
        return {r["property_name"]: r for r in csv.DictReader(fh)}


def write_traces(directory, n_files, red=False, jitter=False):
    directory.mkdir()
    rng = np.random.default_rng(0)
    for k in range(n_files):
        lines = ["robot_id,t_s,x_m,y_m"]
        for rid in range(5):
            ts = np.arange(0, 200, 0.01 if jitter else 1.0)
            if jitter:
                ts = ts + rng.uniform(0, 0.004, len(ts))
            for t in ts:
                x = -1.5 if (red and rid == 0 and t < 30) else 0.3 * np.sin(t / 7 + rid)
                lines.append(f"{rid},{t:.3f},{x:.4f},{0.2 * rid - 0.4 + 0.01 * np.cos(t):.4f}")
        (directory / f"trial_{k}.csv").write_text("\n".join(lines) + "\n")
    return directory


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    run = root / "r1"
    start = time.perf_counter()
    code = main(["all", "--preset", "smoke", "--trials", "10", "--seed", "7", "--out", str(run)])
    elapsed = time.perf_counter() - start
    return run, code, elapsed


def test_smoke_all_produces_run(smoke_run):
    run, code, elapsed = smoke_run
    assert code == 0
    assert elapsed < 60
    for rel in ("config.json", "manifest.json", "lf/trial_0009/states.csv", "clean/lf_0000.csv",
                "series/lf_avg.csv", "series/lf_discrete.csv", "series/lf_bins.json", "models/lf_s0.ctmc",
                "models/lf_s5.ctmc", "results.csv", "report.txt", "stats.csv", "experiments/lf_reach.svg"):
        assert (run / rel).exists(), rel
    res = results(run / "results.csv")
    assert len(res) == len(parse_file(DEFAULT_PROPERTIES))
    assert all(name.startswith("lf/") for name in res)
    f = {k: res[f"lf/red_next_{k}"]["value_or_bool"] for k in ("count", "sum", "avg")}
    if f["avg"] != "undefined":
        assert float(f["avg"]) * int(f["count"]) == pytest.approx(float(f["sum"]), abs=1e-9)


def test_manifest_contents(smoke_run):
    run, _, _ = smoke_run
    m = RunManifest.load(run)
    assert m.stages[0] == "simulate" and "check" in m.stages and m.stages[-1] == "report"
    assert m.seeds == {"base_seed": 7, "trials": 10}
    assert m.config_hash and "results.csv" in m.outputs
    assert m.argv[0][0] == "all"


def test_rerun_from_manifest_is_byte_identical(smoke_run, tmp_path):
    run, _, _ = smoke_run
    m = RunManifest.load(run)
    argv = list(m.argv[0])
    argv[argv.index("--out") + 1] = str(tmp_path / "r2")
    assert main(argv) == 0
    m2 = RunManifest.load(tmp_path / "r2")
    assert m2.outputs == m.outputs
    assert m2.config_hash == m.config_hash
    assert (tmp_path / "r2" / "results.csv").read_bytes() == (run / "results.csv").read_bytes()


def test_report_marks_missing_sources(smoke_run):
    run, _, _ = smoke_run
    text = (run / "report.txt").read_text()
    assert "Requirement verdicts" in text
    hf_rows = [ln for ln in text.splitlines() if ln.startswith("REQ 1") and " HF " in ln]
    assert hf_rows and "no data" in hf_rows[0]
    lf = results(run / "results.csv")["lf/red_invariant"]["value_or_bool"]
    lf_row = [ln for ln in text.splitlines() if ln.startswith("REQ 1") and " LF " in ln][0]
    if lf == "false":
        assert "VIOLATED" in lf_row and "details/lf/red_invariant.json" in lf_row
    else:
        assert "SATISFIED" in lf_row
    md = build_report(run, "markdown")
    assert md.startswith("# ") and "| requirement |" in md


def test_check_empty_props_and_strict(smoke_run, tmp_path, capsys):
    run, _, _ = smoke_run
    empty = tmp_path / "empty.props"
    empty.write_text("// nothing to check\n")
    out = tmp_path / "res.csv"
    assert main(["check", "--run", str(run), "--props", str(empty), "--out", str(out)]) == 0
    assert out.read_text().splitlines() == ["property_name,kind,value_or_bool,details_path"]
    never = tmp_path / "never.props"
    never.write_text('never: P>=1 [ F<=0 "unsafe_red" ]\n')
    assert main(["check", "--run", str(run), "--props", str(never), "--out", str(out)]) == 0
    assert main(["check", "--run", str(run), "--props", str(never), "--out", str(out), "--strict"]) == 1
    assert "violations" in capsys.readouterr().err


def test_check_single_model_and_experiment(smoke_run, tmp_path, capsys):
    run, _, _ = smoke_run
    model = run / "models" / "lf_s0.ctmc"
    props = tmp_path / "p.props"
    props.write_text('red: P=? [ F<=T "unsafe_red" ]\n"main": R{"main_states"}=? [ C<=T ]\n')
    out = tmp_path / "res.csv"
    assert main(["check", "--model", str(model), "--props", str(props), "--define", "T=20", "--out", str(out)]) == 0
    res = results(out)
    assert set(res) == {"red", "main"} and 0 <= float(res["red"]["value_or_bool"]) <= 1
    assert main(["experiment", "--model", str(model), "--prop", 'P=? [ F<=T "unsafe_amber" ]',
                 "--sweep", "T=0:50:200", "--csv", str(tmp_path / "e.csv"), "--plot", str(tmp_path / "e.svg")]) == 0
    rows = (tmp_path / "e.csv").read_text().splitlines()
    assert rows[0] == "T,value" and len(rows) == 6
    assert (tmp_path / "e.svg").exists()
    assert main(["experiment", "--model", str(model), "--prop", 'P=? [ F<=5 "unsafe_amber" ]',
                 "--sweep", "T=0:1:3"]) == 2
    assert "does not occur" in capsys.readouterr().err


def test_error_exit_codes(tmp_path, capsys):
    assert main(["report", "--run", str(tmp_path / "nothing")]) == 2
    assert "not found" in capsys.readouterr().err
    assert main(["clean", "--run", str(tmp_path / "nothing")]) == 2
    bad = tmp_path / "bad.props"
    bad.write_text("P=? [ F<= ]\n")
    assert main(["check", "--run", str(tmp_path), "--props", str(bad)]) == 2
    assert main(["no-such-command"]) == 2
    capsys.readouterr()


def test_synthetic_clean_run_satisfies_everything(tmp_path):
    run = tmp_path / "syn"
    (run / "clean").mkdir(parents=True)
    rng = np.random.default_rng(3)
    for i in range(3):
        flags = {f: np.zeros(200, dtype=bool) for f in FLAG_NAMES}
        write_clean(CleanSeries(p_state=rng.dirichlet(np.ones(6), size=200), **flags), run / "clean" / f"lf_{i:04d}.csv")
    for argv in (["discretize"], ["build-model"], ["check"], ["report"]):
        assert main(argv + ["--run", str(run)]) == 0
    res = results(run / "results.csv")
    assert res["lf/red_invariant"]["value_or_bool"] == "true"
    assert res["lf/density_invariant"]["value_or_bool"] == "true"
    verdicts = [ln for ln in (run / "report.txt").read_text().splitlines() if ln.startswith("REQ")]
    lf = [ln for ln in verdicts if " LF " in ln]
    assert len(lf) == 2 and all("SATISFIED" in ln for ln in lf)
    assert not any("VIOLATED" in ln for ln in verdicts)


def test_all_with_hf_and_physical_sources(tmp_path):
    hf = write_traces(tmp_path / "hf", 2, red=True)
    phys = write_traces(tmp_path / "phys", 1, jitter=True)
    run = tmp_path / "run"
    assert main(["all", "--preset", "smoke", "--trials", "2", "--seed", "1", "--out", str(run),
                 "--hf", str(hf), "--phys", str(phys)]) == 0
    res = results(run / "results.csv")
    assert res["hf/red_invariant"]["value_or_bool"] == "false"
    assert res["phys/red_invariant"]["value_or_bool"] == "true"
    assert res["hf/main_reward"]["kind"] == "not_applicable"
    assert res["lf/main_reward"]["kind"] == "reward"
    text = (run / "report.txt").read_text()
    assert "Physical-trial data availability" in text
    stats = (run / "stats.csv").read_text().splitlines()
    assert stats[0] == "source,red_s,amber_critical_s,amber_single_s,n_trials"
    assert any(row.startswith("HF,30,") for row in stats)


def test_stage_commands(tmp_path):
    run = tmp_path / "stages"
    assert main(["simulate", "--preset", "smoke", "--trials", "2", "--seed", "3", "--out", str(run)]) == 0
    assert main(["simulate", "--preset", "smoke", "--trials", "2", "--seed", "3", "--out", str(run)]) == 2
    assert main(["clean", "--out", str(run)]) == 0
    assert main(["stats", "--out", str(run)]) == 0
    assert main(["discretize", "--out", str(run), "--bins", "4"]) == 0
    assert json.loads((run / "series" / "lf_bins.json").read_text())["n_bins"] == 4
    assert main(["build-model", "--out", str(run), "--mode", "joint"]) == 0
    assert (run / "models" / "lf_joint.ctmc").exists()
    assert main(["macro", "estimate", "--run", str(run)]) == 0
    params = run / "macro" / "params.json"
    assert set(json.loads(params.read_text())) >= {"P_s", "P_p", "P_a", "T_s", "N"}
    assert main(["macro", "evolve", "--params", str(params), "--steps", "20", "--out", str(tmp_path / "t.csv")]) == 0
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 22


def test_env_default_run_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("SWARMVV_OUT", str(tmp_path / "envrun"))
    assert main(["simulate", "--preset", "smoke", "--trials", "1"]) == 0
    assert (tmp_path / "envrun" / "lf" / "trial_0000").is_dir()


def test_module_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "swarmvv", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("simulate", "clean", "ingest-hf", "downsample-phys", "discretize", "stats", "macro",
                "build-model", "check", "experiment", "report", "all"):
        assert cmd in out.stdout
