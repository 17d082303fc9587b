"""Command-line front end: ``swarmvv <stage> ...``.

A run directory collects every stage's output::

    RUN/config.json            scenario used by simulate
    RUN/manifest.json          seeds, stages, argv and output digests
    RUN/lf/trial_NNNN/         raw LF datasets
    RUN/clean/<src>_NNNN.csv   1 Hz cleaned series per trial (lf, hf, phys)
    RUN/series/<src>_*.csv     averaged and discretized series (+ bins json)
    RUN/models/<src>_sK.ctmc   per-state chains
    RUN/results.csv            property-pack results; details under RUN/details/
    RUN/experiments/           sweep CSVs and SVG plots
    RUN/report.txt             requirement verdicts

Exit status: 0 success, 1 property violations with ``--strict``, 2 errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from . import checker, lfsim, macro, markov
from . import pipeline as pl
from . import propspec as ps
from . import scenario as sc

log = logging.getLogger("swarmvv")

SOURCES = ("lf", "hf", "phys")
OUT_ENV = "SWARMVV_OUT"

DEFAULT_PROPERTIES = """\
// fire exit (REQ 1) and amber buffer
red_reach: P=? [ F<=T "unsafe_fireexitsblocked" ]
amber_critical_reach: P=? [ F<=T "unsafe_amber_critical" ]
amber_reach: P=? [ F<=T "unsafe_amber" ]
red_next_count: filter(count, P=? [ X "unsafe_red" ])
red_next_sum: filter(sum, P=? [ X "unsafe_red" ])
red_next_avg: filter(avg, P=? [ X "unsafe_red" ])
red_invariant: A[ G !"unsafe_red" ]
red_witness: E[ F "unsafe_red" ]
// behavioural states
main_reward: R{"main_states"}=? [ C<=T ]
avoidance_reward: R{"avoidance_states"}=? [ C<=T ]
state_level: P=? [ F<=T (s=state&l=level&timestep=T) ]
level_first_half: P=? [ F[0,99] (s=1&l>=3) ]
level_second_half: P=? [ F[100,199] (s=4&l>=3) ]
until_bound: P>=0.25 [ s=4 U<=99.0 s=1 ]
// density (REQ 2)
density_reach: P=? [ F<=T "density_violation" ]
density_invariant: A[ G !"density_violation" ]
"""

RESULT_HEADER = ["property_name", "kind", "value_or_bool", "details_path"]


class CliError(Exception):
    pass


# --- manifest -------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    tool_version: str = __version__
    config_hash: str | None = None
    seeds: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    argv: list = field(default_factory=list)
    timestamps: dict = field(default_factory=dict)

    @classmethod
    def load(cls, run: Path) -> "RunManifest":
        path = run / "manifest.json"
        if not path.exists():
            return cls()
        return cls(**json.loads(path.read_text(encoding="utf-8")))

    def record(self, run: Path, stage: str, argv, outputs=(), **extra) -> None:
        from datetime import datetime, timezone

        self.stages.append(stage)
        self.argv.append(list(argv))
        self.timestamps[stage] = datetime.now(timezone.utc).isoformat(timespec="seconds")
        for p in outputs:
            p = Path(p)
            files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
            for f in files:
                try:
                    key = str(f.resolve().relative_to(run.resolve()))
                except ValueError:
                    key = str(f.resolve())
                self.outputs[key] = _sha256(f)
        for k, v in extra.items():
            getattr(self, k).update(v)
        path = run / "manifest.json"
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _record(args, run: Path, stage: str, outputs=(), **extra):
    RunManifest.load(run).record(run, stage, getattr(args, "_argv", []), outputs, **extra)


# --- shared helpers --------------------------------------------------------------------

def _default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "swarmvv-out"))


def _run_dir(args) -> Path:
    return Path(args.run) if getattr(args, "run", None) else _default_out()


def _load_scenario(args) -> sc.ScenarioConfig:
    if getattr(args, "config", None):
        return sc.load_config(args.config)
    return sc.PRESETS[args.preset]()


def _run_config(run: Path) -> sc.ScenarioConfig:
    path = run / "config.json"
    if not path.exists():
        raise CliError(f"{path} not found; run `swarmvv simulate` first or pass --config")
    return sc.load_config(path)


def _parse_defines(items) -> dict:
    out = {}
    for item in items or []:
        name, eq, value = item.partition("=")
        if not eq:
            raise CliError(f"malformed define {item!r}; expected NAME=VALUE")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise CliError(f"define {name} needs a numeric value, got {value!r}") from None
    return out


def _clean_files(run: Path, source: str) -> list[Path]:
    return sorted((run / "clean").glob(f"{source}_[0-9]*.csv"))


def _discrete_paths(run: Path, source: str):
    return run / "series" / f"{source}_discrete.csv", run / "series" / f"{source}_bins.json"


def _model_paths(run: Path, source: str) -> dict[int, Path]:
    found = {}
    for s in range(6):
        p = run / "models" / f"{source}_s{s}.ctmc"
        if p.exists():
            found[s] = p
    return found


def _sources_present(run: Path) -> list[str]:
    return [s for s in SOURCES if _model_paths(run, s)]


def _state_choice(prop) -> int | None:
    """The behavioural state a property pins with ``s=k`` (if exactly one)."""
    found = set()

    def walk(n):
        if isinstance(n, ps.Compare) and n.var == "s" and n.op == "=" and not isinstance(n.value, str):
            found.add(int(n.value))
        if hasattr(n, "__dataclass_fields__"):
            for name in n.__dataclass_fields__:
                walk(getattr(n, name))

    walk(prop)
    return found.pop() if len(found) == 1 else None


# --- stage implementations -------------------------------------------------------------

def do_simulate(args) -> int:
    run = _run_dir(args)
    config = _load_scenario(args)
    run.mkdir(parents=True, exist_ok=True)
    sc.save_config(config, run / "config.json")
    summary = lfsim.run_campaign(config, args.trials, args.seed, run / "lf", force=args.force, jobs=args.jobs)
    (run / "lf" / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n",
                                            encoding="utf-8")
    cfg_hash = _sha256(run / "config.json")
    m = RunManifest.load(run)
    m.config_hash = cfg_hash
    m.record(run, "simulate", args._argv, [run / "config.json", run / "lf"],
             seeds={"base_seed": args.seed, "trials": args.trials})
    print(f"simulated {args.trials} trials into {run / 'lf'} (mean deposits {summary.mean_deposits:.2f})")
    return 0


def do_clean(args) -> int:
    run = _run_dir(args)
    config = _run_config(run)
    zones = sc.build_zone_map(config)
    out = run / "clean"
    out.mkdir(parents=True, exist_ok=True)
    every = max(1, int(round(1.0 / config.dt)))
    dirs = pl.trial_dirs(run / "lf")
    if not dirs:
        raise CliError(f"no LF trials under {run / 'lf'}")
    for i, d in enumerate(dirs):
        series = pl.downsample(pl.clean_trial(d, zones, config), every)
        pl.write_clean(series, out / f"lf_{i:04d}.csv")
    _record(args, run, "clean", _clean_files(run, "lf"))
    print(f"cleaned {len(dirs)} LF trials into {out}")
    return 0


def do_ingest_hf(args) -> int:
    run = _run_dir(args)
    zones = sc.build_zone_map(_load_scenario(args))
    series = pl.ingest_hf_campaign(args.input, zones, args.duration)
    out = run / "clean"
    out.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(series):
        pl.write_clean(s, out / f"hf_{i:04d}.csv")
    _record(args, run, "ingest-hf", _clean_files(run, "hf"), inputs={"hf": str(args.input)})
    print(f"ingested {len(series)} HF traces into {out}")
    return 0


def do_downsample_phys(args) -> int:
    run = _run_dir(args)
    zones = sc.build_zone_map(_load_scenario(args))
    files = sorted(Path(args.input).glob("*.csv"))
    if not files:
        raise CliError(f"no physical-trial recordings in {args.input}")
    out = run / "clean"
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for i, f in enumerate(files):
        s = pl.downsample_physical(f, zones, args.duration)
        pl.write_clean(s, out / f"phys_{i:04d}.csv")
        reports[f.name] = s.availability.to_dict()
    avail = out / "phys_availability.json"
    avail.write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _record(args, run, "downsample-phys", _clean_files(run, "phys") + [avail], inputs={"phys": str(args.input)})
    worst = min(r["worst_availability"] for r in reports.values())
    print(f"downsampled {len(files)} recordings into {out} (worst availability {worst:.0%})")
    return 0


def do_discretize(args) -> int:
    run = _run_dir(args)
    sources = [args.source] if args.source else [s for s in SOURCES if _clean_files(run, s)]
    if not sources:
        raise CliError(f"no cleaned series under {run / 'clean'}; run clean / ingest-hf / downsample-phys")
    out = run / "series"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for src in sources:
        files = _clean_files(run, src)
        if not files:
            raise CliError(f"no cleaned {src} series under {run / 'clean'}")
        avg = pl.average_trials([pl.read_clean(f) for f in files])
        pl.write_clean(avg, out / f"{src}_avg.csv")
        ds = pl.discretize_ewd(avg, args.bins)
        csv_path, bins_path = _discrete_paths(run, src)
        pl.write_discrete(ds, csv_path, bins_path)
        written += [out / f"{src}_avg.csv", csv_path, bins_path]
        print(f"{src}: averaged {len(files)} series, {len(ds)} samples in {args.bins} levels")
    _record(args, run, "discretize", written)
    return 0


def do_stats(args) -> int:
    run = _run_dir(args)
    rows = []
    for src in SOURCES:
        files = _clean_files(run, src)
        if files:
            st = pl.zone_time_stats([pl.read_clean(f) for f in files])
            rows.append([src.upper(), f"{st.red_s:g}", f"{st.amber_critical_s:g}",
                         f"{st.amber_single_s:g}", str(st.n_trials)])
    if not rows:
        raise CliError(f"no cleaned series under {run / 'clean'}")
    path = run / "stats.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "red_s", "amber_critical_s", "amber_single_s", "n_trials"])
        w.writerows(rows)
    _record(args, run, "stats", [path])
    for r in rows:
        print(f"{r[0]}: red {r[1]} s, amber (2+) {r[2]} s, amber (1+) {r[3]} s over {r[4]} trials")
    return 0


def do_macro(args) -> int:
    if args.action == "estimate":
        run = _run_dir(args)
        campaign = Path(args.campaign) if args.campaign else run / "lf"
        n_robots = _run_config(run).n_robots if (run / "config.json").exists() else None
        params = macro.estimate_params(campaign, n_robots, max_sojourn=args.max_sojourn, stride=args.stride)
        out = Path(args.out) if args.out else run / "macro" / "params.json"
        out.parent.mkdir(parents=True, exist_ok=True)
        params.save(out)
        if not args.campaign:
            _record(args, run, "macro-estimate", [out])
        print(f"estimated {params} -> {out}")
        return 0
    params = macro.MacroParams.load(args.params)
    traj = macro.evolve(macro.PopulationVector.all_searching(params), params, args.steps)
    out = Path(args.out) if args.out else Path(args.params).with_name("trajectory.csv")
    macro.write_trajectory(traj, out)
    print(f"evolved {args.steps} steps -> {out}")
    return 0


def do_build_model(args) -> int:
    run = _run_dir(args)
    sources = [args.source] if args.source else [s for s in SOURCES if _discrete_paths(run, s)[0].exists()]
    if not sources:
        raise CliError(f"no discretized series under {run / 'series'}; run discretize first")
    out = run / "models"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for src in sources:
        csv_path, bins_path = _discrete_paths(run, src)
        ds = pl.read_discrete(csv_path, bins_path)
        if args.mode == "joint":
            models = {"joint": markov.build_model(ds, "joint")}
        else:
            models = {f"s{k}": m for k, m in markov.build_models(ds).items()}
        for tag, m in models.items():
            problems = markov.validate_model(m)
            if problems:
                raise CliError(f"{src} model {tag} is invalid: " + "; ".join(problems))
            path = out / f"{src}_{tag}.ctmc"
            markov.export_model(m, path)
            written.append(path)
        print(f"{src}: {len(models)} model(s), {m.n_states} states each")
    _record(args, run, "build-model", written)
    return 0


@dataclass
class PackOutcome:
    rows: list
    violations: list


def _default_defines(model: markov.MarkovModel) -> dict:
    return {"T": float(model.meta.get("n_samples", model.n_states - 1)), "state": 0.0, "level": 3.0}


def _check_props(named_props, models: dict, defines: dict, details_dir: Path | None, prefix: str,
                 base: Path | None) -> PackOutcome:
    rows, violations = [], []
    for i, named in enumerate(named_props):
        name = named.name or f"property_{i + 1}"
        k = _state_choice(named.prop)
        model = models.get(k, models[min(models)]) if isinstance(models, dict) else models
        d = {**_default_defines(model), **defines}
        try:
            bound = ps.bind(named.prop, model, d)
        except ps.BindError:
            if model.meta.get("state_data", True):
                raise
            # position-only sources carry no state probabilities or rewards
            rows.append([prefix + name, "not_applicable", "n/a", ""])
            continue
        res = checker.check(bound)
        details = ""
        if details_dir is not None and (res.trace is not None or res.kind == "filter"):
            path = details_dir / f"{prefix}{name}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            payload = {"property": ps.unparse(named.prop), "kind": res.kind}
            if res.trace is not None:
                payload["trace"] = res.trace.describe(model)
            if res.filter is not None:
                f = res.filter
                payload["filter"] = {"count": f.count, "sum": f.sum, "avg": f.avg, "states": f.states,
                                     "values": f.values, "mean_over_states": f.mean_over_states}
            path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
            details = str(path.relative_to(base)) if base is not None else str(path)
        rows.append([prefix + name, res.kind, res.as_text(), details])
        if res.value is False and isinstance(named.prop, (ps.ProbQuery, ps.CtlInvariant)):
            violations.append(prefix + name)
    return PackOutcome(rows, violations)


def _write_results(rows, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        w.writerows(rows)


def _read_props(path) -> list:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CliError(f"property file {path} not found") from None
    return ps.parse_file(text)


def do_check(args) -> int:
    defines = _parse_defines(args.define)
    if args.model:
        model = markov.import_model(args.model)
        props = _read_props(args.props) if args.props else ps.parse_file(DEFAULT_PROPERTIES)
        out = Path(args.out) if args.out else None
        details = out.parent / "details" if out else None
        outcome = _check_props(props, {0: model}, defines, details, "", out.parent if out else None)
        if out:
            _write_results(outcome.rows, out)
        for r in outcome.rows:
            print(",".join(r))
    else:
        run = _run_dir(args)
        sources = _sources_present(run)
        if not sources:
            raise CliError(f"no models under {run / 'models'}; run build-model first or pass --model")
        props = _read_props(args.props) if args.props else ps.parse_file(DEFAULT_PROPERTIES)
        rows, violations = [], []
        for src in sources:
            models = {k: markov.import_model(p) for k, p in _model_paths(run, src).items()}
            o = _check_props(props, models, defines, run / "details", f"{src}/", run)
            rows += o.rows
            violations += o.violations
        out = Path(args.out) if args.out else run / "results.csv"
        _write_results(rows, out)
        _record(args, run, "check", [out, run / "details"] if (run / "details").exists() else [out])
        outcome = PackOutcome(rows, violations)
        print(f"checked {len(props)} properties on {', '.join(sources)} -> {out}")
    if outcome.violations:
        print("violations: " + ", ".join(outcome.violations), file=sys.stderr)
        if args.strict:
            return 1
    return 0


def do_experiment(args) -> int:
    model = markov.import_model(args.model)
    sweep = checker.SweepSpec.parse(args.sweep)
    prop = ps.parse(args.prop)
    defines = {**_default_defines(model), **_parse_defines(args.define)}
    defines.pop(sweep.variable, None)
    res = checker.run_experiment(model, prop, sweep, defines, csv_path=args.csv, plot_path=args.plot)
    if not args.csv:
        for x, v in zip(res.points, res.values):
            print(f"{x:g},{v!r}")
    return 0


EXPERIMENTS = {
    "reach": [("red", 'P=? [ F<=T "unsafe_fireexitsblocked" ]'),
              ("amber critical", 'P=? [ F<=T "unsafe_amber_critical" ]'),
              ("amber", 'P=? [ F<=T "unsafe_amber" ]'),
              ("density", 'P=? [ F<=T "density_violation" ]')],
    "rewards": [("main states", 'R{"main_states"}=? [ C<=T ]'),
                ("avoidance states", 'R{"avoidance_states"}=? [ C<=T ]')],
}


def _run_experiments(run: Path, step: float) -> list[Path]:
    out = run / "experiments"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for src in _sources_present(run):
        model = markov.import_model(_model_paths(run, src)[min(_model_paths(run, src))])
        horizon = float(model.meta.get("n_samples", model.n_states - 1))
        sweep = checker.SweepSpec("T", 0.0, step, horizon)
        for group, props in EXPERIMENTS.items():
            curves = []
            for label, text in props:
                if "R{" in text and not model.rewards:
                    continue
                csv_path = out / f"{src}_{group}_{label.replace(' ', '_')}.csv"
                res = checker.run_experiment(model, text, sweep, csv_path=csv_path)
                curves.append((label, res))
                written.append(csv_path)
            if curves:
                svg = out / f"{src}_{group}.svg"
                checker.plot_series(curves, svg, "expected reward" if group == "rewards" else "probability")
                written.append(svg)
    return written


# --- report -----------------------------------------------------------------------------

def _read_results(run: Path) -> dict:
    path = run / "results.csv"
    if not path.exists():
        raise CliError(f"{path} not found; the run is incomplete (run `swarmvv check`)")
    with open(path, encoding="utf-8") as fh:
        return {r["property_name"]: r for r in csv.DictReader(fh)}


def build_report(run: Path, fmt: str = "text") -> str:
    results = _read_results(run)
    md = fmt == "markdown"
    lines = []

    def heading(txt):
        lines.extend(["", f"## {txt}" if md else txt, "" if md else "-" * len(txt)])

    def table(header, rows):
        if md:
            lines.append("| " + " | ".join(header) + " |")
            lines.append("|" + "---|" * len(header))
            lines.extend("| " + " | ".join(r) + " |" for r in rows)
        else:
            widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
            fmt_row = lambda r: "  ".join(str(x).ljust(w) for x, w in zip(r, widths)).rstrip()
            lines.append(fmt_row(header))
            lines.extend(fmt_row(r) for r in rows)

    lines.append("# swarmvv verification report" if md else "swarmvv verification report")

    def verdict(src, prop):
        r = results.get(f"{src}/{prop}")
        if r is None:
            return "no data", ""
        if r["value_or_bool"] == "true":
            return "SATISFIED", ""
        return "VIOLATED", r["details_path"]

    heading("Requirement verdicts")
    rows = []
    for req, prop, desc in (("REQ 1", "red_invariant", "fire exit never blocked"),
                            ("REQ 2", "density_invariant", "stationary robots below 10% outside deposit")):
        for src in SOURCES:
            v, trace = verdict(src, prop)
            first = ""
            if trace:
                tr = json.loads((run / trace).read_text(encoding="utf-8"))["trace"]
                first = f"first at timestep {tr[-1].get('timestep')}; trace {trace}"
            rows.append([req, desc, src.upper(), v, first])
    table(["requirement", "meaning", "source", "verdict", "evidence"], rows)

    heading("Key probabilities")
    rows = []
    for src in SOURCES:
        vals = [results.get(f"{src}/{p}", {}).get("value_or_bool", "no data")
                for p in ("red_reach", "amber_critical_reach", "amber_reach", "density_reach")]
        rows.append([src.upper()] + vals)
    table(["source", "P[F<=T red]", "P[F<=T amber 2+]", "P[F<=T amber]", "P[F<=T density]"], rows)

    heading("Cumulative rewards at the horizon")
    rows = []
    for src in SOURCES:
        main = results.get(f"{src}/main_reward", {}).get("value_or_bool", "no data")
        avoid = results.get(f"{src}/avoidance_reward", {}).get("value_or_bool", "no data")
        rows.append([src.upper(), main, avoid])
    table(["source", "main_states", "avoidance_states"], rows)
    curves = sorted((run / "experiments").glob("*_rewards_*.csv")) if (run / "experiments").exists() else []
    if curves:
        lines.append("curve data: " + ", ".join(str(c.relative_to(run)) for c in curves))

    heading("Filters over X \"unsafe_red\"")
    rows = []
    for src in SOURCES:
        rows.append([src.upper()] + [results.get(f"{src}/red_next_{k}", {}).get("value_or_bool", "no data")
                                     for k in ("count", "sum", "avg")])
    table(["source", "count", "sum", "avg"], rows)

    heading("Counterexample traces")
    any_trace = False
    for name, r in sorted(results.items()):
        if r["details_path"] and r["kind"] == "ctl":
            tr = json.loads((run / r["details_path"]).read_text(encoding="utf-8"))["trace"]
            steps = " -> ".join(str(s.get("timestep", s["state"])) for s in tr)
            lines.append(f"{name}: {len(tr)} states, timesteps {steps}")
            any_trace = True
    if not any_trace:
        lines.append("none")

    heading("Zone-time statistics (mean seconds per trial)")
    rows = []
    for src in SOURCES:
        files = _clean_files(run, src)
        if files:
            st = pl.zone_time_stats([pl.read_clean(f) for f in files])
            rows.append([src.upper(), f"{st.red_s:g}", f"{st.amber_critical_s:g}", f"{st.amber_single_s:g}",
                         str(st.n_trials)])
        else:
            rows.append([src.upper(), "no data", "no data", "no data", "0"])
    table(["source", "red zone", "amber (2+ robots)", "amber (1+ robot)", "trials"], rows)

    avail = run / "clean" / "phys_availability.json"
    if avail.exists():
        heading("Physical-trial data availability")
        rep = json.loads(avail.read_text(encoding="utf-8"))
        rows = [[k, f"{v['worst_availability']:.0%}", f"{v['best_availability']:.0%}", f"{v['max_gap_s']:.1f}"]
                for k, v in sorted(rep.items())]
        table(["recording", "worst robot", "best robot", "max gap s"], rows)
    return "\n".join(lines) + "\n"


def do_report(args) -> int:
    run = _run_dir(args)
    text = build_report(run, args.format)
    path = Path(args.out) if args.out else run / ("report.md" if args.format == "markdown" else "report.txt")
    path.write_text(text, encoding="utf-8")
    _record(args, run, "report", [path])
    print(text, end="")
    return 0


def do_all(args) -> int:
    run = _run_dir(args)
    base = dict(run=str(run), _argv=args._argv)
    ns = lambda **kw: argparse.Namespace(**{**base, **kw})
    do_simulate(ns(trials=args.trials, seed=args.seed, preset=args.preset, config=args.config,
                   force=args.force, jobs=args.jobs))
    do_clean(ns())
    if args.hf:
        do_ingest_hf(ns(input=args.hf, preset=args.preset, config=str(run / "config.json"), duration=args.duration))
    if args.phys:
        do_downsample_phys(ns(input=args.phys, preset=args.preset, config=str(run / "config.json"),
                              duration=args.duration))
    do_discretize(ns(source=None, bins=args.bins))
    do_stats(ns())
    do_build_model(ns(source=None, mode="per_state_chain"))
    status = do_check(ns(model=None, props=args.props, define=args.define, out=None, strict=args.strict))
    written = _run_experiments(run, args.sweep_step)
    _record(args, run, "experiments", written)
    do_report(ns(format="text", out=None))
    return status


# --- argument parsing --------------------------------------------------------------------

def _add_run(p, alias_out=True):
    flags = ("--run", "--out") if alias_out else ("--run",)
    p.add_argument(*flags, dest="run", metavar="DIR",
                   help=f"run directory (default ${OUT_ENV} or ./swarmvv-out)")


def _add_scenario(p):
    p.add_argument("--preset", choices=sorted(sc.PRESETS), default="full",
                   help="named scenario preset (default: full)")
    p.add_argument("--config", metavar="JSON", help="scenario config file (overrides --preset)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swarmvv", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"swarmvv {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="run a low-fidelity simulation campaign")
    _add_run(p)
    _add_scenario(p)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="base seed; trial i uses seed+i")
    p.add_argument("--force", action="store_true", help="overwrite an existing campaign")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=do_simulate)

    p = sub.add_parser("clean", help="validate LF datasets, compute flags, downsample to 1 Hz")
    _add_run(p)
    p.set_defaults(func=do_clean)

    p = sub.add_parser("ingest-hf", help="read 1 Hz high-fidelity position traces")
    _add_run(p)
    _add_scenario(p)
    p.add_argument("--input", required=True, metavar="DIR", help="directory of robot_id,t_s,x_m,y_m CSVs")
    p.add_argument("--duration", type=int, default=200, help="trial length in seconds")
    p.set_defaults(func=do_ingest_hf)

    p = sub.add_parser("downsample-phys", help="nearest-sample 1 Hz downsampling of physical recordings")
    _add_run(p)
    _add_scenario(p)
    p.add_argument("--input", required=True, metavar="DIR")
    p.add_argument("--duration", type=int, default=200)
    p.set_defaults(func=do_downsample_phys)

    p = sub.add_parser("discretize", help="average cleaned series and bin them into levels")
    _add_run(p)
    p.add_argument("--source", choices=SOURCES)
    p.add_argument("--bins", type=int, default=5)
    p.set_defaults(func=do_discretize)

    p = sub.add_parser("stats", help="mean time per trial in the red and amber zones")
    _add_run(p)
    p.set_defaults(func=do_stats)

    p = sub.add_parser("macro", help="macroscopic population model")
    msub = p.add_subparsers(dest="action", required=True)
    q = msub.add_parser("estimate", help="estimate P_s, P_p, P_a, T_s from LF state traces")
    _add_run(q, alias_out=False)
    q.add_argument("--campaign", metavar="DIR", help="trial directories (default RUN/lf)")
    q.add_argument("--out", metavar="JSON", help="parameter file (default RUN/macro/params.json)")
    q.add_argument("--max-sojourn", type=int, default=50)
    q.add_argument("--stride", type=int, default=1)
    q.set_defaults(func=do_macro)
    q = msub.add_parser("evolve", help="iterate the population equations")
    q.add_argument("--params", required=True, metavar="JSON")
    q.add_argument("--steps", type=int, default=200)
    q.add_argument("--out", metavar="CSV")
    q.set_defaults(func=do_macro)

    p = sub.add_parser("build-model", help="build labelled CTMCs from discretized series")
    _add_run(p)
    p.add_argument("--source", choices=SOURCES)
    p.add_argument("--mode", choices=("per_state_chain", "joint"), default="per_state_chain")
    p.set_defaults(func=do_build_model)

    p = sub.add_parser("check", help="check a property file (default: the built-in pack)")
    _add_run(p, alias_out=False)
    p.add_argument("--model", metavar="FILE", help="model file; without it every model of the run is checked")
    p.add_argument("--props", metavar="FILE")
    p.add_argument("--define", action="append", metavar="NAME=V", help="bind a parameter such as T")
    p.add_argument("--out", dest="out", metavar="CSV", help="results file")
    p.add_argument("--strict", action="store_true", help="exit 1 when a bounded/invariant property fails")
    p.set_defaults(func=do_check)

    p = sub.add_parser("experiment", help="sweep a parameter and record the property value")
    p.add_argument("--model", required=True, metavar="FILE")
    p.add_argument("--prop", required=True)
    p.add_argument("--sweep", required=True, metavar="NAME=a:step:b")
    p.add_argument("--define", action="append", metavar="NAME=V")
    p.add_argument("--csv", metavar="FILE")
    p.add_argument("--plot", metavar="SVG")
    p.set_defaults(func=do_experiment)

    p = sub.add_parser("report", help="summarise a completed run")
    _add_run(p)
    p.add_argument("--format", choices=("text", "markdown"), default="text")
    p.add_argument("--file", dest="out", metavar="FILE")
    p.set_defaults(func=do_report)

    p = sub.add_parser("all", help="simulate, clean, discretize, build, check, report")
    _add_run(p)
    _add_scenario(p)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--hf", metavar="DIR", help="optional high-fidelity traces")
    p.add_argument("--phys", metavar="DIR", help="optional physical-trial recordings")
    p.add_argument("--duration", type=int, default=200)
    p.add_argument("--bins", type=int, default=5)
    p.add_argument("--props", metavar="FILE")
    p.add_argument("--define", action="append", metavar="NAME=V")
    p.add_argument("--sweep-step", type=float, default=10.0)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=do_all)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    args._argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, sc.ScenarioError, sc.TraceError, pl.SchemaError, ps.PropertySyntaxError,
            ps.BindError, checker.CheckError, markov.ModelFormatError, macro.UndefinedParameterError,
            FileExistsError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
