"""Command-line pipeline: phantom -> optimize | tune -> reduce -> report.

Every command writes ``manifest.json`` next to its outputs.  Everything in the
manifest except the ``timings`` block is deterministic, so reruns with the same
inputs reproduce every output byte for byte apart from those timings.

Exit codes: 0 success, 2 configuration error, 3 numerical abort,
4 missing upstream artifact.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .case import PARAM_NAMES, VIRTUAL_PTV, CaseDefinition, CaseError, GeudParams, load_case, save_case
from .decision import ReducedFront, default_k, reduce, render_reports
from .dosecore import NumericalAbort, default_params, dose, link_virtual
from .eudgd import GdConfig, optimize, read_fluence_csv, write_fluence_csv
from .evalmo import evaluate_plan, write_dvh_csv, write_evaluation_csv
from .evoltuning import PlanRecord, TunerConfig, decode, encode
from .evoltuning import run as tune_run
from .pareto import ArchiveEntry
from .phantom import PRESETS, generate_phantom, load_deposition, load_spec, preset, save_deposition, spec_to_dict

log = logging.getLogger("bilevel_rt")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_MISSING = 0, 2, 3, 4
THREADS_ENV = "BILEVEL_RT_THREADS"


class ConfigError(Exception):
    pass


class MissingArtifact(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing {what}: expected {path}")
    return path


def _num(v: float) -> str:
    return f"{v:.17g}"


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _versions() -> dict:
    return {"bilevel_rt": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _write_manifest(out: Path, command: str, config: dict, inputs: dict, outputs, seed, started: float,
                    name: str = "manifest.json") -> None:
    manifest = {
        "command": command,
        "config": config,
        "config_hash": hashlib.sha256(_canonical(config).encode()).hexdigest(),
        "seed": seed,
        "inputs": {k: os.path.relpath(v, out) for k, v in inputs.items()},
        "outputs": sorted(os.path.relpath(p, out) for p in outputs),
        "versions": _versions(),
        "timings": {"wall_seconds": round(time.perf_counter() - started, 6)},
    }
    _write_json(manifest, out / name)


def _read_manifest(d: Path) -> dict:
    return json.loads(_require(d / "manifest.json", "run manifest").read_text(encoding="utf-8"))


def _load_case_dir(case_dir: Path):
    case = load_case(_require(case_dir / "case.json", "case definition"))
    D = load_deposition(_require(case_dir / "deposition.csv", "deposition matrix"))
    if D.shape != (case.grid.n_voxels, case.beams.n_beamlets):
        raise ConfigError(f"deposition matrix shape {D.shape} does not match the case "
                          f"({case.grid.n_voxels} voxels, {case.beams.n_beamlets} beamlets)")
    return case, D


def _upstream_case_dir(d: Path) -> Path:
    m = _read_manifest(d)
    if "case_dir" not in m.get("inputs", {}):
        raise ConfigError(f"{d / 'manifest.json'} does not name a case directory")
    return (d / m["inputs"]["case_dir"]).resolve()


def _gd_config(args) -> GdConfig:
    if args.steps < 1:
        raise ConfigError(f"--steps must be >= 1, got {args.steps}")
    kw = {"steps": args.steps, "smoothing": not args.no_smoothing}
    if args.step_size is not None:
        kw["step_size"] = args.step_size
    if args.x_max is not None:
        kw["x_max"] = args.x_max
    try:
        return GdConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_phi(path: Path, case: CaseDefinition) -> dict:
    """Read ``{structure: {eud0, a, n}}`` overrides onto the case defaults.

    Only tunable scalars are range checked; virtual PTVs are always re-derived.
    """
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object mapping structure ids to parameters")
    params = default_params(case)
    for sid, values in raw.items():
        try:
            s = case.structure(sid)
        except KeyError:
            raise ConfigError(f"{path}: unknown structure {sid!r}") from None
        if s.kind == VIRTUAL_PTV:
            raise ConfigError(f"{path}: {sid!r} is a virtual PTV; its parameters follow its parent")
        if sid not in params or not isinstance(values, dict):
            raise ConfigError(f"{path}: structure {sid!r} has no gEUD parameters to set")
        cur = params[sid].as_tuple()
        new = []
        for name, old in zip(PARAM_NAMES, cur):
            v = float(values.get(name, old))
            if name in s.ranges:
                lo, hi = s.ranges[name]
                if not lo <= v <= hi:
                    raise ConfigError(f"{sid}.{name}={v} outside its range [{lo}, {hi}]")
            new.append(v)
        unknown = set(values) - set(PARAM_NAMES)
        if unknown:
            raise ConfigError(f"{path}: unknown parameter(s) {sorted(unknown)} for {sid!r}")
        params[sid] = GeudParams(*new)
    return link_virtual(params, case)


def _write_plan_files(out: Path, x, D, case) -> list[Path]:
    ev = evaluate_plan(dose(D, x), case)
    write_fluence_csv(x, case.beams, out / "fluence.csv")
    write_evaluation_csv(ev, out / "evaluation.csv")
    write_dvh_csv(ev, out / "dvh.csv")
    return [out / "fluence.csv", out / "evaluation.csv", out / "dvh.csv"]


# ---------------------------------------------------------------- commands


def cmd_phantom(args) -> int:
    started = time.perf_counter()
    if (args.spec is None) == (args.preset is None):
        raise ConfigError("give either a spec file or --preset")
    if args.spec is not None:
        spec = load_spec(_require(Path(args.spec), "phantom spec"))
    else:
        spec = preset(args.preset)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    _, case, _, D = generate_phantom(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_case(case, out / "case.json")
    save_deposition(D, out / "deposition.csv")
    config = {"spec": spec_to_dict(spec)}
    _write_manifest(out, "phantom", config, {}, [out / "case.json", out / "deposition.csv"], spec.seed, started)
    log.info("wrote %s (%d voxels, %d beamlets, %d nonzeros)", out, D.shape[0], D.shape[1], D.nnz)
    return EXIT_OK


def cmd_optimize(args) -> int:
    started = time.perf_counter()
    case_dir = Path(args.case_dir)
    case, D = _load_case_dir(case_dir)
    gd = _gd_config(args)
    params = load_phi(_require(Path(args.phi), "parameter file"), case) if args.phi else default_params(case)
    res = optimize(D, case, params, gd)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = _write_plan_files(out, res.x_star, D, case)
    obj = evaluate_plan(dose(D, res.x_star), case).objectives
    summary = {
        "params": {sid: dict(zip(PARAM_NAMES, map(_num, p.as_tuple()))) for sid, p in sorted(params.items())},
        "final_logF": _num(res.final_logF),
        "step_size": _num(res.step_size),
        "objectives": [_num(v) for v in obj],
    }
    _write_json(summary, out / "plan.json")
    outputs.append(out / "plan.json")
    _write_manifest(out, "optimize", {"gd": gd.as_dict(), "params": summary["params"]},
                    {"case_dir": case_dir}, outputs, gd.seed, started)
    log.info("objectives %s", [round(v, 4) for v in obj])
    return EXIT_OK


def _jobs(args) -> int:
    if args.jobs is not None:
        return args.jobs
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}={env!r} is not an integer") from None
    return 1


def cmd_tune(args) -> int:
    started = time.perf_counter()
    case_dir = Path(args.case_dir)
    case, D = _load_case_dir(case_dir)
    gd = _gd_config(args)
    try:
        cfg = TunerConfig(population=args.pop, generations=args.gens, seed=args.seed, jobs=_jobs(args))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    result = tune_run(D, case, cfg, gd)
    out = Path(args.out)
    (out / "fluence").mkdir(parents=True, exist_ok=True)
    for old in (out / "fluence").glob("plan_*.csv"):
        old.unlink()
    m = case.n_objectives
    outputs = [out / "archive.csv", out / "history.csv"]
    with open(out / "archive.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plan", "index", *(g.name for g in result.genes), *(f"f{i}" for i in range(m)), "logF"])
        for i, e in enumerate(result.archive.entries):
            w.writerow([i, e.index, *map(_num, e.genotype), *map(_num, e.objectives), _num(e.payload.logF)])
            write_fluence_csv(e.payload.x_star, case.beams, out / "fluence" / f"plan_{i}.csv")
            outputs.append(out / "fluence" / f"plan_{i}.csv")
    with open(out / "history.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "archive_size", *(f"best_f{i}" for i in range(m)), "hypervolume"])
        for h in result.history:
            w.writerow([h.generation, h.archive_size, *map(_num, h.best), _num(h.hypervolume)])
    config = {"tuner": {k: v for k, v in cfg.as_dict().items() if k != "jobs"}, "gd": gd.as_dict()}
    _write_manifest(out, "tune", config, {"case_dir": case_dir}, outputs, cfg.seed, started)
    log.info("archive of %d plans after %d inner runs", len(result.archive), result.inner_runs)
    return EXIT_OK


def load_archive(archive_dir: Path, case: CaseDefinition) -> list[ArchiveEntry]:
    """Rebuild archive entries (genotype, objectives, fluence) from a tune directory."""
    path = _require(archive_dir / "archive.csv", "archive table")
    genes = encode(case)
    entries = []
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    m = case.n_objectives
    for row in rows:
        g = np.array([float(row[x.name]) for x in genes])
        f = np.array([float(row[f"f{i}"]) for i in range(m)])
        x = read_fluence_csv(_require(archive_dir / "fluence" / f"plan_{row['plan']}.csv", "plan fluence"),
                             case.beams)
        entries.append(ArchiveEntry(int(row["index"]), g, f, PlanRecord(decode(g, case, genes), x,
                                                                        float(row["logF"]))))
    if not entries:
        raise ConfigError(f"{path} holds no plans")
    return entries


def cmd_reduce(args) -> int:
    started = time.perf_counter()
    archive_dir = Path(args.archive_dir)
    case_dir = _upstream_case_dir(archive_dir)
    case, D = _load_case_dir(case_dir)
    entries = load_archive(archive_dir, case)
    k = default_k(case.n_objectives) if args.k is None else args.k
    try:
        front = reduce(entries, k)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out) if args.out else archive_dir / "reduced"
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "front.csv"]
    m = case.n_objectives
    with open(out / "front.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plan", "archive_index", "selection", *(f"f{i}" for i in range(m))])
        for i, (e, tag) in enumerate(zip(front.plans, front.tags)):
            w.writerow([i, e.index, tag, *map(_num, e.objectives)])
            pdir = out / f"plan_{i}"
            pdir.mkdir(exist_ok=True)
            write_fluence_csv(e.payload.x_star, case.beams, pdir / "fluence.csv")
            outputs.append(pdir / "fluence.csv")
    _write_manifest(out, "reduce", {"k": k}, {"case_dir": case_dir, "archive_dir": archive_dir},
                    outputs, None, started)
    log.info("selected %d of %d plans", len(front), len(entries))
    return EXIT_OK


def cmd_report(args) -> int:
    """Report on a reduced front (``front.csv`` + ``plan_<i>/``) or a single plan directory."""
    started = time.perf_counter()
    target = Path(args.dir)
    case_dir = _upstream_case_dir(target)
    case, D = _load_case_dir(case_dir)
    nz = case.grid.dims[2]
    if not 0 <= args.z < nz:
        raise ConfigError(f"--z {args.z} outside the grid (0..{nz - 1})")
    if (target / "front.csv").exists():
        with open(target / "front.csv", encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        plan_dirs = [target / f"plan_{r['plan']}" for r in rows]
        out = target
    else:
        plan_dirs = [target]
        out = target / "report"
    entries = []
    for i, pdir in enumerate(plan_dirs):
        x = read_fluence_csv(_require(pdir / "fluence.csv", "plan fluence"), case.beams)
        entries.append(ArchiveEntry(i, np.zeros(0), np.zeros(0), PlanRecord({}, x, float("nan"))))
    front = ReducedFront(tuple(entries), ("",) * len(entries))
    written = render_reports(front, case, D, out, args.z)
    _write_manifest(out, "report", {"z": args.z}, {"case_dir": case_dir}, written, None, started,
                    name="report_manifest.json")
    log.info("wrote %d report files under %s", len(written), out)
    return EXIT_OK


# ---------------------------------------------------------------- argument parsing


def _add_gd_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, default=500, help="gradient steps per inner run")
    p.add_argument("--step-size", type=float, default=None, help="fixed step size (default: calibrated)")
    p.add_argument("--x-max", type=float, default=None, help="beamlet intensity cap")
    p.add_argument("--no-smoothing", action="store_true", help="disable per-step fluence smoothing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bilevel-rt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic case and its deposition matrix")
    p.add_argument("spec", nargs="?", help="phantom spec JSON")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--seed", type=int, default=None, help="override the phantom seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("optimize", help="single inner optimization for given gEUD parameters")
    p.add_argument("case_dir")
    p.add_argument("--phi", help="JSON of parameter overrides")
    p.add_argument("--out", required=True)
    _add_gd_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("tune", help="evolutionary tuning of the gEUD parameters")
    p.add_argument("case_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--pop", type=int, default=150)
    p.add_argument("--gens", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=None, help=f"parallel evaluations (fallback: ${THREADS_ENV})")
    _add_gd_flags(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("reduce", help="select a small, well-spread subset of the archive")
    p.add_argument("archive_dir")
    p.add_argument("--k", type=int, default=None, help="plans to keep (default: objectives + 5)")
    p.add_argument("--out", default=None, help="default: <archive_dir>/reduced")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("report", help="DVH, dose-slice and comparison reports")
    p.add_argument("dir", help="reduced front directory or single plan directory")
    p.add_argument("--z", type=int, default=0, help="axial slice index")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, CaseError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
