"""Acceptance criteria 1-10, one test each.

Every test prints a single ``[criterion N] PASS|FAIL ...`` line (outside
pytest's capture) before asserting, so the verdicts appear in the log of a
plain ``pytest -v`` run.
"""

import json
import math
import time

import numpy as np
import pytest
from conftest import random_case
from test_decision import oracle_check
from test_evalmo import brute_dx, brute_violation_total

from bilevel_rt.case import VIRTUAL_PTV
from bilevel_rt.cli import main
from bilevel_rt.decision import MINIMIZER, reduce
from bilevel_rt.dosecore import default_params, dose, geud, grad_logF, objective_F
from bilevel_rt.eudgd import GdConfig, optimize
from bilevel_rt.evalmo import derive_ptv_bounds, dvh, dx_percent, evaluate_plan, f0
from bilevel_rt.evoltuning import (
    TunerConfig,
    bounds_arrays,
    decode,
    encode,
    polynomial_mutation,
    run,
    sbx,
)
from bilevel_rt.pareto import ParetoArchive, dominates
from bilevel_rt.phantom import generate_phantom, preset


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail

    return emit


def pairwise_nondominated(points):
    pts = [np.asarray(p) for p in points]
    return all(not dominates(p, q) for i, p in enumerate(pts) for j, q in enumerate(pts) if i != j)


def test_criterion_1_gradient(verdict, rng):
    t0 = time.perf_counter()
    worst, h = 0.0, 1e-6
    for _ in range(100):
        nb = 2 * int(rng.integers(3, 16))
        case, D = random_case(rng, n_voxels=int(rng.integers(20, 201)), n_beamlets=nb)
        x = rng.uniform(0.05, 1.0, nb)
        p = default_params(case)
        g = grad_logF(D, x, p, case)
        for j in range(nb):
            e = np.zeros(nb)
            e[j] = h
            fd = (objective_F(D, x + e, p, case)[1] - objective_F(D, x - e, p, case)[1]) / (2 * h)
            scale = max(abs(g[j]), abs(fd))
            if scale > 0:
                worst = max(worst, abs(g[j] - fd) / scale)
    elapsed = time.perf_counter() - t0
    verdict(1, worst < 1e-5 and elapsed < 30, f"100 triples, worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_generalized_mean(verdict, rng):
    bad = []
    exps = [-100, -50, -10, -2, -1, -0.5, 0.5, 1, 2, 10, 50, 100]
    for i in range(1000):
        d = rng.uniform(0.01, 80, int(rng.integers(1, 60)))
        if abs(geud(d, 1) - d.mean()) > 1e-12 * max(1.0, d.mean()):
            bad.append(("mean", i))
        vals = [geud(d, a) for a in exps]
        if any(not math.isfinite(v) for v in vals):
            bad.append(("finite", i))
        if any(b < a * (1 - 1e-12) for a, b in zip(vals, vals[1:])):
            bad.append(("monotone", i))
        if vals[0] < d.min() * (1 - 1e-12) or vals[-1] > d.max() * (1 + 1e-12):
            bad.append(("sandwich", i))
    extreme = np.array([1e-6, 1e-3, 0.5, 80.0, 120.0])
    for a in (-100, 100):
        v = geud(extreme, a)
        if not (math.isfinite(v) and extreme.min() <= v <= extreme.max()):
            bad.append(("extreme", a))
    verdict(2, not bad, f"1000 vectors x {len(exps)} exponents, failures {bad[:3]}")


def test_criterion_3_inner_ascent(verdict):
    _, case, _, D = generate_phantom(preset("desk"))
    res = optimize(D, case, default_params(case), GdConfig(steps=1000, smoothing=False, record=True))
    drops = np.diff(res.trajectory)
    ok = drops.size == 1000 and drops.min() >= -1e-12
    verdict(3, ok, f"1000 steps, min increment {drops.min():.3e}, logF {res.trajectory[0]:.4f} -> "
                   f"{res.trajectory[-1]:.4f}")


def test_criterion_4_virtual_linkage(verdict):
    checked, broken = 0, 0
    for name in ("desk_single", "headneck"):
        _, case, _, _ = generate_phantom(preset(name))
        genes = encode(case)
        lo, hi = bounds_arrays(genes)
        rng = np.random.default_rng(7)
        for _ in range(300):
            a, b = sbx(rng.uniform(lo, hi), rng.uniform(lo, hi), lo, hi, rng)
            for child in (polynomial_mutation(a, lo, hi, rng), polynomial_mutation(b, lo, hi, rng, prob=1.0)):
                p = decode(child, case, genes)
                for s in case.by_kind(VIRTUAL_PTV):
                    t = p[s.parent]
                    checked += 1
                    v = p[s.id]
                    broken += not (v.eud0 == t.eud0 + 1.0 and v.a == -t.a and v.n == t.n)
    verdict(4, checked > 0 and broken == 0, f"{checked} virtual PTV checks after SBX/mutation, {broken} broken")


@pytest.fixture(scope="module")
def tuned_desk():
    _, case, _, D = generate_phantom(preset("desk_single"))
    gd = GdConfig(steps=500)
    cfg = TunerConfig(population=20, generations=10, seed=0, jobs=1)
    violations = []

    def check(gen, archive):
        if not pairwise_nondominated([e.objectives for e in archive]):
            violations.append(gen)

    t0 = time.perf_counter()
    first = run(D, case, cfg, gd, on_generation=check)
    elapsed = time.perf_counter() - t0
    second = run(D, case, cfg, gd)
    return case, D, gd, first, second, elapsed, violations


def _archive_bytes(res):
    return [(e.genotype.tobytes(), e.objectives.tobytes(), e.payload.x_star.tobytes()) for e in res.archive]


def test_criterion_5_multiobjective_integrity(verdict, tuned_desk):
    _, _, _, first, second, elapsed, violations = tuned_desk
    same = _archive_bytes(first) == _archive_bytes(second)
    generations = len(first.history)
    ok = not violations and same and elapsed < 300 and generations == 11
    verdict(5, ok, f"K=20 G=10: {generations} archive checks, {len(violations)} violations, "
                   f"bitwise identical={same}, {elapsed:.1f}s, archive {len(first.archive)}")


def test_criterion_6_bilevel_benefit(verdict, tuned_desk):
    case, D, gd, first, _, _, _ = tuned_desk
    base = optimize(D, case, default_params(case), gd)
    f_base = evaluate_plan(dose(D, base.x_star), case).objectives
    front = reduce(first.archive)
    feasible = [p.objectives[1] for p in front.plans if p.objectives[0] == 0.0]
    best = min(feasible, default=math.inf)
    ok = f_base[0] == 0.0 and best <= 0.95 * f_base[1]
    verdict(6, ok, f"default-parameter plan f0={f_base[0]:.3g} gland mean {f_base[1]:.3f} Gy; "
                   f"best reduced-front f0=0 plan {best:.3f} Gy ({100 * (1 - best / f_base[1]):.1f}% lower)")


def test_criterion_7_decision_contract(verdict, tuned_desk):
    _, _, _, first, _, _, _ = tuned_desk
    problems = []
    for k in (2, 3, 7, len(first.archive)):
        front = reduce(first.archive, k)
        try:
            oracle_check(first.archive, front)
        except AssertionError as exc:
            problems.append((k, str(exc)[:80]))
    a = ParetoArchive()
    for i, p in enumerate([[0.0, 10.0], [0.2, 4.0], [0.5, 3.0], [30.0, 0.0]]):
        a.insert([i], p)
    small = reduce(a, 3)
    kept = [p.objectives[0] for p, t in zip(small.plans, small.tags) if t != MINIMIZER]
    if not any(0 < v < 1 for v in kept):
        problems.append(("small f0 filtered", kept))
    verdict(7, not problems, f"archive of {len(first.archive)} reduced at k=2,3,7,all; problems {problems}")


def test_criterion_8_evaluation_oracles(verdict, rng):
    bad = []
    for i in range(1000):
        case, _ = random_case(rng)
        d = rng.uniform(0, 80, case.grid.n_voxels)
        if abs(f0(d, case) - brute_violation_total(d, case)) > 1e-9:
            bad.append(("f0", i))
        x = float(rng.uniform(0.01, 100))
        if dx_percent(d, x) != brute_dx(d.tolist(), x) or dx_percent(d, 100) != d.min():
            bad.append(("dx", i))
        vox = case.structure("ptv").voxels
        h = dvh(d, vox)
        levels = np.linspace(0, 90, 40)
        frac = h.volume_at(levels)
        expect = [sum(1 for j in vox if d[j] >= lv) / vox.size for lv in levels]
        if np.any(np.diff(frac) > 0) or not np.array_equal(frac, expect):
            bad.append(("dvh", i))
    verdict(8, not bad, f"1000 dose vectors, failures {bad[:3]}")


def test_criterion_9_bound_derivation(verdict):
    got = derive_ptv_bounds(54).as_tuple()
    verdict(9, got == (48.60, 52.92, 55.08, 59.40), f"derive_ptv_bounds(54) = {got}")


def _pipeline(root):
    steps = [
        ["phantom", "--preset", "desk_single", "--seed", "5", "--out", root / "case"],
        ["tune", root / "case", "--out", root / "tune", "--pop", "6", "--gens", "2", "--seed", "1",
         "--steps", "100"],
        ["reduce", root / "tune", "--out", root / "front"],
        ["report", root / "front"],
    ]
    return [main([str(a) for a in s]) for s in steps]


def _snapshot(root):
    out = {}
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        blob = p.read_bytes()
        if p.name.endswith("manifest.json"):
            m = json.loads(blob)
            m.pop("timings")
            blob = json.dumps(m, sort_keys=True).encode()
        out[p.relative_to(root).as_posix()] = blob
    return out


def test_criterion_10_pipeline_reproducible(verdict, tmp_path):
    codes = _pipeline(tmp_path / "a") + _pipeline(tmp_path / "b")
    a, b = _snapshot(tmp_path / "a"), _snapshot(tmp_path / "b")
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = codes == [0] * 8 and not differing and len(a) > 10
    verdict(10, ok, f"exit codes {codes}, {len(a)} files compared, differing {differing[:3]}")
