"""Upper-level tuner: MOEA/D over the tunable gEUD parameters.

Each subproblem is a weighted-Tchebycheff scalarization of the objective
tuple (f0, f_1, ..., f_|P|).  Generations are synchronous: every subproblem
produces one offspring from its neighbourhood, the whole batch is evaluated
(optionally in parallel), then neighbour replacement and archive insertion run
serially in subproblem order, so results do not depend on completion order.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .case import PARAM_NAMES, CaseDefinition, GeudParams
from .dosecore import NumericalAbort, ParamVector, default_params, dose, link_virtual
from .eudgd import GdConfig, optimize
from .evalmo import objectives
from .pareto import ParetoArchive, hypervolume

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Gene:
    structure: str
    param: str
    lo: float
    hi: float

    @property
    def name(self) -> str:
        return f"{self.structure}.{self.param}"


def encode(case: CaseDefinition) -> list[Gene]:
    """Genotype layout: tunable scalars in structure order, then (eud0, a, n) order."""
    genes = []
    for s in case.structures:
        for p in PARAM_NAMES:
            if p in s.ranges:
                lo, hi = s.ranges[p]
                genes.append(Gene(s.id, p, float(lo), float(hi)))
    return genes


def bounds_arrays(genes: list[Gene]) -> tuple[np.ndarray, np.ndarray]:
    return np.array([g.lo for g in genes]), np.array([g.hi for g in genes])


def decode(genotype, case: CaseDefinition, genes: list[Gene] | None = None) -> ParamVector:
    """ParamVector with tunable scalars taken from ``genotype``; virtual PTVs re-linked."""
    genes = encode(case) if genes is None else genes
    genotype = np.asarray(genotype, dtype=float)
    if genotype.shape != (len(genes),):
        raise ValueError(f"genotype has length {genotype.size}, case has {len(genes)} tunable scalars")
    params = default_params(case)
    for g, v in zip(genes, genotype.tolist()):
        old = params[g.structure]
        params[g.structure] = GeudParams(**{**{k: old.get(k) for k in PARAM_NAMES}, g.param: float(v)})
    return link_virtual(params, case)


def default_genotype(case: CaseDefinition, genes: list[Gene] | None = None) -> np.ndarray:
    """Literature values of the tunable scalars, clipped into their ranges."""
    genes = encode(case) if genes is None else genes
    lo, hi = bounds_arrays(genes)
    vals = np.array([case.structure(g.structure).params.get(g.param) for g in genes], dtype=float)
    return np.clip(vals, lo, hi)


@dataclass(frozen=True)
class TunerConfig:
    """MOEA/D settings; ``neighborhood=None`` means max(2, ceil(0.13 * K)) capped at K."""

    population: int = 150
    generations: int = 50
    neighborhood: int | None = None
    eta_c: float = 20.0
    p_c: float = 1.0
    eta_m: float = 20.0
    p_m: float | None = None
    seed: int = 0
    jobs: int = 1
    stagnation_eps: float | None = None
    stagnation_window: int = 5

    def __post_init__(self):
        if self.population < 2:
            raise ValueError(f"population must be >= 2, got {self.population}")
        if self.generations < 1:
            raise ValueError(f"generations must be >= 1, got {self.generations}")
        t = self.neighbors
        if not 2 <= t <= self.population:
            raise ValueError(f"neighbourhood size must lie in [2, {self.population}], got {t}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    @property
    def neighbors(self) -> int:
        if self.neighborhood is not None:
            return int(self.neighborhood)
        return min(self.population, max(2, math.ceil(0.13 * self.population)))

    def as_dict(self) -> dict:
        return {
            "population": self.population,
            "generations": self.generations,
            "neighborhood": self.neighbors,
            "eta_c": self.eta_c,
            "p_c": self.p_c,
            "eta_m": self.eta_m,
            "p_m": self.p_m,
            "seed": self.seed,
            "stagnation_eps": self.stagnation_eps,
            "stagnation_window": self.stagnation_window,
        }


# ---------------------------------------------------------------- evaluation


@dataclass
class Evaluation:
    objectives: np.ndarray
    x_star: np.ndarray | None
    logF: float
    feasible: bool = True
    error: str = ""


def evaluate_genotype(genotype, D, case: CaseDefinition, gd: GdConfig, genes=None) -> Evaluation:
    """Inner optimization followed by the objective tuple; aborts give +inf objectives."""
    params = decode(genotype, case, genes)
    try:
        res = optimize(D, case, params, gd)
    except NumericalAbort as exc:
        return Evaluation(np.full(case.n_objectives, np.inf), None, -np.inf, False, str(exc))
    return Evaluation(objectives(dose(D, res.x_star), case), res.x_star, res.final_logF)


_WORKER: dict = {}


def _init_worker(D, case, gd, genes):
    _WORKER.update(D=D, case=case, gd=gd, genes=genes)


def _work(genotype):
    return evaluate_genotype(genotype, _WORKER["D"], _WORKER["case"], _WORKER["gd"], _WORKER["genes"])


class Evaluator:
    """Cached map genotype -> Evaluation, optionally spread over worker processes."""

    def __init__(self, D, case: CaseDefinition, gd: GdConfig, jobs: int = 1):
        self.D, self.case, self.gd, self.jobs = D, case, gd, int(jobs)
        self.genes = encode(case)
        self.cache: dict[bytes, Evaluation] = {}
        self.inner_runs = 0
        self._pool = None

    def __enter__(self):
        if self.jobs > 1:
            self._pool = ProcessPoolExecutor(
                self.jobs, initializer=_init_worker, initargs=(self.D, self.case, self.gd, self.genes)
            )
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    @staticmethod
    def key(genotype) -> bytes:
        return np.ascontiguousarray(genotype, dtype=np.float64).tobytes()

    def evaluate(self, genotype) -> Evaluation:
        return self.evaluate_many([genotype])[0]

    def evaluate_many(self, genotypes) -> list[Evaluation]:
        missing, seen = [], set()
        for g in genotypes:
            k = self.key(g)
            if k not in self.cache and k not in seen:
                seen.add(k)
                missing.append(np.asarray(g, dtype=float))
        if missing:
            if self._pool is not None:
                results = list(self._pool.map(_work, missing))
            else:
                results = [evaluate_genotype(g, self.D, self.case, self.gd, self.genes) for g in missing]
            for g, r in zip(missing, results):
                self.cache[self.key(g)] = r
            self.inner_runs += len(missing)
        return [self.cache[self.key(g)] for g in genotypes]


# ---------------------------------------------------------------- variation


def sbx(p1, p2, lo, hi, rng, eta=20.0, prob=1.0):
    """Bounded simulated binary crossover; returns two children."""
    c1, c2 = p1.copy(), p2.copy()
    if rng.random() > prob:
        return c1, c2
    for i in range(p1.size):
        u_swap = rng.random()
        u = rng.random()
        if u_swap > 0.5 or abs(p1[i] - p2[i]) <= 1e-14 or hi[i] <= lo[i]:
            continue
        y1, y2 = min(p1[i], p2[i]), max(p1[i], p2[i])
        span = y2 - y1

        def child(beta):
            alpha = 2.0 - beta ** -(eta + 1.0)
            if u <= 1.0 / alpha:
                betaq = (u * alpha) ** (1.0 / (eta + 1.0))
            else:
                betaq = (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0))
            return betaq

        bq1 = child(1.0 + 2.0 * (y1 - lo[i]) / span)
        bq2 = child(1.0 + 2.0 * (hi[i] - y2) / span)
        v1 = np.clip(0.5 * ((y1 + y2) - bq1 * span), lo[i], hi[i])
        v2 = np.clip(0.5 * ((y1 + y2) + bq2 * span), lo[i], hi[i])
        if rng.random() <= 0.5:
            v1, v2 = v2, v1
        c1[i], c2[i] = v1, v2
    return c1, c2


def polynomial_mutation(x, lo, hi, rng, eta=20.0, prob=None):
    """Bounded polynomial mutation; per-gene probability defaults to 1/len."""
    y = x.copy()
    if y.size == 0:
        return y
    prob = 1.0 / y.size if prob is None else prob
    for i in range(y.size):
        if rng.random() > prob or hi[i] <= lo[i]:
            continue
        span = hi[i] - lo[i]
        d1 = (y[i] - lo[i]) / span
        d2 = (hi[i] - y[i]) / span
        u = rng.random()
        mp = 1.0 / (eta + 1.0)
        if u < 0.5:
            val = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1) ** (eta + 1.0)
            dq = val**mp - 1.0
        else:
            val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2) ** (eta + 1.0)
            dq = 1.0 - val**mp
        y[i] = np.clip(y[i] + dq * span, lo[i], hi[i])
    return y


# ---------------------------------------------------------------- decomposition


def _lattice(h: int, m: int) -> np.ndarray:
    pts = []
    for bars in combinations(range(h + m - 1), m - 1):
        prev, parts = -1, []
        for b in bars:
            parts.append(b - prev - 1)
            prev = b
        parts.append(h + m - 2 - prev)
        pts.append(parts)
    return np.array(pts, dtype=float) / h


def uniform_weights(k: int, m: int) -> np.ndarray:
    """``k`` weight vectors spread over the (m-1)-simplex.

    Two objectives use an even grid.  For more, the smallest simplex lattice
    with at least ``k`` points is thinned by farthest-point selection, starting
    from the unit vectors.
    """
    if m == 1:
        return np.ones((k, 1))
    if m == 2:
        t = np.linspace(0.0, 1.0, k)
        return np.stack([t, 1.0 - t], axis=1)
    h = 1
    while math.comb(h + m - 1, m - 1) < k:
        h += 1
    lat = _lattice(h, m)
    chosen = [int(np.flatnonzero(np.isclose(lat[:, i], 1.0))[0]) for i in range(m)][:k]
    dmin = np.min(np.linalg.norm(lat[:, None, :] - lat[chosen][None, :, :], axis=2), axis=1)
    while len(chosen) < k:
        j = int(np.argmax(dmin))
        chosen.append(j)
        dmin = np.minimum(dmin, np.linalg.norm(lat - lat[j], axis=1))
    return lat[chosen]


def neighborhoods(weights: np.ndarray, t: int) -> np.ndarray:
    dist = np.linalg.norm(weights[:, None, :] - weights[None, :, :], axis=2)
    return np.argsort(dist, axis=1, kind="stable")[:, :t]


def tchebycheff(f, w, z) -> float:
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        return np.inf
    return float(np.max(np.maximum(w, 1e-6) * np.abs(f - z)))


# ---------------------------------------------------------------- main loop


@dataclass
class PlanRecord:
    """Archive payload: decoded parameters and the optimized fluence."""

    params: ParamVector
    x_star: np.ndarray
    logF: float


@dataclass
class GenerationLog:
    generation: int
    archive_size: int
    best: np.ndarray
    hypervolume: float | None = None


@dataclass
class TuningRun:
    archive: ParetoArchive
    genes: list[Gene]
    population: np.ndarray
    fitness: np.ndarray
    history: list[GenerationLog] = field(default_factory=list)
    inner_runs: int = 0
    stopped_early: bool = False


def run(D, case: CaseDefinition, cfg: TunerConfig, gd: GdConfig, on_generation=None) -> TuningRun:
    """Search the tunable parameters for mutually nondominated plans.

    ``on_generation(gen, archive)`` is called after the initial population
    (gen 0) and after every generation.
    """
    rng = np.random.default_rng(cfg.seed)
    genes = encode(case)
    lo, hi = bounds_arrays(genes)
    k, m = cfg.population, case.n_objectives
    weights = uniform_weights(k, m)
    hood = neighborhoods(weights, cfg.neighbors)

    pop = np.empty((k, len(genes)))
    pop[0] = default_genotype(case, genes)
    for i in range(1, k):
        pop[i] = rng.uniform(lo, hi)

    archive = ParetoArchive()
    history: list[GenerationLog] = []

    def absorb(genotype, ev: Evaluation):
        if ev.feasible:
            archive.insert(genotype, ev.objectives, PlanRecord(decode(genotype, case, genes), ev.x_star, ev.logF))

    with Evaluator(D, case, gd, cfg.jobs) as evaluator:
        evals = evaluator.evaluate_many(list(pop))
        fit = np.array([e.objectives for e in evals])
        finite = fit[np.all(np.isfinite(fit), axis=1)]
        z = finite.min(axis=0) if len(finite) else np.zeros(m)
        for g, e in zip(pop, evals):
            absorb(g, e)
        ref = _hv_reference(finite, m)
        history.append(_log(0, archive, ref))
        if on_generation:
            on_generation(0, archive)
        stalled, stopped = 0, False
        for gen in range(1, cfg.generations + 1):
            children = []
            for i in range(k):
                a, b = rng.choice(hood[i], size=2, replace=False)
                c1, _ = sbx(pop[a], pop[b], lo, hi, rng, cfg.eta_c, cfg.p_c)
                children.append(polynomial_mutation(c1, lo, hi, rng, cfg.eta_m, cfg.p_m))
            child_evals = evaluator.evaluate_many(children)
            for i in range(k):
                child, ev = children[i], child_evals[i]
                if ev.feasible:
                    z = np.minimum(z, ev.objectives)
                for j in hood[i]:
                    if tchebycheff(ev.objectives, weights[j], z) < tchebycheff(fit[j], weights[j], z):
                        pop[j] = child
                        fit[j] = ev.objectives
                absorb(child, ev)
            entry = _log(gen, archive, ref)
            history.append(entry)
            log.info("generation %d: archive %d, best %s", gen, len(archive), np.round(entry.best, 4).tolist())
            if on_generation:
                on_generation(gen, archive)
            if cfg.stagnation_eps is not None:
                change = abs(entry.hypervolume - history[-2].hypervolume)
                stalled = stalled + 1 if change < cfg.stagnation_eps else 0
                if stalled >= cfg.stagnation_window:
                    stopped = True
                    break
        inner = evaluator.inner_runs
    return TuningRun(archive, genes, pop, fit, history, inner, stopped)


def _hv_reference(finite: np.ndarray, m: int) -> np.ndarray:
    if len(finite) == 0:
        return np.ones(m)
    return finite.max(axis=0) * 1.1 + 1.0


def _log(gen: int, archive: ParetoArchive, ref) -> GenerationLog:
    if len(archive) == 0:
        return GenerationLog(gen, 0, np.full(ref.size, np.inf), 0.0)
    objs = archive.objectives()
    return GenerationLog(gen, len(archive), objs.min(axis=0), hypervolume(objs, ref))
