"""Case description shared by every stage of the planner.

A case bundles the voxel grid, the structures (with their masks, gEUD
parameters, search ranges and dose bounds), the beam layout and the set of
priority objectives.  Cases are immutable; helpers return modified copies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

PTV = "PTV"
OAR_PARALLEL = "OAR_parallel"
OAR_SERIAL = "OAR_serial"
VIRTUAL_PTV = "virtual_PTV"
NORMAL_TISSUE = "normal_tissue"
KINDS = (PTV, OAR_PARALLEL, OAR_SERIAL, VIRTUAL_PTV, NORMAL_TISSUE)

PARAM_NAMES = ("eud0", "a", "n")

# Literature parameters for normal tissue (EUD0, a, n).
NORMAL_TISSUE_PARAMS = (74.25, 40.0, 5.0)


class CaseError(ValueError):
    """Raised for malformed or inconsistent case definitions."""


@dataclass(frozen=True)
class VoxelGrid:
    dims: tuple[int, int, int]
    spacing: float = 1.0

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise CaseError(f"grid dims must be three positive integers, got {self.dims}")
        if not self.spacing > 0:
            raise CaseError(f"grid spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def index(self, ix, iy, iz):
        """Flat voxel index; x varies slowest, z fastest."""
        nx, ny, nz = self.dims
        return (np.asarray(ix) * ny + np.asarray(iy)) * nz + np.asarray(iz)

    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integer (ix, iy, iz) of every voxel in flat-index order."""
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        return ix.ravel(), iy.ravel(), iz.ravel()


@dataclass(frozen=True)
class GeudParams:
    """gEUD reference dose, exponent and steepness for one structure."""

    eud0: float
    a: float
    n: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.eud0, self.a, self.n)

    def get(self, name: str) -> float:
        return getattr(self, name)


@dataclass(frozen=True)
class Bounds:
    """Dose bounds in Gy; None means undefined.

    ``lb``/``ub`` bound the minimal/maximal voxel dose, ``lb_mean``/``ub_mean``
    bound the average dose.
    """

    lb: float | None = None
    lb_mean: float | None = None
    ub_mean: float | None = None
    ub: float | None = None

    def __post_init__(self):
        defined = [v for v in (self.lb, self.lb_mean, self.ub_mean, self.ub) if v is not None]
        if any(b < a for a, b in zip(defined, defined[1:])):
            raise CaseError(f"bounds must satisfy LB <= LBmean <= UBmean <= UB, got {self.as_tuple()}")

    def as_tuple(self):
        return (self.lb, self.lb_mean, self.ub_mean, self.ub)

    def is_empty(self) -> bool:
        return all(v is None for v in self.as_tuple())


@dataclass(frozen=True)
class DxMetric:
    """Dose-volume check: D<percent>% compared to ``bound`` with ``sense``."""

    percent: float
    bound: float
    sense: str  # ">=" or "<="

    def __post_init__(self):
        if self.sense not in (">=", "<="):
            raise CaseError(f"Dx sense must be '>=' or '<=', got {self.sense!r}")
        if not 0 < self.percent <= 100:
            raise CaseError(f"Dx percent must lie in (0, 100], got {self.percent}")

    @property
    def label(self) -> str:
        return f"D{self.percent:g}%"


@dataclass(frozen=True, eq=False)
class Structure:
    id: str
    kind: str
    voxels: np.ndarray
    params: GeudParams | None = None
    ranges: dict[str, tuple[float, float]] = field(default_factory=dict)
    bounds: Bounds = field(default_factory=Bounds)
    dx: tuple[DxMetric, ...] = ()
    prescribed: float | None = None
    parent: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CaseError(f"structure {self.id!r}: unknown kind {self.kind!r}")
        vox = np.unique(np.asarray(self.voxels, dtype=np.int64))
        object.__setattr__(self, "voxels", vox)
        for name, (lo, hi) in self.ranges.items():
            if name not in PARAM_NAMES:
                raise CaseError(f"structure {self.id!r}: unknown tunable parameter {name!r}")
            if lo > hi:
                raise CaseError(f"structure {self.id!r}: empty range for {name}: [{lo}, {hi}]")

    @property
    def is_target(self) -> bool:
        return self.kind == PTV

    @property
    def size(self) -> int:
        return int(self.voxels.size)


@dataclass(frozen=True)
class Beam:
    angle: float  # gantry angle, degrees
    grid: tuple[int, int]  # beamlet rows (along z), beamlet columns (lateral)
    width: float  # beamlet width in mm

    @property
    def n_beamlets(self) -> int:
        return self.grid[0] * self.grid[1]


@dataclass(frozen=True)
class BeamLayout:
    beams: tuple[Beam, ...]

    def __post_init__(self):
        if not self.beams:
            raise CaseError("beam layout needs at least one beam")
        for b in self.beams:
            if b.grid[0] < 1 or b.grid[1] < 1:
                raise CaseError(f"beam at {b.angle} deg has an empty beamlet grid {b.grid}")

    @property
    def n_beamlets(self) -> int:
        return sum(b.n_beamlets for b in self.beams)

    def offsets(self) -> np.ndarray:
        """Start column of each beam in the flat fluence vector (length n_beams + 1)."""
        return np.cumsum([0] + [b.n_beamlets for b in self.beams])


@dataclass(frozen=True)
class Priority:
    """One priority objective f_p over one or more OARs.

    ``mode`` is ``mean`` or ``max``; ``aggregate`` decides how several
    structures combine for ``mean``: ``mean_of_union`` (mean over the union of
    voxels) or ``sum_of_means``.
    """

    id: str
    structures: tuple[str, ...]
    mode: str = "mean"
    aggregate: str = "mean_of_union"

    def __post_init__(self):
        if self.mode not in ("mean", "max"):
            raise CaseError(f"priority {self.id!r}: mode must be mean or max, got {self.mode!r}")
        if self.aggregate not in ("mean_of_union", "sum_of_means"):
            raise CaseError(f"priority {self.id!r}: unknown aggregate {self.aggregate!r}")
        if not self.structures:
            raise CaseError(f"priority {self.id!r} names no structure")


@dataclass(frozen=True, eq=False)
class CaseDefinition:
    grid: VoxelGrid
    structures: tuple[Structure, ...]
    beams: BeamLayout
    priorities: tuple[Priority, ...] = ()
    name: str = "case"

    def __post_init__(self):
        ids = [s.id for s in self.structures]
        if len(set(ids)) != len(ids):
            raise CaseError(f"duplicate structure ids in {ids}")
        nvox = self.grid.n_voxels
        for s in self.structures:
            if s.size and (s.voxels[0] < 0 or s.voxels[-1] >= nvox):
                raise CaseError(f"structure {s.id!r} has voxel indices outside the grid")
        for p in self.priorities:
            for sid in p.structures:
                if sid not in ids:
                    raise CaseError(f"priority {p.id!r} names unknown structure {sid!r}")
                if self.structures[ids.index(sid)].size == 0:
                    raise CaseError(f"priority {p.id!r} names structure {sid!r}, which has no voxels")

    def structure(self, sid: str) -> Structure:
        for s in self.structures:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def by_kind(self, *kinds: str) -> list[Structure]:
        return [s for s in self.structures if s.kind in kinds]

    @property
    def n_objectives(self) -> int:
        return len(self.priorities) + 1

    def with_structures(self, structures) -> CaseDefinition:
        return replace(self, structures=tuple(structures))

    def with_priorities(self, priorities) -> CaseDefinition:
        return replace(self, priorities=tuple(priorities))


# ---------------------------------------------------------------- JSON I/O


def _opt(v):
    return None if v is None else float(v)


def bounds_from_dict(d: dict | None) -> Bounds:
    d = d or {}
    unknown = set(d) - {"lb", "lb_mean", "ub_mean", "ub"}
    if unknown:
        raise CaseError(f"unknown bound keys {sorted(unknown)}")
    return Bounds(_opt(d.get("lb")), _opt(d.get("lb_mean")), _opt(d.get("ub_mean")), _opt(d.get("ub")))


def bounds_to_dict(b: Bounds) -> dict:
    return {k: v for k, v in zip(("lb", "lb_mean", "ub_mean", "ub"), b.as_tuple()) if v is not None}


def params_from_dict(d: dict | None) -> GeudParams | None:
    if d is None:
        return None
    try:
        return GeudParams(float(d["eud0"]), float(d["a"]), float(d["n"]))
    except KeyError as exc:
        raise CaseError(f"gEUD parameters missing field {exc.args[0]!r}") from None


def priority_from_dict(d: dict) -> Priority:
    return Priority(
        id=str(d["id"]),
        structures=tuple(d["structures"]),
        mode=d.get("mode", "mean"),
        aggregate=d.get("aggregate", "mean_of_union"),
    )


def priority_to_dict(p: Priority) -> dict:
    return {"id": p.id, "structures": list(p.structures), "mode": p.mode, "aggregate": p.aggregate}


def structure_to_dict(s: Structure) -> dict[str, Any]:
    out: dict[str, Any] = {"id": s.id, "kind": s.kind}
    if s.parent is not None:
        out["parent"] = s.parent
    if s.prescribed is not None:
        out["prescribed"] = s.prescribed
    if s.params is not None:
        out["params"] = {"eud0": s.params.eud0, "a": s.params.a, "n": s.params.n}
    if s.ranges:
        out["ranges"] = {k: [lo, hi] for k, (lo, hi) in s.ranges.items()}
    if not s.bounds.is_empty():
        out["bounds"] = bounds_to_dict(s.bounds)
    if s.dx:
        out["dx"] = [{"percent": m.percent, "bound": m.bound, "sense": m.sense} for m in s.dx]
    out["voxels"] = s.voxels.tolist()
    return out


def structure_from_dict(d: dict) -> Structure:
    try:
        sid = str(d["id"])
        kind = d["kind"]
        voxels = d["voxels"]
    except KeyError as exc:
        raise CaseError(f"structure entry missing field {exc.args[0]!r}") from None
    return Structure(
        id=sid,
        kind=kind,
        voxels=np.asarray(voxels, dtype=np.int64),
        params=params_from_dict(d.get("params")),
        ranges={k: (float(v[0]), float(v[1])) for k, v in d.get("ranges", {}).items()},
        bounds=bounds_from_dict(d.get("bounds")),
        dx=tuple(DxMetric(float(m["percent"]), float(m["bound"]), m["sense"]) for m in d.get("dx", [])),
        prescribed=_opt(d.get("prescribed")),
        parent=d.get("parent"),
    )


def case_to_dict(case: CaseDefinition) -> dict[str, Any]:
    return {
        "name": case.name,
        "grid": {"dims": list(case.grid.dims), "spacing": case.grid.spacing},
        "beams": [{"angle": b.angle, "grid": list(b.grid), "width": b.width} for b in case.beams.beams],
        "priorities": [priority_to_dict(p) for p in case.priorities],
        "structures": [structure_to_dict(s) for s in case.structures],
    }


def case_from_dict(d: dict) -> CaseDefinition:
    try:
        grid = VoxelGrid(tuple(d["grid"]["dims"]), float(d["grid"].get("spacing", 1.0)))
        beams = BeamLayout(
            tuple(Beam(float(b["angle"]), tuple(int(v) for v in b["grid"]), float(b["width"])) for b in d["beams"])
        )
        structures = tuple(structure_from_dict(s) for s in d["structures"])
    except KeyError as exc:
        raise CaseError(f"case document missing field {exc.args[0]!r}") from None
    return CaseDefinition(
        grid=grid,
        structures=structures,
        beams=beams,
        priorities=tuple(priority_from_dict(p) for p in d.get("priorities", [])),
        name=d.get("name", "case"),
    )


def save_case(case: CaseDefinition, path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=1) + "\n", encoding="utf-8")


def load_case(path) -> CaseDefinition:
    return case_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
