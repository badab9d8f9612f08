"""Synthetic phantom cases: geometry, structures, beams and a sparse deposition matrix.

The deposition model is a parallel pencil beam: a beamlet deposits
``dose_scale * output * exp(-mu * depth) * exp(-lat**2 / (2 * sigma**2))`` in a
voxel, where ``depth`` is the path length (in voxel edge lengths) from the
grid surface to the voxel along the beam axis and ``lat`` is the distance (mm)
between the voxel centre and the beamlet's central ray.  Geometric weights
below ``cutoff`` are not stored.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp

from .case import (
    NORMAL_TISSUE,
    NORMAL_TISSUE_PARAMS,
    OAR_PARALLEL,
    OAR_SERIAL,
    PTV,
    VIRTUAL_PTV,
    Beam,
    BeamLayout,
    CaseDefinition,
    CaseError,
    DxMetric,
    GeudParams,
    Structure,
    VoxelGrid,
    bounds_from_dict,
    params_from_dict,
    priority_from_dict,
)
from .evalmo import derive_ptv_bounds, derive_ptv_dx

VIRTUAL_SUFFIX = "_virtual"
DEFAULT_PTV_PARAMS = (-10.0, 20.0)  # (a, n); EUD0 defaults to the prescription


class PhantomSpecError(CaseError):
    """A phantom spec document is malformed; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class StructureSpec:
    id: str
    kind: str
    shape: str  # "box" or "ellipsoid"
    center: tuple[float, float, float]
    half_size: tuple[float, float, float]
    planning: dict[str, Any] = field(default_factory=dict)


@dataclass
class PhantomSpec:
    dims: tuple[int, int, int] = (40, 40, 1)
    spacing: float = 2.5
    structures: list[StructureSpec] = field(default_factory=list)
    n_beams: int = 5
    start_angle: float = 0.0
    beamlet_grid: tuple[int, int] = (1, 9)
    beamlet_width: float = 4.0
    mu: float = 0.02
    sigma: float = 3.0
    cutoff: float = 1e-4
    dose_scale: float = 100.0
    output_jitter: float = 0.02
    seed: int = 0
    name: str = "phantom"
    normal_tissue: dict[str, Any] = field(default_factory=dict)
    priorities: list[dict[str, Any]] = field(default_factory=list)


def _field(d: dict, key: str, path: str, default=None, required=False):
    if key not in d:
        if required:
            raise PhantomSpecError(f"{path}.{key}", "required field missing")
        return default
    return d[key]


def _vec(value, n, path, cast=float):
    try:
        out = tuple(cast(v) for v in value)
    except (TypeError, ValueError):
        raise PhantomSpecError(path, f"expected a list of {n} numbers, got {value!r}") from None
    if len(out) != n:
        raise PhantomSpecError(path, f"expected {n} entries, got {len(out)}")
    return out


def _num(value, path, cast=float):
    try:
        return cast(value)
    except (TypeError, ValueError):
        raise PhantomSpecError(path, f"expected a number, got {value!r}") from None


def spec_from_dict(d: dict) -> PhantomSpec:
    """Validate a PhantomSpec JSON document, naming the offending field on error."""
    if not isinstance(d, dict):
        raise PhantomSpecError("$", "top level must be an object")
    grid = _field(d, "grid", "$", {})
    beams = _field(d, "beams", "$", {})
    spec = PhantomSpec(
        dims=_vec(_field(grid, "dims", "$.grid", [40, 40, 1]), 3, "$.grid.dims", int),
        spacing=_num(_field(grid, "spacing", "$.grid", 2.5), "$.grid.spacing"),
        n_beams=_num(_field(beams, "count", "$.beams", 5), "$.beams.count", int),
        start_angle=_num(_field(beams, "start_angle", "$.beams", 0.0), "$.beams.start_angle"),
        beamlet_grid=_vec(_field(beams, "grid", "$.beams", [1, 9]), 2, "$.beams.grid", int),
        beamlet_width=_num(_field(beams, "width", "$.beams", 4.0), "$.beams.width"),
        mu=_num(_field(d, "mu", "$", 0.02), "$.mu"),
        sigma=_num(_field(d, "sigma", "$", 3.0), "$.sigma"),
        cutoff=_num(_field(d, "cutoff", "$", 1e-4), "$.cutoff"),
        dose_scale=_num(_field(d, "dose_scale", "$", 100.0), "$.dose_scale"),
        output_jitter=_num(_field(d, "output_jitter", "$", 0.02), "$.output_jitter"),
        seed=_num(_field(d, "seed", "$", 0), "$.seed", int),
        name=str(_field(d, "name", "$", "phantom")),
        normal_tissue=dict(_field(d, "normal_tissue", "$", {})),
        priorities=list(_field(d, "priorities", "$", [])),
    )
    if spec.n_beams < 1:
        raise PhantomSpecError("$.beams.count", "at least one beam is required")
    if spec.mu < 0:
        raise PhantomSpecError("$.mu", "attenuation must be nonnegative")
    if spec.sigma < 0:
        raise PhantomSpecError("$.sigma", "lateral sigma must be nonnegative")
    if spec.dose_scale <= 0:
        raise PhantomSpecError("$.dose_scale", "dose scale must be positive")
    if not 0 <= spec.output_jitter < 1:
        raise PhantomSpecError("$.output_jitter", "jitter must lie in [0, 1)")
    for i, s in enumerate(_field(d, "structures", "$", [], required=True)):
        path = f"$.structures[{i}]"
        if not isinstance(s, dict):
            raise PhantomSpecError(path, "structure entry must be an object")
        sid = str(_field(s, "id", path, required=True))
        kind = _field(s, "kind", path, required=True)
        if kind not in (PTV, OAR_PARALLEL, OAR_SERIAL):
            raise PhantomSpecError(f"{path}.kind", f"unsupported kind {kind!r}")
        shape = _field(s, "shape", path, "ellipsoid")
        if shape not in ("box", "ellipsoid"):
            raise PhantomSpecError(f"{path}.shape", f"unknown shape {shape!r}")
        planning = {k: v for k, v in s.items() if k not in ("id", "kind", "shape", "center", "half_size")}
        spec.structures.append(
            StructureSpec(
                id=sid,
                kind=kind,
                shape=shape,
                center=_vec(_field(s, "center", path, required=True), 3, f"{path}.center"),
                half_size=_vec(_field(s, "half_size", path, required=True), 3, f"{path}.half_size"),
                planning=planning,
            )
        )
    return spec


def spec_to_dict(spec: PhantomSpec) -> dict:
    return {
        "name": spec.name,
        "grid": {"dims": list(spec.dims), "spacing": spec.spacing},
        "beams": {
            "count": spec.n_beams,
            "start_angle": spec.start_angle,
            "grid": list(spec.beamlet_grid),
            "width": spec.beamlet_width,
        },
        "mu": spec.mu,
        "sigma": spec.sigma,
        "cutoff": spec.cutoff,
        "dose_scale": spec.dose_scale,
        "output_jitter": spec.output_jitter,
        "seed": spec.seed,
        "structures": [
            {
                "id": s.id,
                "kind": s.kind,
                "shape": s.shape,
                "center": list(s.center),
                "half_size": list(s.half_size),
                **s.planning,
            }
            for s in spec.structures
        ],
        "normal_tissue": spec.normal_tissue,
        "priorities": spec.priorities,
    }


def load_spec(path) -> PhantomSpec:
    return spec_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------- geometry


def rasterize(s: StructureSpec, grid: VoxelGrid) -> np.ndarray:
    """Boolean voxel mask (flat order) of one structure shape."""
    c = np.asarray(s.center, dtype=float)
    h = np.asarray(s.half_size, dtype=float)
    hi = np.asarray(grid.dims, dtype=float) - 0.5
    if np.any(h < 0) or np.any(c - h < -0.5 - 1e-9) or np.any(c + h > hi + 1e-9):
        raise CaseError(f"structure {s.id!r} extends outside the {grid.dims} grid")
    ix, iy, iz = grid.coords()
    rel = np.stack([ix, iy, iz], axis=1) - c
    if s.shape == "box":
        return np.all(np.abs(rel) <= h + 1e-9, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(h > 0, rel / np.where(h > 0, h, 1.0), np.where(np.abs(rel) < 1e-9, 0.0, np.inf))
    return np.sum(q * q, axis=1) <= 1.0 + 1e-9


def beam_layout(spec: PhantomSpec) -> BeamLayout:
    if spec.n_beams < 1:
        raise CaseError("at least one beam is required")
    step = 360.0 / spec.n_beams
    return BeamLayout(
        tuple(
            Beam((spec.start_angle + i * step) % 360.0, tuple(spec.beamlet_grid), spec.beamlet_width)
            for i in range(spec.n_beams)
        )
    )


def source_direction(angle_deg: float) -> np.ndarray:
    """Unit vector (x, y) from the isocentre towards the source."""
    t = np.deg2rad(angle_deg)
    return np.array([np.sin(t), np.cos(t)])


def ray_depth(grid: VoxelGrid, angle_deg: float, step: float = 0.5) -> np.ndarray:
    """Depth of every voxel centre below the grid surface for one beam, in voxel lengths.

    Marches from each voxel centre towards the source in ``step``-voxel
    increments, counting samples that fall inside the grid.
    """
    nx, ny, _ = grid.dims
    ix, iy, _ = grid.coords()
    u = source_direction(angle_deg)
    depth = np.zeros(ix.size)
    active = np.ones(ix.size, dtype=bool)
    k = 1
    while active.any():
        qx = ix + (k - 0.5) * step * u[0]
        qy = iy + (k - 0.5) * step * u[1]
        inside = (qx >= -0.5) & (qx <= nx - 0.5) & (qy >= -0.5) & (qy <= ny - 0.5)
        active &= inside
        depth[active] += step
        k += 1
    return depth


def pencil_beam_weight(depth, lateral, mu: float, sigma: float, width: float = 0.0):
    """Geometric deposition weight for a voxel at ``depth`` (voxels) and ``lateral`` offset (mm).

    With ``sigma == 0`` the lateral profile degenerates to a top-hat of the
    beamlet ``width``.
    """
    depth = np.asarray(depth, dtype=float)
    lateral = np.asarray(lateral, dtype=float)
    if sigma > 0:
        lat_w = np.exp(-(lateral**2) / (2.0 * sigma**2))
    else:
        lat_w = (np.abs(lateral) <= width / 2.0).astype(float)
    return np.exp(-mu * depth) * lat_w


def deposition_matrix(spec: PhantomSpec, grid: VoxelGrid, layout: BeamLayout) -> sp.csr_array:
    """Sparse voxel x beamlet deposition matrix in Gy per unit fluence."""
    rng = np.random.default_rng(spec.seed)
    ix, iy, iz = grid.coords()
    s = grid.spacing
    nx, ny, nz = grid.dims
    px = (ix - (nx - 1) / 2.0) * s
    py = (iy - (ny - 1) / 2.0) * s
    pz = (iz - (nz - 1) / 2.0) * s
    rows, cols, vals = [], [], []
    col0 = 0
    for beam in layout.beams:
        depth = ray_depth(grid, beam.angle)
        u = source_direction(beam.angle)
        # lateral axis, perpendicular to the beam inside the axial plane
        t = px * u[1] - py * u[0]
        nr, nc = beam.grid
        off_c = (np.arange(nc) - (nc - 1) / 2.0) * beam.width
        off_r = (np.arange(nr) - (nr - 1) / 2.0) * beam.width
        output = 1.0 + spec.output_jitter * rng.uniform(-1.0, 1.0, size=nr * nc)
        for r in range(nr):
            for c in range(nc):
                b = r * nc + c
                lat = np.hypot(t - off_c[c], pz - off_r[r])
                if spec.sigma > 0:
                    w = pencil_beam_weight(depth, lat, spec.mu, spec.sigma)
                else:
                    w = np.exp(-spec.mu * depth) * (
                        (np.abs(t - off_c[c]) <= beam.width / 2) & (np.abs(pz - off_r[r]) <= beam.width / 2)
                    )
                keep = np.flatnonzero(w >= spec.cutoff)
                rows.append(keep)
                cols.append(np.full(keep.size, col0 + b))
                vals.append(spec.dose_scale * output[b] * w[keep])
        col0 += nr * nc
    D = sp.coo_array(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_voxels, layout.n_beamlets),
    ).tocsr()
    D.sort_indices()
    return D


# ---------------------------------------------------------------- case building


def _planning_structure(s: StructureSpec, voxels: np.ndarray) -> Structure:
    p = s.planning
    path = f"structure {s.id!r}"
    ranges = {k: (float(v[0]), float(v[1])) for k, v in p.get("ranges", {}).items()}
    prescribed = p.get("prescribed")
    if s.kind == PTV:
        if prescribed is None:
            raise CaseError(f"{path}: a PTV needs a prescribed dose")
        prescribed = float(prescribed)
        params = params_from_dict(p.get("params")) or GeudParams(prescribed, *DEFAULT_PTV_PARAMS)
        bounds = bounds_from_dict(p["bounds"]) if "bounds" in p else derive_ptv_bounds(prescribed)
        if "dx" in p:
            dx = tuple(DxMetric(float(m["percent"]), float(m["bound"]), m["sense"]) for m in p["dx"])
        else:
            dx = derive_ptv_dx(prescribed)
    else:
        params = params_from_dict(p.get("params"))
        if params is None:
            raise CaseError(f"{path}: OAR needs gEUD params")
        bounds = bounds_from_dict(p.get("bounds"))
        dx = ()
    return Structure(
        id=s.id,
        kind=s.kind,
        voxels=voxels,
        params=params,
        ranges=ranges,
        bounds=bounds,
        dx=dx,
        prescribed=prescribed,
    )


def generate_phantom(spec: PhantomSpec):
    """Build a phantom case from ``spec``.

    Structures claim voxels in listed order (first wins), which keeps nested
    PTVs disjoint when the innermost is listed first.  Normal tissue is every
    voxel left unclaimed.

    Returns:
        (grid, case, layout, D) where ``case`` already carries virtual PTVs.

    Raises:
        CaseError: a structure leaves the grid, ends up empty, a beamlet
            deposits nowhere or a PTV voxel receives no dose.
    """
    grid = VoxelGrid(tuple(spec.dims), spec.spacing)
    layout = beam_layout(spec)
    claimed = np.zeros(grid.n_voxels, dtype=bool)
    structures = []
    for s in spec.structures:
        mask = rasterize(s, grid) & ~claimed
        if not mask.any():
            raise CaseError(f"structure {s.id!r} covers no voxel of its own")
        claimed |= mask
        structures.append(_planning_structure(s, np.flatnonzero(mask)))
    rest = np.flatnonzero(~claimed)
    if rest.size:
        nt = spec.normal_tissue
        structures.append(
            Structure(
                id=nt.get("id", "normal_tissue"),
                kind=NORMAL_TISSUE,
                voxels=rest,
                params=params_from_dict(nt.get("params")) or GeudParams(*NORMAL_TISSUE_PARAMS),
                ranges={k: (float(v[0]), float(v[1])) for k, v in nt.get("ranges", {}).items()},
                bounds=bounds_from_dict(nt["bounds"]) if "bounds" in nt else bounds_from_dict(
                    {"ub": NORMAL_TISSUE_PARAMS[0]}
                ),
            )
        )
    D = deposition_matrix(spec, grid, layout)
    colsum = np.asarray(D.sum(axis=0)).ravel()
    if np.any(colsum <= 0):
        raise CaseError(f"beamlets {np.flatnonzero(colsum <= 0).tolist()} deposit no dose in the grid")
    reach = np.diff(D.indptr) > 0
    for st in structures:
        if st.kind == PTV and not reach[st.voxels].all():
            raise CaseError(f"PTV {st.id!r} has voxels no beamlet reaches")
    case = CaseDefinition(
        grid=grid,
        structures=tuple(structures),
        beams=layout,
        priorities=tuple(priority_from_dict(p) for p in spec.priorities),
        name=spec.name,
    )
    return grid, derive_virtual_ptvs(case), layout, D


def derive_virtual_ptvs(case: CaseDefinition) -> CaseDefinition:
    """Append one overdose-control copy per PTV (treated as an OAR); idempotent."""
    have = {s.parent for s in case.structures if s.kind == VIRTUAL_PTV}
    extra = []
    for s in case.structures:
        if s.kind != PTV or s.id in have:
            continue
        extra.append(
            Structure(
                id=s.id + VIRTUAL_SUFFIX,
                kind=VIRTUAL_PTV,
                voxels=s.voxels,
                params=virtual_params(s.params),
                parent=s.id,
            )
        )
    if not extra:
        return case
    return case.with_structures(case.structures + tuple(extra))


def virtual_params(parent: GeudParams) -> GeudParams:
    return GeudParams(parent.eud0 + 1.0, -parent.a, parent.n)


# ---------------------------------------------------------------- persistence


def save_deposition(D, path) -> None:
    """CSV: first line ``rows,cols,nnz``; then one ``row,col,value`` triplet per entry."""
    D = sp.csr_array(D)
    D.sort_indices()
    coo = D.tocoo()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{D.shape[0]},{D.shape[1]},{D.nnz}\n")
        for r, c, v in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()):
            fh.write(f"{r},{c},{v:.17g}\n")


def load_deposition(path) -> sp.csr_array:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        try:
            rows, cols, nnz = (int(v) for v in header)
        except ValueError:
            raise CaseError(f"{path}: header must be 'rows,cols,nnz', got {','.join(header)!r}") from None
        data = np.loadtxt(fh, delimiter=",", ndmin=2) if nnz else np.zeros((0, 3))
    if data.shape[0] != nnz:
        raise CaseError(f"{path}: header declares {nnz} entries, found {data.shape[0]}")
    D = sp.coo_array((data[:, 2], (data[:, 0].astype(np.int64), data[:, 1].astype(np.int64))), shape=(rows, cols))
    D = D.tocsr()
    D.sort_indices()
    return D


# ---------------------------------------------------------------- presets

_GLAND_PARAMS = {"eud0": 26.0, "a": 1.0, "n": 5.0}
_GLAND_RANGES = {"eud0": [0.5, 26.0], "a": [1.0, 100.0], "n": [1.0, 100.0]}
_CORD_PARAMS = {"eud0": 50.0, "a": 10.0, "n": 5.0}
_CORD_RANGES = {"eud0": [0.5, 50.0], "a": [1.0, 50.0], "n": [1.0, 100.0]}
_PTV_RANGES = {"a": [-100.0, -1.0], "n": [1.0, 100.0]}


def _desk_base() -> dict:
    return {
        "name": "desk",
        "grid": {"dims": [40, 40, 1], "spacing": 2.5},
        "beams": {"count": 5, "start_angle": 0.0, "grid": [1, 9], "width": 4.0},
        "mu": 0.02,
        "sigma": 3.0,
        "cutoff": 1e-4,
        "dose_scale": 100.0,
        "output_jitter": 0.02,
        "seed": 0,
        "structures": [
            {
                "id": "ptv60",
                "kind": PTV,
                "shape": "ellipsoid",
                "center": [19.5, 19.5, 0.0],
                "half_size": [6.0, 6.0, 0.5],
                "prescribed": 60.0,
            },
            {
                "id": "gland_l",
                "kind": OAR_PARALLEL,
                "shape": "ellipsoid",
                "center": [7.5, 19.5, 0.0],
                "half_size": [4.0, 4.0, 0.5],
                "params": dict(_GLAND_PARAMS),
                "bounds": {"ub_mean": 26.0},
            },
            {
                "id": "gland_r",
                "kind": OAR_PARALLEL,
                "shape": "ellipsoid",
                "center": [31.5, 19.5, 0.0],
                "half_size": [4.0, 4.0, 0.5],
                "params": dict(_GLAND_PARAMS),
                "bounds": {"ub_mean": 26.0},
            },
            {
                "id": "cord",
                "kind": OAR_SERIAL,
                "shape": "box",
                "center": [19.5, 34.0, 0.0],
                "half_size": [3.0, 1.5, 0.5],
                "params": dict(_CORD_PARAMS),
                "bounds": {"ub": 50.0},
            },
        ],
        "normal_tissue": {"id": "normal_tissue", "bounds": {"ub": 74.25}},
        "priorities": [],
    }


def _set_ranges(d: dict, sid: str, ranges: dict) -> None:
    for s in d["structures"]:
        if s["id"] == sid:
            s["ranges"] = copy.deepcopy(ranges)
            return
    raise KeyError(sid)


def preset(name: str) -> PhantomSpec:
    """Named phantom specs.

    ``desk`` has no priorities and no tunable scalars.  ``desk_single`` tunes
    the PTV and the left gland with that gland as the only priority.
    ``desk_run1``/``desk_run2``/``desk_run3`` mirror the three planning runs
    (both glands; cord; glands and cord).  ``headneck`` is a larger
    three-PTV phantom with the same organ set as the run tables.
    """
    builders = {
        "desk": _desk_base,
        "desk_single": _desk_single,
        "desk_run1": _desk_run1,
        "desk_run2": _desk_run2,
        "desk_run3": _desk_run3,
        "headneck": _headneck,
    }
    try:
        return spec_from_dict(builders[name]())
    except KeyError:
        raise CaseError(f"unknown preset {name!r}; choose from {sorted(builders)}") from None


PRESETS = ("desk", "desk_single", "desk_run1", "desk_run2", "desk_run3", "headneck")


def preset_dict(name: str) -> dict:
    return spec_to_dict(preset(name))


def _desk_single() -> dict:
    d = _desk_base()
    d["name"] = "desk_single"
    _set_ranges(d, "gland_l", _GLAND_RANGES)
    _set_ranges(d, "ptv60", _PTV_RANGES)
    d["priorities"] = [{"id": "gland_l_mean", "structures": ["gland_l"], "mode": "mean"}]
    return d


def _desk_run1() -> dict:
    d = _desk_base()
    d["name"] = "desk_run1"
    _set_ranges(d, "gland_l", _GLAND_RANGES)
    _set_ranges(d, "gland_r", _GLAND_RANGES)
    _set_ranges(d, "ptv60", _PTV_RANGES)
    d["priorities"] = [{"id": "glands_mean", "structures": ["gland_l", "gland_r"], "mode": "mean"}]
    return d


def _desk_run2() -> dict:
    d = _desk_base()
    d["name"] = "desk_run2"
    _set_ranges(d, "cord", _CORD_RANGES)
    _set_ranges(d, "ptv60", _PTV_RANGES)
    d["priorities"] = [{"id": "cord_mean", "structures": ["cord"], "mode": "mean"}]
    return d


def _desk_run3() -> dict:
    d = _desk_run1()
    d["name"] = "desk_run3"
    _set_ranges(d, "cord", _CORD_RANGES)
    d["priorities"].append({"id": "cord_max", "structures": ["cord"], "mode": "max"})
    return d


def _headneck() -> dict:
    ptv = lambda sid, presc, half, bounds=None: {  # noqa: E731
        "id": sid,
        "kind": PTV,
        "shape": "ellipsoid",
        "center": [23.5, 22.0, 1.0],
        "half_size": half,
        "prescribed": presc,
        "ranges": dict(_PTV_RANGES),
        **({"bounds": bounds} if bounds else {}),
    }
    oar = lambda sid, kind, shape, center, half, params, bounds, ranges=None: {  # noqa: E731
        "id": sid,
        "kind": kind,
        "shape": shape,
        "center": center,
        "half_size": half,
        "params": params,
        "bounds": bounds,
        **({"ranges": ranges} if ranges else {}),
    }
    return {
        "name": "headneck",
        "grid": {"dims": [48, 48, 3], "spacing": 2.5},
        "beams": {"count": 9, "start_angle": 0.0, "grid": [3, 11], "width": 5.0},
        "mu": 0.02,
        "sigma": 3.0,
        "cutoff": 1e-4,
        "dose_scale": 60.0,
        "output_jitter": 0.02,
        "seed": 0,
        # innermost PTV first so nested PTVs stay disjoint; Table-style printed
        # value 64.67 kept for the PTV66 mean lower bound
        "structures": [
            ptv("ptv66", 66.0, [4.0, 4.0, 1.5], {"lb": 59.40, "lb_mean": 64.67, "ub_mean": 67.32, "ub": 72.60}),
            ptv("ptv60", 60.0, [6.5, 6.0, 1.5]),
            ptv("ptv54", 54.0, [9.0, 8.0, 1.5]),
            oar("spinal_cord_3mm", OAR_SERIAL, "box", [23.5, 36.0, 1.0], [2.5, 2.5, 1.5],
                dict(_CORD_PARAMS), {"ub": 50.0}),
            oar("brainstem_3mm", OAR_SERIAL, "ellipsoid", [23.5, 42.0, 1.0], [3.5, 2.5, 1.5],
                {"eud0": 60.0, "a": 10.0, "n": 5.0}, {"ub": 60.0}),
            oar("salivary_gland_l", OAR_PARALLEL, "ellipsoid", [9.0, 26.0, 1.0], [4.0, 4.5, 1.5],
                dict(_GLAND_PARAMS), {"ub_mean": 26.0}, dict(_GLAND_RANGES)),
            oar("salivary_gland_r", OAR_PARALLEL, "ellipsoid", [38.0, 26.0, 1.0], [4.0, 4.5, 1.5],
                dict(_GLAND_PARAMS), {"ub_mean": 26.0}, dict(_GLAND_RANGES)),
            oar("mandible", OAR_SERIAL, "box", [23.5, 7.0, 1.0], [12.0, 2.0, 1.5],
                {"eud0": 70.0, "a": 10.0, "n": 5.0}, {"ub": 70.0}),
        ],
        "normal_tissue": {"id": "normal_tissue", "bounds": {"ub": 74.25}},
        "priorities": [
            {
                "id": "glands_mean",
                "structures": ["salivary_gland_l", "salivary_gland_r"],
                "mode": "mean",
                "aggregate": "mean_of_union",
            }
        ],
    }
