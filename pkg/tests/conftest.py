import numpy as np
import pytest
import scipy.sparse as sp

from bilevel_rt.case import (
    NORMAL_TISSUE,
    OAR_PARALLEL,
    OAR_SERIAL,
    PTV,
    Beam,
    BeamLayout,
    Bounds,
    CaseDefinition,
    GeudParams,
    Priority,
    Structure,
    VoxelGrid,
)
from bilevel_rt.evalmo import derive_ptv_bounds, derive_ptv_dx
from bilevel_rt.phantom import derive_virtual_ptvs, generate_phantom, preset


def random_case(rng, n_voxels=60, n_beamlets=12, n_beams=2, params=True):
    """Small random case: PTV + parallel + serial OAR + normal tissue, with a virtual PTV.

    Returns (case, D) where D is a random nonnegative sparse matrix with no
    empty rows, so every voxel gets dose.
    """
    grid = VoxelGrid((n_voxels, 1, 1), 2.5)
    per = n_beamlets // n_beams
    layout = BeamLayout(tuple(Beam(360.0 * i / n_beams, (1, per), 4.0) for i in range(n_beams)))
    perm = rng.permutation(n_voxels)
    cuts = np.sort(rng.choice(np.arange(2, n_voxels - 1), size=3, replace=False))
    parts = np.split(perm, cuts)

    def p(lo_a, hi_a, lo_e, hi_e):
        if not params:
            return None
        return GeudParams(rng.uniform(lo_e, hi_e), rng.uniform(lo_a, hi_a), rng.uniform(1.0, 30.0))

    presc = 60.0
    structs = [
        Structure("ptv", PTV, parts[0], p(-40, -1, 40, 70), bounds=derive_ptv_bounds(presc),
                  dx=derive_ptv_dx(presc), prescribed=presc),
        Structure("par", OAR_PARALLEL, parts[1], p(1, 5, 5, 40), bounds=Bounds(ub_mean=26.0)),
        Structure("ser", OAR_SERIAL, parts[2], p(5, 40, 20, 60), bounds=Bounds(ub=50.0)),
        Structure("nt", NORMAL_TISSUE, parts[3], p(5, 40, 40, 80), bounds=Bounds(ub=74.25)),
    ]
    case = derive_virtual_ptvs(
        CaseDefinition(grid, tuple(structs), layout, (Priority("par_mean", ("par",)),), name="random")
    )
    dense = rng.uniform(0.0, 1.0, size=(n_voxels, n_beamlets))
    dense[dense < 0.4] = 0.0
    dense[np.arange(n_voxels), rng.integers(0, n_beamlets, n_voxels)] += 0.5
    return case, sp.csr_array(dense * 40.0)


@pytest.fixture(scope="session")
def desk():
    """(grid, case, layout, D) of the single-priority desk phantom."""
    return generate_phantom(preset("desk_single"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
