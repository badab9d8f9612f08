import numpy as np
import pytest

from bilevel_rt.case import (
    OAR_PARALLEL,
    PTV,
    Beam,
    BeamLayout,
    Bounds,
    CaseDefinition,
    CaseError,
    DxMetric,
    GeudParams,
    Priority,
    Structure,
    VoxelGrid,
    bounds_from_dict,
    bounds_to_dict,
    load_case,
    save_case,
)

LAYOUT = BeamLayout((Beam(0.0, (1, 3), 4.0), Beam(180.0, (2, 2), 4.0)))


def test_grid_indexing_is_x_slowest():
    g = VoxelGrid((2, 3, 4), 1.0)
    assert g.n_voxels == 24
    assert g.index(1, 2, 3) == 23
    ix, iy, iz = g.coords()
    assert (ix[23], iy[23], iz[23]) == (1, 2, 3)


def test_layout_offsets():
    assert LAYOUT.n_beamlets == 7
    assert LAYOUT.offsets().tolist() == [0, 3, 7]


def test_bounds_order_enforced():
    Bounds(1, 2, 3, 4)
    Bounds(ub_mean=5, ub=4.5 + 0.5)
    with pytest.raises(CaseError):
        Bounds(lb=5, ub=4)


def test_bounds_dict_roundtrip():
    b = Bounds(lb=48.6, ub=59.4)
    assert bounds_from_dict(bounds_to_dict(b)) == b


def test_structure_voxels_sorted_unique():
    s = Structure("s", OAR_PARALLEL, [3, 1, 3, 2], GeudParams(1, 1, 1))
    assert s.voxels.tolist() == [1, 2, 3]


def test_unknown_kind_and_range_rejected():
    with pytest.raises(CaseError):
        Structure("s", "liver", [0])
    with pytest.raises(CaseError):
        Structure("s", PTV, [0], ranges={"b": (0, 1)})
    with pytest.raises(CaseError):
        Structure("s", PTV, [0], ranges={"a": (1, 0)})


def test_dx_metric_validation():
    assert DxMetric(98.0, 57.0, ">=").label == "D98%"
    with pytest.raises(CaseError):
        DxMetric(0.0, 1.0, ">=")
    with pytest.raises(CaseError):
        DxMetric(50.0, 1.0, ">")


def test_case_validation():
    grid = VoxelGrid((4, 1, 1), 1.0)
    a = Structure("a", PTV, [0, 1], GeudParams(60, -10, 5))
    with pytest.raises(CaseError, match="duplicate"):
        CaseDefinition(grid, (a, a), LAYOUT)
    with pytest.raises(CaseError, match="outside"):
        CaseDefinition(grid, (Structure("b", OAR_PARALLEL, [7]),), LAYOUT)
    with pytest.raises(CaseError, match="unknown structure"):
        CaseDefinition(grid, (a,), LAYOUT, (Priority("p", ("zz",)),))
    empty = Structure("e", OAR_PARALLEL, [], GeudParams(20, 1, 5))
    CaseDefinition(grid, (a, empty), LAYOUT)
    with pytest.raises(CaseError, match="no voxels"):
        CaseDefinition(grid, (a, empty), LAYOUT, (Priority("p", ("e",)),))


def test_priority_validation():
    with pytest.raises(CaseError):
        Priority("p", ("a",), mode="median")
    with pytest.raises(CaseError):
        Priority("p", ("a",), aggregate="product")
    with pytest.raises(CaseError):
        Priority("p", ())


def test_save_load_case(tmp_path, desk):
    _, case, _, _ = desk
    save_case(case, tmp_path / "case.json")
    back = load_case(tmp_path / "case.json")
    assert [s.id for s in back.structures] == [s.id for s in case.structures]
    for s, t in zip(case.structures, back.structures):
        np.testing.assert_array_equal(s.voxels, t.voxels)
        assert s.params == t.params and s.bounds == t.bounds and s.ranges == t.ranges
    assert back.priorities == case.priorities
    assert back.beams == case.beams
