import hashlib
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sipmamba.errors import ContractError, CoverageError
from sipmamba.harness.data import DatasetSpec, sample_arm
from sipmamba.scan_orders import (GridShape, ScanMode, ScanOrder, build_scan_order,
                                  connected_components, locality_score, quadrant_specs,
                                  render_ppm, sip_quadrant_cells, sip_quadrant_trajectory)

GOLDEN = Path(__file__).parent / "golden"

N3_TRACE = [(0, 3), (0, 2), (1, 3), (0, 1), (1, 2), (2, 3), (0, 0), (1, 1), (2, 2), (3, 3),
            (1, 0), (2, 1), (3, 2), (2, 0), (3, 1), (3, 0)]


def test_n3_trace():
    assert sip_quadrant_trajectory(3, (0, 3)) == N3_TRACE
    assert sip_quadrant_trajectory(3) == N3_TRACE


def test_single_cell_trace():
    assert sip_quadrant_trajectory(0, (0, 0)) == [(0, 0)]


def test_origin_start_covers_lower_triangle_only():
    trace = sip_quadrant_trajectory(3, (0, 0))
    assert len(trace) == 10
    assert set(trace) == {(x, y) for x in range(4) for y in range(4) if y <= x}


def test_bad_start():
    with pytest.raises(ContractError):
        sip_quadrant_trajectory(3, (4, 0))
    with pytest.raises(ContractError):
        sip_quadrant_trajectory(-1)


def test_default_start_covers_every_frame():
    for N in range(16):
        trace = sip_quadrant_trajectory(N)
        assert len(trace) == len(set(trace)) == (N + 1) ** 2
        assert all(0 <= x <= N and 0 <= y <= N for x, y in trace)


def test_incomplete_start_names_quadrant():
    shape = GridShape(8, 8)
    with pytest.raises(CoverageError, match="quadrant I"):
        sip_quadrant_cells(shape, quadrant_specs(shape)[0], (0, 0))
    with pytest.raises(CoverageError):
        build_scan_order(shape, ScanMode.SIP, sip_start=(0, 0))


@pytest.mark.parametrize("mode", list(ScanMode))
def test_all_modes_bijective_up_to_16(mode):
    for H in range(1, 17):
        for W in range(1, 17):
            o = build_scan_order(GridShape(H, W), mode)
            n = H * W
            assert np.array_equal(np.sort(o.perm), np.arange(n))
            assert np.array_equal(o.inv[o.perm], np.arange(n))
            for route in o.forward_routes + o.backward_routes:
                assert np.array_equal(np.sort(route), np.arange(n))


def test_small_cases():
    for mode in ScanMode:
        assert build_scan_order(GridShape(1, 1), mode).perm.tolist() == [0]
    assert build_scan_order(GridShape(2, 2), "Raster1D").perm.tolist() == [0, 1, 2, 3]


def test_8x8_sip_quadrant_one_matches_trace():
    o = build_scan_order(GridShape(8, 8), ScanMode.SIP)
    # quadrant I: local (0, 0) at global (3, 4), +x right, +y up
    expected = [(3 - y) * 8 + (4 + x) for x, y in N3_TRACE]
    assert o.perm[:16].tolist() == expected


def test_quadrants_partition_grid():
    for H in range(1, 12):
        for W in range(1, 12):
            shape = GridShape(H, W)
            cells = []
            for q in quadrant_specs(shape):
                cells += sip_quadrant_cells(shape, q)
            assert sorted(cells) == [(r, c) for r in range(H) for c in range(W)]


def test_quadrant_origin_is_nearest_centre():
    shape = GridShape(6, 6)
    centre = (2.5, 2.5)
    for q in quadrant_specs(shape):
        nx, ny = q.local_dims
        cells = [q.to_global(x, y) for x in range(nx) for y in range(ny)]
        dist = [math.hypot(r - centre[0], c - centre[1]) for r, c in cells]
        assert q.to_global(0, 0) == cells[int(np.argmin(dist))]


@pytest.mark.parametrize("side", [2, 4, 6, 8])
def test_half_turn_symmetry(side):
    for H in (side,):
        for W in (2, 4, 6, 8):
            o = build_scan_order(GridShape(H, W), ScanMode.SIP)
            q = (H // 2) * (W // 2)
            rot = lambda idx: (H * W - 1) - idx
            p = o.perm
            assert np.array_equal(rot(p[:q]), p[2 * q:3 * q])      # I -> III
            assert np.array_equal(rot(p[q:2 * q]), p[3 * q:])      # IV -> II


def test_routes_per_mode():
    shape = GridShape(3, 4)
    raster = np.arange(12)
    col = raster.reshape(3, 4).T.reshape(-1)
    o = build_scan_order(shape, "Raster1D")
    assert [r.tolist() for r in o.backward_routes] == [raster.tolist()]
    o = build_scan_order(shape, "BiScan")
    assert o.backward_routes[0].tolist() == raster[::-1].tolist()
    o = build_scan_order(shape, "CrossScan")
    assert [r.tolist() for r in o.forward_routes] == [raster.tolist(), col.tolist()]
    assert [r.tolist() for r in o.backward_routes] == [raster[::-1].tolist(), col[::-1].tolist()]
    o = build_scan_order(shape, "SIP")
    assert o.backward_routes[0].tolist() == o.perm[::-1].tolist()


def test_json_roundtrip():
    o = build_scan_order(GridShape(5, 7), ScanMode.CROSSSCAN)
    back = ScanOrder.from_json(o.to_json())
    assert back.mode is o.mode and back.shape == o.shape
    assert np.array_equal(back.perm, o.perm)
    assert all(np.array_equal(a, b) for a, b in zip(back.aux, o.aux))


def test_locality_single_cell_convention():
    o = build_scan_order(GridShape(4, 4), "SIP")
    mask = np.zeros((4, 4), bool)
    mask[1, 2] = True
    rep = locality_score(o, mask)
    assert rep.mean_index_gap == 1 and rep.max_run_break == 0


def test_locality_full_grid_raster_closed_form():
    for H, W in [(1, 5), (3, 4), (8, 8), (5, 2)]:
        o = build_scan_order(GridShape(H, W), "Raster1D")
        pairs = H * (W - 1) + (H - 1) * W
        expected = (H * (W - 1) * 1 + (H - 1) * W * W) / pairs
        assert locality_score(o, np.ones((H, W), bool)).mean_index_gap == pytest.approx(expected, abs=1e-15)


def test_locality_1xL_identity_is_one():
    o = build_scan_order(GridShape(1, 9), "Raster1D")
    assert locality_score(o, np.ones((1, 9), bool)).mean_index_gap == 1.0


def test_locality_errors():
    o = build_scan_order(GridShape(4, 4), "SIP")
    with pytest.raises(ContractError):
        locality_score(o, np.zeros((4, 4), bool))
    with pytest.raises(ContractError):
        locality_score(o, np.ones((3, 4), bool))


def _brute_gap(perm, mask):
    pos = {cell: i for i, cell in enumerate(perm)}
    H, W = mask.shape
    gaps = []
    for r in range(H):
        for c in range(W):
            if not mask[r, c]:
                continue
            for rr, cc in ((r, c + 1), (r + 1, c)):
                if rr < H and cc < W and mask[rr, cc]:
                    gaps.append(abs(pos[r * W + c] - pos[rr * W + cc]))
    return float(np.mean(gaps)) if gaps else 1.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), H=st.integers(1, 9), W=st.integers(1, 9))
def test_locality_matches_brute_force(seed, H, W):
    rng = np.random.default_rng(seed)
    mask = rng.random((H, W)) < 0.5
    mask[rng.integers(H), rng.integers(W)] = True
    for mode in ScanMode:
        o = build_scan_order(GridShape(H, W), mode)
        assert locality_score(o, mask).mean_index_gap == pytest.approx(_brute_gap(o.perm.tolist(), mask))


def test_diagonal_arm_in_quadrant_one_prefers_sip():
    mask = np.zeros((8, 8), bool)
    for k in range(4):
        mask[3 - k, 4 + k] = True
        if k < 3:
            mask[3 - k, 5 + k] = True
    assert len(connected_components(mask)) == 1
    sip = locality_score(build_scan_order(GridShape(8, 8), "SIP"), mask).mean_index_gap
    ras = locality_score(build_scan_order(GridShape(8, 8), "Raster1D"), mask).mean_index_gap
    assert sip < ras


def test_sampled_arms_prefer_sip():
    shape = GridShape(8, 8)
    spec = DatasetSpec()
    sip, ras = build_scan_order(shape, "SIP"), build_scan_order(shape, "Raster1D")
    rng = np.random.default_rng(123)
    wins = 0
    for i in range(200):
        mask, _ = sample_arm(rng, spec, i % 4)
        wins += locality_score(sip, mask).mean_index_gap < locality_score(ras, mask).mean_index_gap
    assert wins / 200 >= 0.95


def test_ppm_one_pixel():
    img = render_ppm(build_scan_order(GridShape(1, 1), "SIP"))
    assert img.startswith(b"P6\n1 1\n255\n") and len(img) == len(b"P6\n1 1\n255\n") + 3


def test_ppm_deterministic_and_golden():
    o = build_scan_order(GridShape(8, 8), "SIP")
    a, b = render_ppm(o), render_ppm(o)
    assert a == b
    assert hashlib.sha256(a).hexdigest() == (GOLDEN / "sip_8x8_ppm.sha256").read_text().strip()


def test_ppm_cell_scaling():
    img = render_ppm(build_scan_order(GridShape(2, 3), "Raster1D"), cell_px=4)
    assert img.startswith(b"P6\n12 8\n255\n")
    assert len(img) == len(b"P6\n12 8\n255\n") + 12 * 8 * 3
