"""Quick correctness suites run by ``sipmamba selftest``."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..scan_orders import GridShape, ScanMode, build_scan_order, sip_quadrant_trajectory
from ..ssd import Mamba2Block, SSDConfig, selective_scan_matrix, selective_scan_recurrent

SIP_N3 = [(0, 3), (0, 2), (1, 3), (0, 1), (1, 2), (2, 3), (0, 0), (1, 1), (2, 2), (3, 3),
          (1, 0), (2, 1), (3, 2), (2, 0), (3, 1), (3, 0)]


def check_permutations(max_side: int = 8) -> str | None:
    for H in range(1, max_side + 1):
        for W in range(1, max_side + 1):
            for mode in ScanMode:
                o = build_scan_order(GridShape(H, W), mode)
                n = H * W
                if not np.array_equal(np.sort(o.perm), np.arange(n)):
                    return f"{mode.value} {H}x{W}: not a bijection"
                if not np.array_equal(o.perm[o.inv], np.arange(n)):
                    return f"{mode.value} {H}x{W}: inverse mismatch"
    if sip_quadrant_trajectory(3) != SIP_N3:
        return "SIP N=3 trajectory differs from the reference sequence"
    return None


def _random_scan_inputs(rng, L, H, P, N, b=1, diag=False):
    x = rng.normal(size=(b, L, H, P))
    dt = rng.uniform(0.01, 0.5, size=(b, L, H, P if diag else 1))
    A = -rng.uniform(0.5, 2.0, size=(H, P, N) if diag else (H, 1, 1))
    B, C = rng.normal(size=(b, L, N)), rng.normal(size=(b, L, N))
    D = rng.normal(size=(H, 1))
    return x, dt, A, B, C, D


def check_ssd_equivalence(n: int = 20, seed: int = 0) -> str | None:
    rng = np.random.default_rng(seed)
    for i in range(n):
        L, H, P, N = rng.integers(1, 33), rng.integers(1, 3), rng.integers(1, 5), rng.integers(1, 5)
        args = _random_scan_inputs(rng, L, H, P, N, diag=bool(i % 2))
        y1, y2 = selective_scan_recurrent(*args), selective_scan_matrix(*args)
        err = np.max(np.abs(y1 - y2)) / max(1.0, np.max(np.abs(y2)))
        if err > 1e-10:
            return f"instance {i}: recurrent vs matrix relative error {err:.3e}"
    return None


def check_gradients(seed: int = 0) -> str | None:
    with ad.precision("f64"):
        rng = np.random.default_rng(seed)
        blk = Mamba2Block(SSDConfig(d_model=6, n_heads=2, d_state=3, expand=2), rng)
        x = ad.tensor(rng.normal(size=(2, 5, 6)), requires_grad=True)
        w = rng.normal(size=(2, 5, 6))
        err = ad.grad_check(lambda *_: (blk(x) * w).sum(), [x, *blk.parameters()])
    if err > 1e-5:
        return f"Mamba2 block grad_check error {err:.3e}"
    return None


def check_metrics() -> str | None:
    from ..pipeline.losses import box_iou_np
    from ..pipeline.metrics import accuracy, macro_f1, miou

    pred, target = np.array([0, 1, 1]), np.array([0, 1, 2])
    if abs(accuracy(pred, target) - 2 / 3) > 1e-12:
        return "accuracy oracle mismatch"
    # class 0: F1 1, class 1: tp 1 fp 1 -> 2/3, class 2: 0
    if abs(macro_f1(pred, target) - (1 + 2 / 3 + 0) / 3) > 1e-12:
        return "macro F1 oracle mismatch"
    a = np.array([[0.5, 0.5, 0.2, 0.2]])
    b = np.array([[0.6, 0.5, 0.2, 0.2]])
    if abs(box_iou_np(a, b)[0] - 1 / 3) > 1e-12 or abs(miou(a, a) - 1.0) > 1e-12:
        return "IoU oracle mismatch"
    return None


SUITES = {
    "permutations": check_permutations,
    "ssd-equivalence": check_ssd_equivalence,
    "gradcheck": check_gradients,
    "metrics": check_metrics,
}


def run_selftest(echo=print) -> bool:
    ok = True
    for name, fn in SUITES.items():
        try:
            problem = fn()
        except Exception as exc:
            problem = f"{type(exc).__name__}: {exc}"
        echo(f"{'PASS' if problem is None else 'FAIL'} {name}" + ("" if problem is None else f": {problem}"))
        ok &= problem is None
    return ok
