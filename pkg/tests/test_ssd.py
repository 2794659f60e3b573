import numpy as np
import pytest

from sipmamba import autodiff as ad
from sipmamba.errors import ContractError, DimensionError
from sipmamba.ssd import (Mamba2Block, SSDConfig, mixing_matrix, selective_scan,
                          selective_scan_matrix, selective_scan_recurrent)


def random_inputs(rng, L, H=2, P=3, N=4, b=1, diag=False):
    x = rng.normal(size=(b, L, H, P))
    dt = rng.uniform(0.01, 0.5, size=(b, L, H, P if diag else 1))
    A = -rng.uniform(0.2, 3.0, size=(H, P, N) if diag else (H, 1, 1))
    B, C = rng.normal(size=(b, L, N)), rng.normal(size=(b, L, N))
    D = rng.normal(size=(H, P))
    return x, dt, A, B, C, D


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


def unit_dynamics(L, decay_log):
    x = np.random.default_rng(0).normal(size=(1, L, 1, 1))
    dt = np.ones((1, L, 1, 1))
    A = np.full((1, 1, 1), decay_log)
    ones = np.ones((1, L, 1))
    return x, dt, A, ones, ones, np.zeros((1, 1))


def test_identity_dynamics_is_prefix_sum():
    x, *rest = unit_dynamics(9, 0.0)
    y = selective_scan_recurrent(x, *rest)
    np.testing.assert_allclose(y[0, :, 0, 0], np.cumsum(x[0, :, 0, 0]), rtol=1e-14, atol=1e-14)


def test_full_forgetting_is_memoryless():
    x, dt, A, B, C, D = unit_dynamics(7, -np.inf)
    with np.errstate(invalid="ignore"):
        y = selective_scan_recurrent(x, dt, A, B, C, D)
    np.testing.assert_array_equal(y, dt * x)


def test_single_step_forms_agree():
    rng = np.random.default_rng(1)
    args = random_inputs(rng, 1)
    x, dt, A, B, C, D = args
    expected = np.einsum("bln,blhp->blhp", C * B, dt * x) + D * x
    np.testing.assert_allclose(selective_scan_recurrent(*args), expected, rtol=1e-14)
    np.testing.assert_allclose(selective_scan_matrix(*args), expected, rtol=1e-14)


def test_cumulative_sum_matrix():
    L = 6
    x, dt, A, B, C, _ = unit_dynamics(L, 0.0)
    dt = dt * 0.3
    M = mixing_matrix(dt, A, B, C)
    np.testing.assert_allclose(M[0, 0], np.tril(np.ones((L, L))) * 0.3, rtol=1e-15)


@pytest.mark.parametrize("diag", [False, True])
def test_recurrent_matches_matrix(diag):
    rng = np.random.default_rng(2)
    for _ in range(50):
        L = int(rng.integers(1, 33))
        H, P, N = (int(v) for v in rng.integers(1, 4, size=3))
        args = random_inputs(rng, L, H, P, N, b=2, diag=diag)
        assert rel_err(selective_scan_recurrent(*args), selective_scan_matrix(*args)) <= 1e-10


def test_mixing_matrix_reproduces_scan():
    rng = np.random.default_rng(3)
    x, dt, A, B, C, D = random_inputs(rng, 12, H=2, P=3, N=4, b=2)
    D = np.zeros_like(D)
    M = mixing_matrix(dt, A, B, C)
    y = np.einsum("bhji,bihp->bjhp", M, x)
    assert rel_err(y, selective_scan_recurrent(x, dt, A, B, C, D)) <= 1e-12


def test_matrix_oracle_cap():
    rng = np.random.default_rng(4)
    with pytest.raises(ContractError):
        selective_scan_matrix(*random_inputs(rng, 10), max_len=8)


def test_shape_errors():
    rng = np.random.default_rng(5)
    x, dt, A, B, C, D = random_inputs(rng, 4)
    with pytest.raises(DimensionError):
        selective_scan_recurrent(x, dt, A, B[:, :3], C, D)
    with pytest.raises(DimensionError):
        selective_scan_recurrent(x, dt, A[:1], B, C, D)


def test_state_bounded_by_geometric_series():
    rng = np.random.default_rng(6)
    x, dt, A, B, C, D = random_inputs(rng, 30, b=2)
    _, hs = selective_scan_recurrent(x, dt, A, B, C, D, return_states=True)
    drive = np.linalg.norm((dt * x)[..., None] * B[:, :, None, None, :], axis=(-2, -1))
    bound = np.cumsum(drive, axis=1)
    assert np.all(np.linalg.norm(hs, axis=(-2, -1)) <= bound + 1e-12)
    abar = np.exp(dt[..., None] * A)
    assert np.all((abar > 0) & (abar <= 1))


def test_scan_causality_exact():
    rng = np.random.default_rng(7)
    for _ in range(20):
        L = int(rng.integers(2, 30))
        p = int(rng.integers(1, L))
        x, dt, A, B, C, D = random_inputs(rng, L)
        y0 = selective_scan_recurrent(x, dt, A, B, C, D)
        x2, B2 = x.copy(), B.copy()
        x2[:, p:] += rng.normal(size=x2[:, p:].shape)
        B2[:, p:] *= 3.0
        y1 = selective_scan_recurrent(x2, dt, A, B2, C, D)
        assert np.array_equal(y0[:, :p], y1[:, :p])


@pytest.mark.parametrize("diag", [False, True])
def test_scan_op_gradients(diag):
    for seed in range(5):
        rng = np.random.default_rng(10 + seed)
        args = [ad.tensor(a, requires_grad=True) for a in random_inputs(rng, 7, diag=diag)]
        w = rng.normal(size=args[0].shape)
        assert ad.grad_check(lambda *a: (selective_scan(*a) * w).sum(), args) <= 1e-6


def small_block(seed, **kw):
    cfg = SSDConfig(**{"d_model": 6, "n_heads": 2, "d_state": 3, "expand": 2, **kw})
    return Mamba2Block(cfg, np.random.default_rng(seed))


def test_block_zero_input_zero_output():
    blk = small_block(0)
    np.testing.assert_array_equal(blk(ad.tensor(np.zeros((2, 5, 6)))).data, 0.0)


@pytest.mark.parametrize("conv_width", [4, 0])
def test_block_causality(conv_width):
    rng = np.random.default_rng(1)
    blk = small_block(1, conv_width=conv_width)
    x = rng.normal(size=(1, 12, 6))
    for p in range(1, 12):
        x2 = x.copy()
        x2[:, p:] = rng.normal(size=x2[:, p:].shape)
        assert np.array_equal(blk(ad.tensor(x)).data[:, :p], blk(ad.tensor(x2)).data[:, :p])


@pytest.mark.parametrize("variant,conv_width", [("mamba2", 4), ("mamba2", 0), ("diag", 4)])
def test_block_gradcheck(variant, conv_width):
    for seed in range(3):
        rng = np.random.default_rng(seed)
        blk = small_block(seed, variant=variant, conv_width=conv_width)
        x = ad.tensor(rng.normal(size=(2, 5, 6)), requires_grad=True)
        assert ad.grad_check(lambda *_: blk(x).sum(), [x, *blk.parameters()]) <= 1e-5


def test_block_matrix_method_matches():
    rng = np.random.default_rng(3)
    blk = small_block(3)
    x = ad.tensor(rng.normal(size=(2, 9, 6)))
    assert rel_err(blk(x).data, blk(x, method="matrix").data) <= 1e-10
    with pytest.raises(ContractError):
        blk(x, method="chunked")


def test_block_accepts_unbatched_and_checks_width():
    blk = small_block(4)
    x = np.random.default_rng(4).normal(size=(5, 6))
    assert blk(ad.tensor(x)).shape == (5, 6)
    with pytest.raises(DimensionError):
        blk(ad.tensor(np.zeros((5, 7))))


def test_dt_init_range():
    blk = small_block(5)
    dt = np.logaddexp(0.0, blk.dt_proj.bias.data)
    assert np.all((dt >= 0.01 - 1e-12) & (dt <= 0.1 + 1e-12))


def test_config_validation():
    with pytest.raises(ContractError):
        SSDConfig(d_model=6, n_heads=4, expand=1)
    with pytest.raises(ContractError):
        SSDConfig(variant="s4")
