"""
Selective state-space scan and the gated Mamba2-style block around it.

Per head the scan is

    h_t = exp(dt_t * a) * h_{t-1} + dt_t * x_t B_t^T        (P x N state)
    y_t = h_t C_t + D * x_t

with ``a < 0`` so every decay lies in (0, 1]. Array layout for the raw
kernels:

    x  (b, L, H, P)      dt (b, L, H, 1) or (b, L, H, P)
    A  (H, 1, 1) scalar-per-head decay, or (H, P, N) diagonal per channel
    B, C (b, L, N)       D  (H, 1) or (H, P)

:func:`selective_scan_recurrent` is the production path. The quadratic
:func:`selective_scan_matrix` materializes the lower-triangular mixing
matrix ``M[j, i] = C_j . (prod_{i<k<=j} abar_k) (dt_i B_i)`` and exists to
check the recurrence.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numba
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, unbroadcast
from .errors import ContractError, DimensionError
from .nn import Linear, Module, Parameter

MATRIX_ORACLE_MAX_LEN = 64


def _check_shapes(x, dt, A, B, C, D):
    if x.ndim != 4:
        raise DimensionError(f"x must be (b, L, H, P), got {x.shape}")
    b, L, H, P = x.shape
    if L < 1:
        raise ContractError("scan needs at least one token")
    N = B.shape[-1]
    if dt.shape[:3] != (b, L, H) or dt.shape[3] not in (1, P):
        raise DimensionError(f"dt shape {dt.shape} incompatible with x {x.shape}")
    if A.shape[0] != H or A.shape[1] not in (1, P) or A.shape[2] not in (1, N):
        raise DimensionError(f"A shape {A.shape} incompatible with H={H}, P={P}, N={N}")
    if B.shape != (b, L, N) or C.shape != (b, L, N):
        raise DimensionError(f"B {B.shape} / C {C.shape} must be (b, L, N)")
    if D.shape[0] != H or D.shape[1] not in (1, P):
        raise DimensionError(f"D shape {D.shape} incompatible with H={H}, P={P}")


_FM = {"reassoc", "contract"}


@numba.njit(cache=True, fastmath=_FM)
def _advance(dA, dtx, B, i, t, h, prev, out):
    # out[p, n] = abar * prev[p, n] + dtx[p] * B[n] for one (batch, step, head)
    P, N = out.shape
    QA, NA = dA.shape[3], dA.shape[4]
    for p in range(P):
        u = dtx[i, t, h, p]
        if QA == 1 and NA == 1:
            a = dA[i, t, h, 0, 0]
            for n in range(N):
                out[p, n] = a * prev[p, n] + u * B[i, t, n]
        else:
            qa = p if QA > 1 else 0
            for n in range(N):
                out[p, n] = dA[i, t, h, qa, n if NA > 1 else 0] * prev[p, n] + u * B[i, t, n]


@numba.njit(cache=True, fastmath=_FM)
def _scan_fwd_kernel(dA, dtx, B, C):
    # dA (b, L, H, QA, NA) with QA in {1, P}, NA in {1, N}; dtx (b, L, H, P); B, C (b, L, N)
    b, L, H, P = dtx.shape
    N = B.shape[2]
    yc = np.zeros((b, L, H, P), dtype=dtx.dtype)
    cur = np.zeros((P, N), dtype=dtx.dtype)
    nxt = np.zeros((P, N), dtype=dtx.dtype)
    for i in range(b):
        for h in range(H):
            cur[:, :] = 0.0
            for t in range(L):
                _advance(dA, dtx, B, i, t, h, cur, nxt)
                cur, nxt = nxt, cur
                for p in range(P):
                    acc = 0.0
                    for n in range(N):
                        acc += cur[p, n] * C[i, t, n]
                    yc[i, t, h, p] = acc
    return yc


@numba.njit(cache=True, fastmath=_FM)
def _scan_states_kernel(dA, dtx, B):
    b, L, H, P = dtx.shape
    N = B.shape[2]
    hs = np.zeros((b, L, H, P, N), dtype=dtx.dtype)
    zero = np.zeros((P, N), dtype=dtx.dtype)
    buf = np.zeros((P, N), dtype=dtx.dtype)
    for i in range(b):
        for h in range(H):
            for t in range(L):
                _advance(dA, dtx, B, i, t, h, zero if t == 0 else hs[i, t - 1, h], buf)
                hs[i, t, h] = buf
    return hs


@numba.njit(cache=True, fastmath=_FM)
def _scan_bwd_kernel(gy, dA, dtx, B, C):
    # states are recomputed per (batch, head) into a local buffer instead of kept from forward
    b, L, H, P = dtx.shape
    N = B.shape[2]
    QA, NA = dA.shape[3], dA.shape[4]
    scalar = QA == 1 and NA == 1
    g_dtx = np.zeros((b, L, H, P), dtype=dtx.dtype)
    gB = np.zeros((b, L, N), dtype=dtx.dtype)
    gC = np.zeros((b, L, N), dtype=dtx.dtype)
    gdA = np.zeros(dA.shape, dtype=dtx.dtype)
    hs = np.zeros((L, P, N), dtype=dtx.dtype)
    zero = np.zeros((P, N), dtype=dtx.dtype)
    G = np.zeros((P, N), dtype=dtx.dtype)
    for i in range(b):
        for h in range(H):
            for t in range(L):
                _advance(dA, dtx, B, i, t, h, zero if t == 0 else hs[t - 1], hs[t])
            G[:, :] = 0.0
            for t in range(L - 1, -1, -1):
                prev = zero if t == 0 else hs[t - 1]
                ga_total = 0.0
                for p in range(P):
                    gyv = gy[i, t, h, p]
                    u = dtx[i, t, h, p]
                    acc = 0.0
                    if scalar:
                        a = dA[i, t, h, 0, 0]
                        ga = 0.0
                        for n in range(N):
                            g = G[p, n] + gyv * C[i, t, n]
                            gC[i, t, n] += hs[t, p, n] * gyv
                            acc += g * B[i, t, n]
                            gB[i, t, n] += g * u
                            ga += g * prev[p, n]
                            G[p, n] = g * a
                        ga_total += ga
                    else:
                        qa = p if QA > 1 else 0
                        for n in range(N):
                            na = n if NA > 1 else 0
                            g = G[p, n] + gyv * C[i, t, n]
                            gC[i, t, n] += hs[t, p, n] * gyv
                            acc += g * B[i, t, n]
                            gB[i, t, n] += g * u
                            gdA[i, t, h, qa, na] += g * prev[p, n]
                            G[p, n] = g * dA[i, t, h, qa, na]
                    g_dtx[i, t, h, p] = acc
                if scalar:
                    gdA[i, t, h, 0, 0] = ga_total
    return g_dtx, gB, gC, gdA


def _decays(dt, A):
    return np.ascontiguousarray(np.exp(dt[..., None] * A))


def selective_scan_recurrent(x, dt, A, B, C, D, return_states: bool = False):
    """Left-to-right recurrence from a zero state. Strictly causal.

    With ``return_states`` also returns the hidden states, (b, L, H, P, N).
    """
    x, dt, A, B, C, D = (np.asarray(v) for v in (x, dt, A, B, C, D))
    _check_shapes(x, dt, A, B, C, D)
    dA, dtx = _decays(dt, A), np.ascontiguousarray(dt * x)
    Bc = np.ascontiguousarray(B)
    y = _scan_fwd_kernel(dA, dtx, Bc, np.ascontiguousarray(C)) + D * x
    if return_states:
        return y, _scan_states_kernel(dA, dtx, Bc)
    return y


def selective_scan_matrix(x, dt, A, B, C, D, max_len: int = MATRIX_ORACLE_MAX_LEN):
    """Same map as the recurrence, computed as ``y = M x + D x`` with M explicit."""
    x, dt, A, B, C, D = (np.asarray(v) for v in (x, dt, A, B, C, D))
    _check_shapes(x, dt, A, B, C, D)
    b, L, H, P = x.shape
    if L > max_len:
        raise ContractError(f"matrix oracle limited to L <= {max_len}, got {L}")
    abar = np.exp(dt[..., None] * A)                      # (b, L, H, Q, N)
    Q = abar.shape[3]
    # seg[:, j, i] = prod_{i<k<=j} abar_k for i <= j, else 0
    seg = np.zeros((b, L, L) + abar.shape[2:], dtype=abar.dtype)
    for j in range(L):
        run = np.ones_like(abar[:, 0])
        seg[:, j, j] = run
        for i in range(j - 1, -1, -1):
            run = run * abar[:, i + 1]
            seg[:, j, i] = run
    # M[b, j, i, h, q] = sum_n C[j, n] seg[j, i, h, q, n] B[i, n] * dt[i, h, q]
    M = np.einsum("bjn,bjihqn,bin->bjihq", C, seg, B)
    dtq = np.broadcast_to(dt, (b, L, H, max(Q, dt.shape[3])))
    if M.shape[-1] != dtq.shape[-1]:
        M = np.broadcast_to(M, M.shape[:-1] + (dtq.shape[-1],))
    M = M * dtq[:, None, :, :, :]
    if M.shape[-1] == 1:
        y = np.einsum("bjih,bihp->bjhp", M[..., 0], x)
    else:
        y = np.einsum("bjihp,bihp->bjhp", M, x)
    return y + D * x


def mixing_matrix(dt, A, B, C, max_len: int = MATRIX_ORACLE_MAX_LEN) -> np.ndarray:
    """Per-head semiseparable matrix for scalar-per-head decay, shape (b, H, L, L)."""
    dt, A, B, C = (np.asarray(v) for v in (dt, A, B, C))
    b, L, H, _ = dt.shape
    if L > max_len:
        raise ContractError(f"matrix oracle limited to L <= {max_len}, got {L}")
    if A.shape[1:] != (1, 1) or dt.shape[3] != 1:
        raise ContractError("mixing_matrix needs scalar-per-head decay")
    abar = np.exp(dt[..., 0] * A[:, 0, 0])                # (b, L, H)
    M = np.zeros((b, H, L, L), dtype=abar.dtype)
    CB = np.einsum("bjn,bin->bji", C, B)
    for j in range(L):
        run = np.ones((b, H), dtype=abar.dtype)
        M[:, :, j, j] = CB[:, j, j, None] * run * dt[:, j, :, 0]
        for i in range(j - 1, -1, -1):
            run = run * abar[:, i + 1]
            M[:, :, j, i] = CB[:, j, i, None] * run * dt[:, i, :, 0]
    return M


def selective_scan(x: Tensor, dt: Tensor, A: Tensor, B: Tensor, C: Tensor, D: Tensor) -> Tensor:
    """Differentiable recurrent scan; the backward pass runs the adjoint recurrence."""
    xd, dtd, Ad, Bd, Cd, Dd = (t.data for t in (x, dt, A, B, C, D))
    _check_shapes(xd, dtd, Ad, Bd, Cd, Dd)
    dA = _decays(dtd, Ad)
    dtx = np.ascontiguousarray(dtd * xd)
    Bc, Cc = np.ascontiguousarray(Bd), np.ascontiguousarray(Cd)
    y = _scan_fwd_kernel(dA, dtx, Bc, Cc) + Dd * xd

    def bw(gy):
        gD = unbroadcast(gy * xd, Dd.shape)
        g_dtx, gB, gC, gdA = _scan_bwd_kernel(np.ascontiguousarray(gy), dA, dtx, Bc, Cc)
        gz = gdA * dA
        gdt = unbroadcast(gz * Ad, dtd[..., None].shape)[..., 0]
        gA = unbroadcast(gz * dtd[..., None], Ad.shape)
        gdt = gdt + unbroadcast(g_dtx * xd, dtd.shape)
        gx = gy * Dd + g_dtx * dtd
        return gx, gdt, gA, gB, gC, gD

    return ad.make_op("selective_scan", y, (x, dt, A, B, C, D), bw)


# ---------------------------------------------------------------------------
# block


@dataclass
class SSDConfig:
    d_model: int = 128
    n_heads: int = 4
    d_state: int = 16
    expand: int = 2
    conv_width: int = 4
    variant: str = "mamba2"        # "mamba2": scalar decay per head; "diag": per-channel diagonal A
    dt_min: float = 0.01
    dt_max: float = 0.1
    a_min: float = 1.0             # scalar-decay heads draw exp(a_log) uniformly from [a_min, a_max]
    a_max: float = 16.0

    def __post_init__(self):
        if self.variant not in ("mamba2", "diag"):
            raise ContractError(f"unknown SSD variant {self.variant!r}")
        if (self.d_model * self.expand) % self.n_heads:
            raise ContractError("d_model * expand must be divisible by n_heads")
        if self.conv_width < 0:
            raise ContractError("conv_width must be >= 0")
        if not 0 < self.a_min <= self.a_max:
            raise ContractError("need 0 < a_min <= a_max")

    @property
    def d_inner(self) -> int:
        return self.d_model * self.expand

    @property
    def head_dim(self) -> int:
        return self.d_inner // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def _inv_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class Mamba2Block(Module):
    """in_proj -> causal depthwise conv -> SiLU -> selective scan -> SiLU(z) gate -> out_proj.

    Holds the SSD parameters: ``a_log`` (decay ``a = -exp(a_log)``), the
    ``dt_proj`` / ``B_proj`` / ``C_proj`` maps and the ``D`` skip. The caller
    owns residual connections and scan direction.
    """

    def __init__(self, cfg: SSDConfig, rng: np.random.Generator):
        self.cfg = cfg
        di, H, N, P = cfg.d_inner, cfg.n_heads, cfg.d_state, cfg.head_dim
        self.in_proj = Linear(cfg.d_model, 2 * di, rng)
        if cfg.conv_width > 0:
            K = cfg.conv_width
            self.conv_weight = Parameter(rng.uniform(-1.0, 1.0, size=(K, di)) / np.sqrt(K))
            self.conv_bias = Parameter(np.zeros(di))
        dt_out = H if cfg.variant == "mamba2" else di
        self.dt_proj = Linear(di, dt_out, rng, scale=0.1 / np.sqrt(di))
        dt0 = np.exp(rng.uniform(np.log(cfg.dt_min), np.log(cfg.dt_max), size=dt_out))
        self.dt_proj.bias.data = _inv_softplus(dt0).astype(self.dt_proj.bias.dtype)
        self.B_proj = Linear(di, N, rng, bias=False)
        self.C_proj = Linear(di, N, rng, bias=False)
        if cfg.variant == "mamba2":
            self.a_log = Parameter(np.log(rng.uniform(cfg.a_min, cfg.a_max, size=(H, 1, 1))))
        else:
            self.a_log = Parameter(np.log(np.broadcast_to(np.arange(1.0, N + 1), (H, P, N)).copy()))
        self.D = Parameter(np.ones((H, 1)))
        self.out_proj = Linear(di, cfg.d_model, rng)

    def ssm_inputs(self, x: Tensor):
        """Project ``x`` (b, L, d_model) to the scan operands and the gate."""
        cfg = self.cfg
        b, L, _ = x.shape
        di, H, P = cfg.d_inner, cfg.n_heads, cfg.head_dim
        xz = self.in_proj(x)
        xs = xz[..., :di]
        z = xz[..., di:]
        if cfg.conv_width > 0:
            xs = ad.causal_conv1d(xs, self.conv_weight, self.conv_bias)
        u = ad.silu(xs)
        dt = ad.softplus(self.dt_proj(u))
        dt = dt.reshape(b, L, H, 1 if cfg.variant == "mamba2" else P)
        A = -ad.exp(self.a_log)
        return u.reshape(b, L, H, P), dt, A, self.B_proj(u), self.C_proj(u), z

    def forward(self, x: Tensor, method: str = "recurrent") -> Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        if x.shape[-1] != self.cfg.d_model:
            raise DimensionError(f"block expects width {self.cfg.d_model}, got {x.shape[-1]}")
        b, L, _ = x.shape
        u, dt, A, Bm, Cm, z = self.ssm_inputs(x)
        if method == "recurrent":
            y = selective_scan(u, dt, A, Bm, Cm, self.D)
        elif method == "matrix":
            with ad.no_grad():
                y = Tensor(selective_scan_matrix(u.data, dt.data, A.data, Bm.data, Cm.data,
                                                 self.D.data))
        else:
            raise ContractError(f"unknown scan method {method!r}")
        y = y.reshape(b, L, self.cfg.d_inner) * ad.silu(z)
        out = self.out_proj(y)
        if squeeze:
            out = out.reshape(*out.shape[1:])
        return out
