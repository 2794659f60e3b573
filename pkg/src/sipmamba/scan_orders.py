"""
2D patch-grid scan orders.

A scan order is a bijection from sequence positions to grid cells (row-major
cell index ``r * W + c``). Four modes are provided:

* ``Raster1D``  - row-major, one direction.
* ``BiScan``    - row-major forward, its reverse for the backward pass.
* ``CrossScan`` - row-major and column-major forward, both reversed backward.
* ``SIP``       - radial quadrant scan starting at the grid center.

SIP geometry. The grid is cut into four quadrants: rows ``[0, ceil(H/2))``
are top, cols ``[ceil(W/2), W)`` are right. Quadrant I is top-right, II
top-left, III bottom-left, IV bottom-right. Each quadrant gets a local frame
whose origin is the quadrant cell touching the center and whose axes point
away from the center (I: +x right, +y up; IV: +x right, +y down; III: +x
left, +y down; II: +x left, +y up). Inside a frame with max index N the
trajectory from ``(x, y)`` steps to

* ``(x - k, 0)``      if ``x == N``
* ``(0, y - k)``      if ``y == N`` (and ``x != N``)
* ``(x + 1, y + 1)``  otherwise

with ``k = x + 1`` when ``y > x`` and ``k = y - 1`` when ``y <= x``. The walk
stops once it leaves ``[0, N]^2``. From the start ``(0, N)`` this visits all
``(N+1)^2`` cells: it sweeps the diagonals ``y - x = N, N-1, ..., -N`` in
turn. Quadrants are concatenated in the order I, IV, III, II.
"""

from __future__ import annotations

import colorsys
import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ContractError, CoverageError


class ScanMode(str, Enum):
    RASTER1D = "Raster1D"
    BISCAN = "BiScan"
    CROSSSCAN = "CrossScan"
    SIP = "SIP"


@dataclass(frozen=True)
class GridShape:
    rows: int
    cols: int

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise ContractError(f"grid dims must be positive, got {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class QuadrantSpec:
    quadrant_id: str
    local_dims: tuple[int, int]       # (N_x + 1, N_y + 1)
    origin_cell: tuple[int, int]      # global (row, col) of local (0, 0)
    axis_dirs: tuple[int, int]        # (col step per +x, row step per +y)

    def to_global(self, x: int, y: int) -> tuple[int, int]:
        r0, c0 = self.origin_cell
        dc, dr = self.axis_dirs
        return r0 + y * dr, c0 + x * dc

    def contains_local(self, x: int, y: int) -> bool:
        return 0 <= x < self.local_dims[0] and 0 <= y < self.local_dims[1]


@dataclass
class LocalityReport:
    mean_index_gap: float
    max_run_break: int
    n_pairs: int


@dataclass
class ScanOrder:
    mode: ScanMode
    shape: GridShape
    perm: np.ndarray
    inv: np.ndarray = field(repr=False)
    aux: tuple[np.ndarray, ...] = field(default=(), repr=False)

    def __post_init__(self):
        validate_permutation(self.perm, self.shape.size)

    def __len__(self):
        return int(self.perm.size)

    @property
    def forward_routes(self) -> list[np.ndarray]:
        """Orders fed to the forward directional pass."""
        if self.mode is ScanMode.CROSSSCAN:
            return [self.aux[0], self.aux[1]]
        return [self.perm]

    @property
    def backward_routes(self) -> list[np.ndarray]:
        """Orders fed to the backward directional pass.

        ``Raster1D`` is unidirectional, so its backward pass reuses the
        forward order.
        """
        if self.mode is ScanMode.RASTER1D:
            return [self.perm]
        if self.mode is ScanMode.BISCAN:
            return [self.aux[0]]
        if self.mode is ScanMode.CROSSSCAN:
            return [self.aux[2], self.aux[3]]
        return [self.perm[::-1].copy()]

    def to_json(self) -> str:
        return json.dumps({
            "mode": self.mode.value,
            "rows": self.shape.rows,
            "cols": self.shape.cols,
            "perm": self.perm.tolist(),
            "aux": [a.tolist() for a in self.aux],
        })

    @classmethod
    def from_json(cls, text: str) -> "ScanOrder":
        d = json.loads(text)
        perm = np.asarray(d["perm"], dtype=np.intp)
        shape = GridShape(d["rows"], d["cols"])
        aux = tuple(np.asarray(a, dtype=np.intp) for a in d.get("aux", []))
        for a in aux:
            validate_permutation(a, shape.size)
        return cls(ScanMode(d["mode"]), shape, perm, _inverse(perm), aux)


def validate_permutation(perm: np.ndarray, n: int) -> None:
    perm = np.asarray(perm)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ContractError(f"scan order is not a bijection on 0..{n - 1}")


def _inverse(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size, dtype=perm.dtype)
    return inv


# ---------------------------------------------------------------------------
# SIP


def sip_quadrant_trajectory(N: int, start: tuple[int, int] | None = None) -> list[tuple[int, int]]:
    """Cells visited by the radial recurrence in a ``(N+1) x (N+1)`` local frame.

    Iteration stops when the next point leaves ``[0, N]^2``. Not every start
    covers the frame; ``(0, 0)`` for instance only reaches cells with
    ``y <= x``. Revisiting a cell raises :class:`CoverageError`.
    """
    if N < 0:
        raise ContractError(f"N must be >= 0, got {N}")
    x, y = (0, N) if start is None else start
    if not (0 <= x <= N and 0 <= y <= N):
        raise ContractError(f"start {(x, y)} outside [0, {N}]^2")
    out: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    while 0 <= x <= N and 0 <= y <= N:
        if (x, y) in seen:
            raise CoverageError(f"trajectory from {start} revisits {(x, y)}")
        seen.add((x, y))
        out.append((x, y))
        k = x + 1 if y > x else y - 1
        if x == N:
            x, y = x - k, 0
        elif y == N:
            x, y = 0, y - k
        else:
            x, y = x + 1, y + 1
    return out


def quadrant_specs(shape: GridShape) -> list[QuadrantSpec]:
    """Nonempty quadrants in scan order I, IV, III, II."""
    H, W = shape.rows, shape.cols
    top = math.ceil(H / 2)
    right0 = math.ceil(W / 2)
    n_right, n_left = W - right0, right0
    n_top, n_bottom = top, H - top
    specs = [
        QuadrantSpec("I", (n_right, n_top), (top - 1, right0), (1, -1)),
        QuadrantSpec("IV", (n_right, n_bottom), (top, right0), (1, 1)),
        QuadrantSpec("III", (n_left, n_bottom), (top, right0 - 1), (-1, 1)),
        QuadrantSpec("II", (n_left, n_top), (top - 1, right0 - 1), (-1, -1)),
    ]
    return [q for q in specs if q.local_dims[0] > 0 and q.local_dims[1] > 0]


def sip_quadrant_cells(shape: GridShape, quad: QuadrantSpec,
                       start: tuple[int, int] | None = None) -> list[tuple[int, int]]:
    """Global (row, col) cells of one quadrant in SIP order."""
    N = max(quad.local_dims) - 1
    trace = sip_quadrant_trajectory(N, start)
    cells = [quad.to_global(x, y) for x, y in trace if quad.contains_local(x, y)]
    need = quad.local_dims[0] * quad.local_dims[1]
    if len(cells) != need:
        raise CoverageError(
            f"quadrant {quad.quadrant_id}: start {start or (0, N)} covers "
            f"{len(cells)} of {need} cells")
    return cells


def _sip_perm(shape: GridShape, start) -> np.ndarray:
    W = shape.cols
    cells = []
    for quad in quadrant_specs(shape):
        cells.extend(sip_quadrant_cells(shape, quad, start))
    return np.asarray([r * W + c for r, c in cells], dtype=np.intp)


# ---------------------------------------------------------------------------


def build_scan_order(shape: GridShape, mode: ScanMode | str,
                     sip_start: tuple[int, int] | None = None) -> ScanOrder:
    mode = ScanMode(mode)
    H, W = shape.rows, shape.cols
    raster = np.arange(H * W, dtype=np.intp)
    aux: tuple[np.ndarray, ...] = ()
    if mode is ScanMode.SIP:
        perm = _sip_perm(shape, sip_start)
    elif mode is ScanMode.RASTER1D:
        perm = raster
    elif mode is ScanMode.BISCAN:
        perm = raster
        aux = (raster[::-1].copy(),)
    else:
        colmajor = raster.reshape(H, W).T.reshape(-1).copy()
        perm = raster
        aux = (raster, colmajor, raster[::-1].copy(), colmajor[::-1].copy())
    for a in aux:
        validate_permutation(a, H * W)
    return ScanOrder(mode, shape, perm, _inverse(perm), aux)


def _adjacent_pairs(mask: np.ndarray):
    H, W = mask.shape
    idx = np.arange(H * W).reshape(H, W)
    horiz = mask[:, :-1] & mask[:, 1:]
    vert = mask[:-1, :] & mask[1:, :]
    a = np.concatenate([idx[:, :-1][horiz], idx[:-1, :][vert]])
    b = np.concatenate([idx[:, 1:][horiz], idx[1:, :][vert]])
    return a, b


def connected_components(mask: np.ndarray) -> list[list[int]]:
    """4-connected components of a boolean grid, as lists of cell indices."""
    H, W = mask.shape
    label = -np.ones((H, W), dtype=int)
    comps: list[list[int]] = []
    for r0 in range(H):
        for c0 in range(W):
            if not mask[r0, c0] or label[r0, c0] >= 0:
                continue
            lab = len(comps)
            stack = [(r0, c0)]
            label[r0, c0] = lab
            cells = []
            while stack:
                r, c = stack.pop()
                cells.append(r * W + c)
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= rr < H and 0 <= cc < W and mask[rr, cc] and label[rr, cc] < 0:
                        label[rr, cc] = lab
                        stack.append((rr, cc))
            comps.append(sorted(cells))
    return comps


def locality_score(order: ScanOrder, mask: np.ndarray) -> LocalityReport:
    """How far apart 4-adjacent masked cells land in the scan sequence.

    ``mean_index_gap`` averages ``|pos(a) - pos(b)|`` over adjacent masked
    pairs; with no pairs it is 1 by convention. ``max_run_break`` is the
    largest jump between consecutive sequence positions of one connected
    component (0 for a single cell).
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (order.shape.rows, order.shape.cols):
        raise ContractError(f"mask shape {mask.shape} != grid {order.shape}")
    if not mask.any():
        raise ContractError("locality_score needs a nonempty mask")
    pos = order.inv
    a, b = _adjacent_pairs(mask)
    gap = 1.0 if a.size == 0 else float(np.abs(pos[a] - pos[b]).mean())
    worst = 0
    for comp in connected_components(mask):
        if len(comp) > 1:
            p = np.sort(pos[comp])
            worst = max(worst, int(np.diff(p).max()))
    return LocalityReport(gap, worst, int(a.size))


def render_ppm(order: ScanOrder, cell_px: int = 1) -> bytes:
    """Binary P6 image; each cell is a ``cell_px`` square coloured by scan position."""
    H, W = order.shape.rows, order.shape.cols
    n = len(order)
    colors = np.zeros((H * W, 3), dtype=np.uint8)
    for pos, cell in enumerate(order.perm):
        hue = 0.85 * pos / max(n - 1, 1)
        rgb = colorsys.hsv_to_rgb(hue, 1.0, 1.0)
        colors[cell] = [int(round(255 * ch)) for ch in rgb]
    img = colors.reshape(H, W, 3)
    img = np.repeat(np.repeat(img, cell_px, axis=0), cell_px, axis=1)
    header = f"P6\n{W * cell_px} {H * cell_px}\n255\n".encode("ascii")
    return header + img.tobytes()
