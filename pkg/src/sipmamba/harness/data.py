"""Synthetic radial-instrument scenes.

A scene is an H x W grid of d_in-dim patch features: a central organ blob and
1-4 straight instrument arms, each entering from the image border inside a
distinct diagonal sector (NE, NW, SW, SE) and reaching toward the centre. An
arm's cells carry its class signature; the two cells nearest the centre (the
tool tip) additionally carry a state signature. Every scene is paired with
one question about one of its arms.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ContractError
from ..pipeline.dataset import ArrayDataset
from ..scan_orders import GridShape, connected_components

VOCAB = ("<end>", "<what>", "<state>", "<where>",
         "dir:ne", "dir:nw", "dir:sw", "dir:se",
         "inst:0", "inst:1", "inst:2", "inst:3", "inst:4")
TOK = {name: i for i, name in enumerate(VOCAB)}
DIRECTIONS = ("ne", "nw", "sw", "se")
TEMPLATES = ("what", "state", "where")


@dataclass
class DatasetSpec:
    seed: int = 0
    n_train: int = 2000
    n_test: int = 400
    grid: GridShape = field(default_factory=lambda: GridShape(8, 8))
    d_in: int = 8
    arms_per_scene: tuple = (1, 4)
    n_classes: int = 5
    n_states: int = 3
    templates: tuple = TEMPLATES
    noise: float = 0.5
    spread_deg: float = 30.0
    half_width: tuple = (0.71, 0.9)
    tip_radius: tuple = (1.0, 2.0)
    organ_radius: float = 1.5
    signature_seed: int = 0

    def __post_init__(self):
        if isinstance(self.grid, (list, tuple)):
            self.grid = GridShape(*self.grid)
        self.arms_per_scene = tuple(self.arms_per_scene)
        self.templates = tuple(self.templates)
        self.half_width = tuple(self.half_width)
        self.tip_radius = tuple(self.tip_radius)
        if self.n_train < 1 or self.n_test < 1:
            raise ContractError("n_train and n_test must be >= 1")
        lo, hi = self.arms_per_scene
        if not 1 <= lo <= hi <= len(DIRECTIONS):
            raise ContractError(f"arms_per_scene must lie within [1, {len(DIRECTIONS)}]")
        if hi > self.n_classes:
            raise ContractError("more arms per scene than instrument classes")
        if self.n_classes > 5:
            raise ContractError("the toy vocabulary names at most 5 instrument classes")
        if min(self.grid.rows, self.grid.cols) < 2 * self.tip_radius[1] + 2:
            raise ContractError(f"grid {self.grid} too small for arms reaching radius {self.tip_radius[1]}")
        unknown = set(self.templates) - set(TEMPLATES)
        if not self.templates or unknown:
            raise ContractError(f"unknown question templates {sorted(unknown)}")

    @property
    def vocab(self) -> tuple:
        return VOCAB

    @property
    def answer_classes(self) -> int:
        return self.n_classes + self.n_states + len(DIRECTIONS)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = [self.grid.rows, self.grid.cols]
        for k in ("arms_per_scene", "templates", "half_width", "tip_radius"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "DatasetSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SceneSample:
    patch_grid: np.ndarray      # (H, W, d_in)
    mask: np.ndarray            # (n_arms, H, W) bool, one per instrument
    question_ids: list
    answer_class: int
    bbox: tuple                 # (cx, cy, w, h) of the queried instrument
    directions: list            # sector index per arm
    classes: list
    states: list
    queried: int


def answer_offsets(spec: DatasetSpec) -> dict:
    """Disjoint label ranges: classes, then states, then directions."""
    return {"what": 0, "state": spec.n_classes, "where": spec.n_classes + spec.n_states}


def bbox_of_mask(mask) -> tuple:
    """Tight box over the true cells as normalized (cx, cy, w, h)."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ContractError("mask must be 2-D")
    rows, cols = np.nonzero(m)
    if rows.size == 0:
        raise ContractError("bbox of an empty mask")
    H, W = m.shape
    r0, r1, c0, c1 = rows.min(), rows.max() + 1, cols.min(), cols.max() + 1
    return ((c0 + c1) / 2 / W, (r0 + r1) / 2 / H, (c1 - c0) / W, (r1 - r0) / H)


def _cell_centres(grid: GridShape) -> np.ndarray:
    r, c = np.meshgrid(np.arange(grid.rows) + 0.5, np.arange(grid.cols) + 0.5, indexing="ij")
    return np.stack([r, c], axis=-1)


def arm_mask(grid: GridShape, theta: float, half_width: float, tip_radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Cells within ``half_width`` of the segment from the border to the tip.

    ``theta`` is measured counter-clockwise from +x (right) with +y pointing up.
    Returns the mask and the tip point in (row, col) coordinates.
    """
    centre = np.array([grid.rows / 2, grid.cols / 2])
    d = np.array([-np.sin(theta), np.cos(theta)])
    with np.errstate(divide="ignore"):
        reach = min(np.abs(centre[0] / d[0]), np.abs(centre[1] / d[1]))
    border = centre + reach * d
    tip = centre + tip_radius * d
    seg = border - tip
    length = np.linalg.norm(seg)
    u = seg / length
    w = _cell_centres(grid) - tip
    proj = np.clip(w @ u, 0.0, length)
    dist = np.linalg.norm(w - proj[..., None] * u, axis=-1)
    return dist <= half_width, tip


def sample_arm(rng: np.random.Generator, spec: DatasetSpec, sector: int) -> tuple[np.ndarray, np.ndarray]:
    theta = np.deg2rad(45.0 + 90.0 * sector + rng.uniform(-spec.spread_deg, spec.spread_deg))
    return arm_mask(spec.grid, theta, rng.uniform(*spec.half_width), rng.uniform(*spec.tip_radius))


def touches_border(mask: np.ndarray) -> bool:
    return bool(mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any())


def signatures(spec: DatasetSpec) -> tuple[np.ndarray, np.ndarray]:
    """Fixed class and state feature vectors, shared by train and test splits."""
    rng = np.random.default_rng([spec.signature_seed, 99])
    cls = rng.normal(size=(spec.n_classes, spec.d_in))
    st = rng.normal(size=(spec.n_states, spec.d_in))
    cls /= np.linalg.norm(cls, axis=1, keepdims=True)
    st /= np.linalg.norm(st, axis=1, keepdims=True)
    return cls, st


def _organ(spec: DatasetSpec) -> np.ndarray:
    centre = np.array([spec.grid.rows / 2, spec.grid.cols / 2])
    return np.linalg.norm(_cell_centres(spec.grid) - centre, axis=-1) <= spec.organ_radius


def generate_scene(rng: np.random.Generator, spec: DatasetSpec, sig=None, max_tries: int = 100) -> SceneSample:
    cls_sig, st_sig = sig if sig is not None else signatures(spec)
    n_arms = int(rng.integers(spec.arms_per_scene[0], spec.arms_per_scene[1] + 1))
    sectors = sorted(rng.choice(len(DIRECTIONS), size=n_arms, replace=False).tolist())
    classes = rng.choice(spec.n_classes, size=n_arms, replace=False).tolist()
    states = rng.integers(spec.n_states, size=n_arms).tolist()
    for _ in range(max_tries):
        arms = [sample_arm(rng, spec, s) for s in sectors]
        masks = np.stack([m for m, _ in arms])
        if masks.sum(axis=0).max() > 1:
            continue  # overlapping arms, resample geometry
        if all(len(connected_components(m)) == 1 and touches_border(m) for m in masks):
            break
    else:
        raise ContractError("could not place non-overlapping arms; grid too small for this spec")

    feats = np.zeros((spec.grid.rows, spec.grid.cols, spec.d_in))
    feats[_organ(spec), 0] += 1.0
    centres = _cell_centres(spec.grid)
    for (m, tip), c, s in zip(arms, classes, states):
        feats[m] += cls_sig[c]
        cells = np.argwhere(m)
        near = cells[np.argsort(np.linalg.norm(centres[m] - tip, axis=-1), kind="stable")[:2]]
        feats[near[:, 0], near[:, 1]] += st_sig[s]
    feats += rng.normal(scale=spec.noise, size=feats.shape)

    q = int(rng.integers(n_arms))
    template = spec.templates[int(rng.integers(len(spec.templates)))]
    off = answer_offsets(spec)
    if template == "what":
        ids = [TOK["<what>"], TOK["dir:" + DIRECTIONS[sectors[q]]], TOK["<end>"]]
        answer = off["what"] + classes[q]
    elif template == "state":
        ids = [TOK["<state>"], TOK[f"inst:{classes[q]}"], TOK["<end>"]]
        answer = off["state"] + states[q]
    else:
        ids = [TOK["<where>"], TOK[f"inst:{classes[q]}"], TOK["<end>"]]
        answer = off["where"] + sectors[q]
    return SceneSample(feats, masks, ids, int(answer), bbox_of_mask(masks[q]),
                       sectors, classes, states, q)


def generate_split(spec: DatasetSpec, split: str) -> list[SceneSample]:
    stream = {"train": 0, "test": 1}[split]
    n = spec.n_train if split == "train" else spec.n_test
    rng = np.random.default_rng([spec.seed, stream])
    sig = signatures(spec)
    return [generate_scene(rng, spec, sig) for _ in range(n)]


def to_arrays(samples: list[SceneSample]) -> ArrayDataset:
    return ArrayDataset(np.stack([s.patch_grid for s in samples]),
                        np.array([s.question_ids for s in samples]),
                        np.array([s.answer_class for s in samples]),
                        np.array([s.bbox for s in samples]))


def generate_dataset(spec: DatasetSpec) -> tuple[ArrayDataset, ArrayDataset]:
    """(train, test) from independent random streams keyed by ``spec.seed``."""
    return to_arrays(generate_split(spec, "train")), to_arrays(generate_split(spec, "test"))
