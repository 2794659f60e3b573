"""Ablation runner over (scan mode, fusion) cells with seeds per cell."""

from __future__ import annotations

import hashlib
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import autodiff as ad
from ..errors import ContractError
from ..nn import params_digest
from ..pipeline.metrics import evaluate
from ..pipeline.model import FUSIONS, ModelConfig, VQLAModel
from ..pipeline.train import TrainConfig, TrainState, train_stage1, train_stage2
from ..scan_orders import ScanMode
from .data import DatasetSpec, generate_dataset

log = logging.getLogger(__name__)

BASELINE = "Baseline"
SIP_CBMI = "SIP+CBMI"


@dataclass(frozen=True)
class AblationCell:
    name: str
    scan_mode: ScanMode
    fusion: str

    def __post_init__(self):
        object.__setattr__(self, "scan_mode", ScanMode(self.scan_mode))
        if self.fusion not in FUSIONS:
            raise ContractError(f"unknown fusion {self.fusion!r}")

    def to_dict(self) -> dict:
        return {"name": self.name, "scan_mode": self.scan_mode.value, "fusion": self.fusion}


def default_cells() -> list[AblationCell]:
    """Baseline, the four scan modes under CBMI, and cross-attention fusion.

    Scan order only affects the CBMI cells; the others feed visual tokens to
    the LM in raster order and are labelled Raster1D.
    """
    return [
        AblationCell(BASELINE, ScanMode.RASTER1D, "concat"),
        AblationCell("Raster1D+CBMI", ScanMode.RASTER1D, "cbmi"),
        AblationCell("BiScan+CBMI", ScanMode.BISCAN, "cbmi"),
        AblationCell("CrossScan+CBMI", ScanMode.CROSSSCAN, "cbmi"),
        AblationCell("CrossAttention", ScanMode.RASTER1D, "cross-attention"),
        AblationCell(SIP_CBMI, ScanMode.SIP, "cbmi"),
    ]


def desk_model_config() -> ModelConfig:
    return ModelConfig(expand=1)


def desk_data_spec() -> DatasetSpec:
    """Direction queries only; the instrument-keyed templates do not leave the
    answer prior within the desk step budget for any cell."""
    return DatasetSpec(templates=("what",))


def desk_train_config() -> TrainConfig:
    return TrainConfig(lr_stage1=1e-3, lr_stage2=1e-4)


@dataclass
class AblationPlan:
    cells: list = field(default_factory=default_cells)
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    stage1_steps: int = 1500
    stage2_steps: int = 500
    data: DatasetSpec = field(default_factory=desk_data_spec)
    model: ModelConfig = field(default_factory=desk_model_config)
    train: TrainConfig = field(default_factory=desk_train_config)
    workers: int = 1
    eval_batch: int = 100

    def __post_init__(self):
        self.cells = [c if isinstance(c, AblationCell) else AblationCell(**c) for c in self.cells]
        if not self.cells:
            raise ContractError("plan has no cells")
        if len({c.name for c in self.cells}) != len(self.cells):
            raise ContractError("cell names must be unique")
        if not self.seeds:
            raise ContractError("plan needs at least one seed per cell")
        if self.stage1_steps < 0 or self.stage2_steps < 0:
            raise ContractError("step budgets must be >= 0")
        if self.model.grid != self.data.grid or self.model.d_in != self.data.d_in:
            raise ContractError("model grid / d_in must match the dataset spec")
        if self.model.answer_classes != self.data.answer_classes:
            raise ContractError("model answer_classes must match the dataset label space")

    @property
    def is_reference(self) -> bool:
        """True when both Baseline and SIP+CBMI cells are present."""
        keys = {(c.scan_mode, c.fusion) for c in self.cells}
        return (ScanMode.RASTER1D, "concat") in keys and (ScanMode.SIP, "cbmi") in keys

    def to_dict(self) -> dict:
        return {
            "cells": [c.to_dict() for c in self.cells],
            "seeds": list(self.seeds),
            "stage1_steps": self.stage1_steps,
            "stage2_steps": self.stage2_steps,
            "data": self.data.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "workers": self.workers,
            "eval_batch": self.eval_batch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AblationPlan":
        d = dict(d)
        if "data" in d:
            base = desk_data_spec().to_dict()
            base.update(d["data"])
            d["data"] = DatasetSpec.from_dict(base)
        if "model" in d:
            base = desk_model_config().to_dict()
            base.update(d["model"])
            d["model"] = ModelConfig.from_dict(base)
        if "train" in d:
            base = desk_train_config().to_dict()
            base.update(d["train"])
            d["train"] = TrainConfig(**base)
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "AblationPlan":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class CellResult:
    name: str
    scan_mode: str
    fusion: str
    acc: list
    f_score: list
    miou: list
    config_hash: str
    data_hash: str
    init_hashes: list
    wall_clock: float
    errors: list

    def _stat(self, key: str, fn) -> float:
        vals = getattr(self, key)
        return float(fn(vals)) if vals else float("nan")

    @property
    def acc_mean(self) -> float:
        return self._stat("acc", np.mean)

    @property
    def acc_std(self) -> float:
        return self._stat("acc", np.std)

    @property
    def f_mean(self) -> float:
        return self._stat("f_score", np.mean)

    @property
    def f_std(self) -> float:
        return self._stat("f_score", np.std)

    @property
    def miou_mean(self) -> float:
        return self._stat("miou", np.mean)

    @property
    def miou_std(self) -> float:
        return self._stat("miou", np.std)


@dataclass
class MetricsReport:
    cells: list
    plan_hash: str = ""
    wall_clock: float = 0.0

    def cell(self, name: str) -> CellResult:
        for c in self.cells:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"plan_hash": self.plan_hash, "wall_clock": self.wall_clock,
                "cells": [asdict(c) for c in self.cells]}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls([CellResult(**c) for c in d["cells"]], d.get("plan_hash", ""), d.get("wall_clock", 0.0))


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def data_digest(*datasets) -> str:
    h = hashlib.sha256()
    for ds in datasets:
        for arr in (ds.patches, ds.questions, ds.answers, ds.boxes):
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def shared_init_digest(model: VQLAModel) -> str:
    """Hash of the modules every cell shares (all but the fusion block)."""
    return params_digest((n, p) for n, p in model.named_parameters() if not n.startswith("fusion."))


def cell_config(plan: AblationPlan, cell: AblationCell) -> tuple[ModelConfig, dict]:
    mcfg = replace(plan.model, fusion=cell.fusion, scan_mode=cell.scan_mode)
    desc = {"model": mcfg.to_dict(), "train": plan.train.to_dict(), "data": plan.data.to_dict(),
            "stage1_steps": plan.stage1_steps, "stage2_steps": plan.stage2_steps}
    return mcfg, desc


def run_seed(plan: AblationPlan, cell: AblationCell, seed: int, train_set, test_set) -> dict:
    mcfg, _ = cell_config(plan, cell)
    model = VQLAModel(mcfg, seed=seed)
    init_hash = shared_init_digest(model)
    tcfg = replace(plan.train, seed=seed)
    state = TrainState()
    train_stage1(model, train_set, plan.stage1_steps, tcfg, state)
    train_stage2(model, train_set, plan.stage2_steps, tcfg, state)
    metrics = evaluate(model, test_set, plan.eval_batch)
    return {"init_hash": init_hash, **metrics}


def run_cell(plan: AblationPlan, cell: AblationCell, train_set=None, test_set=None) -> CellResult:
    t0 = time.perf_counter()
    if train_set is None:
        train_set, test_set = generate_dataset(plan.data)
    _, desc = cell_config(plan, cell)
    res = CellResult(cell.name, cell.scan_mode.value, cell.fusion, [], [], [],
                     _digest(desc), data_digest(train_set, test_set), [], 0.0, [])
    for seed in plan.seeds:
        try:
            out = run_seed(plan, cell, seed, train_set, test_set)
        except Exception as exc:  # recorded per cell so sibling cells still run
            log.error("cell %s seed %d failed: %s", cell.name, seed, exc)
            res.errors.append(f"seed {seed}: {type(exc).__name__}: {exc}\n{traceback.format_exc()}")
            continue
        res.acc.append(out["acc"])
        res.f_score.append(out["f_score"])
        res.miou.append(out["miou"])
        res.init_hashes.append(out["init_hash"])
        log.info("cell %s seed %d acc %.4f f %.4f miou %.4f", cell.name, seed,
                 out["acc"], out["f_score"], out["miou"])
    res.wall_clock = time.perf_counter() - t0
    return res


def _run_cell_job(args):
    plan_dict, cell_dict, precision = args
    with ad.precision(precision):
        plan = AblationPlan.from_dict(plan_dict)
        return run_cell(plan, AblationCell(**cell_dict))


def run_ablation(plan: AblationPlan) -> MetricsReport:
    """Train and evaluate every cell; a failing cell is recorded without stopping the rest."""
    t0 = time.perf_counter()
    if plan.workers > 1 and len(plan.cells) > 1:
        jobs = [(plan.to_dict(), c.to_dict(), _precision_name()) for c in plan.cells]
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            cells = list(pool.map(_run_cell_job, jobs))
    else:
        train_set, test_set = generate_dataset(plan.data)
        cells = [run_cell(plan, c, train_set, test_set) for c in plan.cells]
    return MetricsReport(cells, _digest(plan.to_dict()), time.perf_counter() - t0)


def _precision_name() -> str:
    return "f32" if ad.get_dtype() == np.float32 else "f64"
