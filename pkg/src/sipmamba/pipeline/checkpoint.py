"""JSON checkpoints.

Layout (``format_version`` 1)::

    {
      "format": "sipmamba-checkpoint",
      "format_version": 1,
      "stage": <last completed stage, 0 if untrained>,
      "completed_stages": [...],
      "step": <total optimizer steps>,
      "seed": <model init seed>,
      "model_config": {...ModelConfig fields...},
      "train_config": {...} or null,
      "params": {name: array, ...},
      "optimizer": null or {"lr", "betas", "eps", "weight_decay", "t",
                            "names": [...], "m": [array...], "v": [array...]}
    }

Each array is ``{"dtype": str, "shape": [...], "data": base64 of C-order bytes}``.
Keys are written sorted so identical models give identical files.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from ..errors import ContractError
from .model import ModelConfig, VQLAModel
from .train import TrainState

FORMAT = "sipmamba-checkpoint"
VERSION = 1


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {"dtype": str(a.dtype), "shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()


def save_checkpoint(path, model: VQLAModel, state: TrainState | None = None, train_config=None) -> None:
    opt = None
    if state is not None and state.optimizer is not None:
        o = state.optimizer.state()
        opt = {k: o[k] for k in ("lr", "betas", "eps", "weight_decay", "t")}
        opt["names"] = list(state.trainable)
        opt["m"] = [encode_array(m) for m in o["m"]]
        opt["v"] = [encode_array(v) for v in o["v"]]
    doc = {
        "format": FORMAT,
        "format_version": VERSION,
        "stage": max(state.completed) if state and state.completed else 0,
        "completed_stages": list(state.completed) if state else [],
        "step": state.step if state else 0,
        "seed": model.seed,
        "model_config": model.cfg.to_dict(),
        "train_config": train_config.to_dict() if train_config is not None else None,
        "params": {n: encode_array(p.data) for n, p in model.named_parameters()},
        "optimizer": opt,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path) -> tuple[VQLAModel, TrainState, dict]:
    """Rebuild the model and a TrainState carrying the stage marker and step count."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise ContractError(f"{path} is not a checkpoint")
    if doc.get("format_version") != VERSION:
        raise ContractError(f"unsupported checkpoint version {doc.get('format_version')}")
    model = VQLAModel(ModelConfig.from_dict(doc["model_config"]), seed=doc["seed"])
    model.load_state_dict({n: decode_array(a) for n, a in doc["params"].items()})
    state = TrainState(stage=doc["stage"], step=doc["step"], completed=list(doc["completed_stages"]))
    return model, state, doc
