"""Array-of-fields container shared by training, evaluation and the scene generator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError


@dataclass
class ArrayDataset:
    patches: np.ndarray    # (n, H, W, d_in)
    questions: np.ndarray  # (n, q_len) int
    answers: np.ndarray    # (n,) int
    boxes: np.ndarray      # (n, 4) cx, cy, w, h

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=float)
        self.questions = np.asarray(self.questions, dtype=np.int64)
        self.answers = np.asarray(self.answers, dtype=np.int64)
        self.boxes = np.asarray(self.boxes, dtype=float)
        n = len(self.patches)
        if not (len(self.questions) == len(self.answers) == len(self.boxes) == n):
            raise ContractError("dataset fields disagree on sample count")
        if n and (self.boxes[:, 2:] <= 0).any():
            raise ContractError("target boxes need positive width and height")

    def __len__(self) -> int:
        return len(self.answers)

    def subset(self, idx) -> "ArrayDataset":
        idx = np.asarray(idx)
        return ArrayDataset(self.patches[idx], self.questions[idx], self.answers[idx], self.boxes[idx])

    def to_npz(self, path) -> None:
        np.savez(path, patches=self.patches, questions=self.questions,
                 answers=self.answers, boxes=self.boxes)

    @classmethod
    def from_npz(cls, path) -> "ArrayDataset":
        with np.load(path) as z:
            return cls(z["patches"], z["questions"], z["answers"], z["boxes"])
