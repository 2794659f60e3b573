import json
from pathlib import Path

import numpy as np

GOLDEN = Path(__file__).parent / "golden"


def load_golden(name):
    return np.asarray(json.loads((GOLDEN / name).read_text())["values"])


def save_golden(name, values, note):
    arr = np.asarray(values, dtype=float)
    doc = {"note": note, "shape": list(arr.shape), "values": arr.tolist()}
    (GOLDEN / name).write_text(json.dumps(doc) + "\n")
