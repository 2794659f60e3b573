"""Pinned-seed computations whose outputs are stored under tests/golden/.

Run ``python tests/golden_cases.py`` to regenerate after an intentional change.
"""

import numpy as np

from sipmamba import autodiff as ad
from sipmamba.cbmi import CBMI, CBMIConfig, project_inputs, sip_mamba2_forward
from sipmamba.scan_orders import GridShape
from sipmamba.ssd import SSDConfig


def cbmi_forward_case():
    """SIP forward pass, 4 text + 16 visual tokens, d_model 32."""
    cfg = CBMIConfig(d_model=32, depth=2, ssd=SSDConfig(d_model=32, n_heads=4, d_state=8, expand=2))
    m = CBMI(cfg, GridShape(4, 4), seed=7)
    rng = np.random.default_rng(2024)
    t = ad.tensor(rng.normal(size=(1, 4, 32)))
    v = ad.tensor(rng.normal(size=(1, 16, 32)))
    F_t, F_v = project_inputs(m, t, v)
    return sip_mamba2_forward(m, F_t, F_v, m.order).data[0]


def cbmi_full_case():
    """End-to-end module output, 4 text + 64 visual tokens."""
    cfg = CBMIConfig(d_model=16, depth=2, ssd=SSDConfig(d_model=16, n_heads=2, d_state=8, expand=2))
    m = CBMI(cfg, GridShape(8, 8), seed=11)
    rng = np.random.default_rng(99)
    t = ad.tensor(rng.normal(size=(4, 16)))
    v = ad.tensor(rng.normal(size=(64, 16)))
    return m(t, v).S_output.data


def pipeline_logits_case():
    from sipmamba.harness.data import DatasetSpec, generate_split
    from sipmamba.pipeline.model import ModelConfig, VQLAModel

    spec = DatasetSpec(seed=5, n_train=1, n_test=1)
    s = generate_split(spec, "test")[0]
    model = VQLAModel(ModelConfig(expand=1), seed=3).eval()
    out = model(s.patch_grid, s.question_ids)
    return np.concatenate([out.answer_logits.data, out.bbox.data])


CASES = {
    "cbmi_forward_sip_4x4.json": cbmi_forward_case,
    "cbmi_full_8x8.json": cbmi_full_case,
    "pipeline_logits.json": pipeline_logits_case,
}


if __name__ == "__main__":
    import sys
    from pathlib import Path

    sys.path.insert(0, str(Path(__file__).parent))
    from conftest import save_golden

    for name, fn in CASES.items():
        save_golden(name, fn(), fn.__doc__ or name)
        print("wrote", name)

    import shutil
    import tempfile

    from sipmamba.harness.cli import main

    here = Path(__file__).parent / "golden"
    with tempfile.TemporaryDirectory() as tmp:
        main(["ablate", "--plan", str(here / "smoke_plan.json"), "--out", tmp])
        shutil.copy(Path(tmp) / "report.csv", here / "smoke_report.csv")
    print("wrote smoke_report.csv")
