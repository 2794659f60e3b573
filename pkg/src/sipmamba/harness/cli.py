"""Command-line entry point: ``sipmamba <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sipmamba", description="Radial scan orders and bidirectional fusion toolkit")
    p.add_argument("--seed", type=int, default=0, help="global seed (default 0)")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    p.add_argument("--precision", choices=("f32", "f64"), default="f64")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scan-viz", help="render a scan order as a PPM image")
    s.add_argument("--rows", type=int, required=True)
    s.add_argument("--cols", type=int, required=True)
    s.add_argument("--mode", default="SIP", help="Raster1D, BiScan, CrossScan or SIP")
    s.add_argument("--out", required=True)
    s.add_argument("--cell-px", type=int, default=1)
    s.add_argument("--json", dest="json_out", default=None, help="also write the permutation as JSON")

    sub.add_parser("selftest", help="run the built-in correctness suites")

    s = sub.add_parser("gen-data", help="generate a synthetic scene dataset")
    s.add_argument("--spec", default=None, help="DatasetSpec JSON (defaults if omitted)")
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("train", help="run one training stage")
    s.add_argument("--config", default=None, help="JSON with optional model/train/data/steps keys")
    s.add_argument("--stage", type=int, choices=(1, 2), required=True)
    s.add_argument("--ckpt", required=True, help="stage 1 writes it; stage 2 reads and updates it")
    s.add_argument("--data", default=None, help="gen-data directory (else generated from config)")

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True, help="gen-data directory or .npz file")

    s = sub.add_parser("ablate", help="run an ablation plan")
    s.add_argument("--plan", default=None, help="AblationPlan JSON (desk-scale defaults if omitted)")
    s.add_argument("--out", required=True, help="output directory for report.json / report.csv")
    s.add_argument("--workers", type=int, default=None)
    return p


def _read_json(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def cmd_scan_viz(args) -> int:
    from ..scan_orders import GridShape, build_scan_order, render_ppm

    order = build_scan_order(GridShape(args.rows, args.cols), args.mode)
    Path(args.out).write_bytes(render_ppm(order, args.cell_px))
    if args.json_out:
        Path(args.json_out).write_text(order.to_json())
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest() else 1


def _load_split(path: Path, split: str):
    from ..pipeline.dataset import ArrayDataset

    return ArrayDataset.from_npz(path / f"{split}.npz" if path.is_dir() else path)


def cmd_gen_data(args) -> int:
    from .data import DatasetSpec, generate_dataset

    raw = _read_json(args.spec)
    raw.setdefault("seed", args.seed)
    spec = DatasetSpec.from_dict(raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = generate_dataset(spec)
    train.to_npz(out / "train.npz")
    test.to_npz(out / "test.npz")
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(train)} train / {len(test)} test scenes to {out}")
    return 0


def cmd_train(args) -> int:
    from ..pipeline.checkpoint import load_checkpoint, save_checkpoint
    from ..pipeline.model import ModelConfig, VQLAModel
    from ..pipeline.train import TrainConfig, TrainState, train_stage1, train_stage2
    from .ablation import desk_model_config, desk_train_config
    from .data import DatasetSpec, generate_dataset

    cfg = _read_json(args.config)
    tdict = desk_train_config().to_dict()
    tdict.update(cfg.get("train", {}))
    tdict.setdefault("seed", args.seed)
    tcfg = TrainConfig(**tdict)
    if args.data:
        train_set = _load_split(Path(args.data), "train")
    else:
        train_set, _ = generate_dataset(DatasetSpec.from_dict(cfg.get("data", {"seed": args.seed})))
    steps = cfg.get("steps", {}).get(str(args.stage), 1500 if args.stage == 1 else 500)

    if args.stage == 1:
        mdict = desk_model_config().to_dict()
        mdict.update(cfg.get("model", {}))
        model = VQLAModel(ModelConfig.from_dict(mdict), seed=args.seed)
        state = train_stage1(model, train_set, steps, tcfg, TrainState())
    else:
        model, state, _ = load_checkpoint(args.ckpt)
        state = train_stage2(model, train_set, steps, tcfg, state)
    save_checkpoint(args.ckpt, model, state, tcfg)
    last = state.loss_history[-1] if state.loss_history else float("nan")
    print(f"stage {args.stage}: {steps} steps, final loss {last:.6f}, checkpoint {args.ckpt}")
    return 0


def cmd_eval(args) -> int:
    from ..pipeline.checkpoint import load_checkpoint
    from ..pipeline.metrics import evaluate

    model, _, _ = load_checkpoint(args.ckpt)
    print(json.dumps(evaluate(model, _load_split(Path(args.data), "test")), sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    from .ablation import AblationPlan, run_ablation
    from .report import emit_report

    plan = AblationPlan.from_dict(_read_json(args.plan))
    if args.workers is not None:
        plan.workers = args.workers
    report = run_ablation(plan)
    for path in emit_report(report, args.out):
        print(f"wrote {path}")
    failed = [c.name for c in report.cells if c.errors]
    if failed:
        print(f"cells with failures: {', '.join(failed)}", file=sys.stderr)
    return 0


COMMANDS = {
    "scan-viz": cmd_scan_viz,
    "selftest": cmd_selftest,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)  # argparse exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    from threadpoolctl import threadpool_limits

    from .. import autodiff as ad
    from ..errors import SipMambaError

    ad.set_precision(args.precision)
    with threadpool_limits(limits=args.threads):
        try:
            return COMMANDS[args.command](args)
        except (SipMambaError, OSError, KeyError) as exc:
            print(f"sipmamba {args.command}: {exc}", file=sys.stderr)
            return 1


if __name__ == "__main__":
    sys.exit(main())
