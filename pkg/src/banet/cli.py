"""Command-line entry point: ``banet <subcommand>``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
Set ``BANET_DETERMINISTIC=1`` to force deterministic torch kernels.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import boundary, imaging
from .config import ConfigError, RunConfig
from .data import DatasetError, PortraitDataset, pad_image, scan_dataset
from .gradients import image_gradient
from .imaging import ImageFormatError
from .trainer import CheckpointError, NonFiniteLossError, Trainer, load_checkpoint, model_from_checkpoint, start_finetune

log = logging.getLogger("banet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _load_config(args) -> RunConfig:
    return RunConfig.load(getattr(args, "config", None), getattr(args, "set", None) or ())


# -- subcommands -----------------------------------------------------------

def cmd_make_targets(args) -> int:
    mask_dir, out_dir = Path(args.mask_dir), Path(args.out_dir)
    masks = sorted(p for p in mask_dir.glob("*.png")) if mask_dir.is_dir() else []
    if not masks:
        raise DatasetError(f"no PNG masks found in {mask_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    failed, kernels = [], []
    for path in masks:
        try:
            mask = imaging.load_mask(path)
        except (ImageFormatError, OSError) as exc:
            failed.append(f"{path.name}: {exc}")
            continue
        k = boundary.dilation_kernel_size(boundary.DilationSpec.from_mask(mask, args.width))
        kernels.append(k)
        imaging.save_mask(boundary.make_boundary_target(mask, kernel_size=k), out_dir / f"{path.stem}_boundary.png")
    mean_k = float(np.mean(kernels)) if kernels else float("nan")
    print(f"wrote {len(kernels)} boundary targets to {out_dir} (mean kernel size {mean_k:.2f})")
    for line in failed:
        print(f"unreadable mask: {line}", file=sys.stderr)
    return EXIT_DATA if failed else EXIT_OK


def _dataset_from_config(cfg: RunConfig, root_key: str = "root", train: bool = True) -> PortraitDataset:
    d = cfg["data"]
    root = d[root_key]
    if root is None:
        raise ConfigError(f"data.{root_key}: dataset root is not set")
    refs = scan_dataset(root, d["layout"])
    if train and d["train_split"] < 1:
        refs = refs[: max(1, math.ceil(len(refs) * d["train_split"]))]
    return PortraitDataset.from_refs(
        refs, size=d["size"], augment_spec=cfg.augment_spec() if train else None,
        width=cfg["boundary"]["canonical_width"], seed=d["seed"],
    )


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.print_config:
        print(cfg.dump())
        return EXIT_OK
    overrides = {"phase": args.phase} if args.phase else {}
    tcfg = cfg.train_config(**overrides)
    out_dir = Path(args.out)
    torch.manual_seed(tcfg.seed)
    if args.resume:
        state = load_checkpoint(args.resume)
        if state["phase"] != tcfg.phase:
            raise UsageError(f"--resume checkpoint is from phase {state['phase']!r}, requested {tcfg.phase!r}")
        dataset = _dataset_from_config(cfg)
        trainer = Trainer.resume(state, dataset, tcfg, run_dir=out_dir)
    else:
        dataset = _dataset_from_config(cfg)
        if tcfg.phase == "finetune" and not args.from_scratch:
            if not args.init:
                raise UsageError("finetune needs --init <pretrain checkpoint> (or --from-scratch)")
            trainer = start_finetune(args.init, dataset, tcfg, cfg.loss_weights(), out_dir)
        else:
            from .model import BANet
            trainer = Trainer(BANet(cfg.model_config()), dataset, tcfg, cfg.loss_weights(), out_dir)
    trainer.extra_config = cfg.to_dict()
    trainer.train()
    print(out_dir / "final.pt")
    return EXIT_OK


@torch.no_grad()
def predict_image(model, img: np.ndarray) -> np.ndarray:
    """Confidence map for an image of any size (pad to /32, then crop back)."""
    h, w = img.shape[:2]
    x = imaging.image_to_tensor(pad_image(img))[None]
    return model(x).confidence[0, 0, :h, :w].numpy()


def cmd_infer(args) -> int:
    model = model_from_checkpoint(args.checkpoint).eval()
    src = Path(args.input)
    if src.is_dir():
        files = sorted(p for p in src.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    else:
        files = [src]
    if not files:
        raise DatasetError(f"no images found at {src}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    for path in files:
        try:
            img = imaging.load_image(path)
        except (ImageFormatError, OSError) as exc:
            log.error("skipping %s: %s", path, exc)
            failures += 1
            continue
        conf = predict_image(model, img)
        result = conf if args.soft else (conf > args.threshold).astype(np.float32)
        imaging.save_mask(result, out / f"{path.stem}.png")
    print(f"wrote {len(files) - failures} masks to {out}")
    return EXIT_DATA if failures == len(files) else EXIT_OK


def cmd_eval(args) -> int:
    from . import evaluator

    if args.checkpoint:
        state = load_checkpoint(args.checkpoint)
        base = state.get("config") or {}
        cfg = RunConfig.from_dict(base) if base else RunConfig()
    else:
        state, cfg = None, RunConfig()
    if args.config or args.set:
        cfg = RunConfig.load(args.config, args.set or ())
    if args.print_config:
        print(cfg.dump())
        return EXIT_OK
    root = args.data or cfg["data"]["eval_root"] or cfg["data"]["root"]
    if root is None:
        raise ConfigError("data.eval_root: no evaluation dataset given (use --data)")
    size = args.resolution
    dataset = PortraitDataset.from_refs(scan_dataset(root, args.layout or cfg["data"]["layout"]), size=size,
                                        width=cfg["boundary"]["canonical_width"])
    result: dict = {}
    if args.ablation:
        tcfg = cfg.train_config()
        if args.iterations:
            tcfg = cfg.train_config(iterations=args.iterations, warmup_iterations=None)
        train_set = _dataset_from_config(cfg) if cfg["data"]["root"] else dataset
        rows = evaluator.ablation_run(train_set, dataset, cfg.model_config(), tcfg, cfg.loss_weights(),
                                      resolution=size)
        result["ablation"] = rows
        if args.csv:
            evaluator.write_ablation_csv(rows, args.csv)
        print(evaluator.ablation_markdown(rows))
    else:
        if state is None:
            raise UsageError("eval needs --checkpoint (or --ablation)")
        model = model_from_checkpoint(state).eval()
        report = evaluator.evaluate(model, dataset, resolution=size, mode=args.mode, warmup=args.warmup)
        result["report"] = report.to_dict()
        if args.save_masks:
            out = Path(args.save_masks)
            out.mkdir(parents=True, exist_ok=True)
            for i in range(len(dataset)):
                s = dataset.base_sample(i)
                imaging.save_mask(predict_image(model, s.image), out / f"{s.source_id}.png")
        print(f"mIoU {100 * report.miou:.2f}%  fps {report.fps:.1f}  params {report.param_count} "
              f"({report.param_mb:.2f} MB)")
    if args.json:
        Path(args.json).write_text(json.dumps(result, indent=2) + "\n")
    return EXIT_OK


def cmd_gradients(args) -> int:
    img = imaging.load_image(args.image)
    field = image_gradient(imaging.image_to_tensor(img).double())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mag = field.magnitude.numpy()
    angle = np.arctan2(field.gy.numpy(), field.gx.numpy())
    stem = Path(args.image).stem
    imaging.save_mask(imaging.minmax_normalize(mag), out / f"{stem}_magnitude.png")
    imaging.save_mask(np.where(mag > 1e-8, (angle + np.pi) / (2 * np.pi), 0.0), out / f"{stem}_angle.png")
    print(out)
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import SyntheticSpec, generate

    spec = SyntheticSpec(n_images=args.n, size=args.size, shape=args.shape, background=args.background,
                         noise_sigma=args.noise, seed=args.seed)
    print(generate(spec, args.out_dir))
    return EXIT_OK


def cmd_oracles(args) -> int:
    from .oracles import oracle_suite

    report = oracle_suite()
    for name, (ok, detail) in report.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for ok, _ in report.values()) else EXIT_NUMERIC


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="banet", description="Portrait segmentation with boundary attention")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def config_args(sp):
        sp.add_argument("--config", help="YAML run config")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        sp.add_argument("--print-config", action="store_true", help="print the resolved config and exit")

    sp = sub.add_parser("make-targets", help="write boundary targets for a folder of masks")
    sp.add_argument("mask_dir")
    sp.add_argument("out_dir")
    sp.add_argument("--width", type=_positive_float, default=boundary.DEFAULT_WIDTH)
    sp.set_defaults(func=cmd_make_targets)

    sp = sub.add_parser("train", help="run one training phase")
    config_args(sp)
    sp.add_argument("--phase", choices=("pretrain", "finetune"))
    sp.add_argument("--resume", help="continue an interrupted run from this checkpoint")
    sp.add_argument("--init", help="pretrain checkpoint to fine-tune from")
    sp.add_argument("--from-scratch", action="store_true")
    sp.add_argument("--out", default="runs/banet")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="predict masks for an image or folder")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("input")
    sp.add_argument("--out", required=True)
    sp.add_argument("--soft", action="store_true", help="write the confidence map instead of a binary mask")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", help="mIoU / FPS report, or the three-way ablation")
    config_args(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--data", help="evaluation dataset root")
    sp.add_argument("--layout", choices=("folder_pairs", "pfcn_like"))
    sp.add_argument("--resolution", type=int, default=512)
    sp.add_argument("--mode", choices=("foreground", "two_class"), default="foreground")
    sp.add_argument("--warmup", type=int, default=10)
    sp.add_argument("--json", help="write the report as JSON")
    sp.add_argument("--save-masks", help="directory for per-image confidence PNGs")
    sp.add_argument("--ablation", action="store_true")
    sp.add_argument("--iterations", type=int, help="training iterations per ablation variant")
    sp.add_argument("--csv", help="ablation table as CSV")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradients", help="write gradient magnitude/angle images")
    sp.add_argument("image")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gradients)

    sp = sub.add_parser("synth")
    sp.add_argument("out_dir")
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--size", type=int, default=128)
    sp.add_argument("--shape", choices=("disc", "head_shoulders"), default="head_shoulders")
    sp.add_argument("--background", choices=("flat", "gradient", "noise"), default="gradient")
    sp.add_argument("--noise", type=float, default=0.05)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("oracles", help="run the brute-force self-checks")
    sp.set_defaults(func=cmd_oracles)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if os.environ.get("BANET_DETERMINISTIC", "") not in ("", "0"):
        torch.use_deterministic_algorithms(True)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"banet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, ImageFormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"banet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLossError as exc:
        print(f"banet: numeric failure: {exc}", file=sys.stderr)
        if exc.snapshot:
            print(f"snapshot written to {exc.snapshot}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
