"""Command-line entry point: ``slicesr <subcommand>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from .config import ConfigError, RunConfig
from .evaluation import evaluate, interpolation_baseline
from .gradcheck import gradient_check
from .model import super_resolve
from .training import Trainer
from .volume import VolumeFormatError, load_volume, normalize, save_volume, simulate_lr

log = logging.getLogger("slicesr")

VOLUME_SUFFIX = ".srv"


def _load_run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        cfg = cfg.override(key, value)
    if getattr(args, "threads", None):
        cfg = cfg.override("threads", args.threads)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.override("seed", args.seed)
    return cfg


def _workers(n) -> int:
    """Worker count for patch/chunk fan-out.

    Torch's own intra-op pool stays at one thread: its reduction order
    depends on the thread count, which would break N=1 vs N>1 bit-equality.
    """
    torch.set_num_threads(1)
    return max(1, int(n or 1))


def _volumes_in(directory) -> dict:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"data directory not found: {d}")
    files = sorted(d.glob(f"*{VOLUME_SUFFIX}"))
    if not files:
        raise FileNotFoundError(f"no {VOLUME_SUFFIX} volumes in {d}")
    return {f.name: load_volume(f) for f in files}


def cmd_simulate_lr(args) -> int:
    save_volume(simulate_lr(load_volume(args.input), args.k), args.output)
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    workers = _workers(cfg.threads)
    data_dir = args.data_dir or cfg.paths.data_dir
    out = args.out or cfg.paths.checkpoint
    if not data_dir or not out:
        raise ConfigError("train needs a data directory and an output checkpoint path")
    volumes = [normalize(v) for v in _volumes_in(data_dir).values()]
    if args.resume:
        trainer = Trainer.load(args.resume)
    else:
        # worker count is a runtime knob; keep it out of the checkpoint so N=1 and N>1 match bit for bit
        echo = {k: v for k, v in cfg.to_dict().items() if k != "threads"}
        trainer = Trainer(cfg.model_config(), cfg.train_config(), {"run": echo})
    trainer.workers = workers
    epochs = args.epochs if args.epochs is not None else cfg.train.epochs
    log_path = args.log or cfg.paths.log
    log_file = open(log_path, "a") if log_path else None

    def on_record(rec):
        line = json.dumps(rec)
        if log_file:
            log_file.write(line + "\n")
            log_file.flush()

    try:
        for _ in range(epochs):
            records = trainer.run(volumes, 1, on_record)
            mean = sum(r["loss"] for r in records) / len(records)
            print(f"epoch {trainer.epoch} loss {mean:.6g}", flush=True)
    finally:
        if log_file:
            log_file.close()
    trainer.save(out)
    return 0


def cmd_infer(args) -> int:
    workers = _workers(args.threads)
    lr = normalize(load_volume(args.input))
    if args.baseline:
        out = interpolation_baseline(lr, args.k)
    else:
        if not args.checkpoint:
            raise ConfigError("infer needs --checkpoint unless --baseline is given")
        model = Trainer.load(args.checkpoint).model.to(torch.float64)
        out = super_resolve(model, lr, args.k, workers=workers)
    save_volume(out, args.output)
    print(f"wrote {args.output} dims {out.dims} spacing {tuple(round(s, 6) for s in out.spacing)}")
    return 0


def cmd_eval(args) -> int:
    workers = _workers(args.threads)
    k_list = [int(k) for k in args.k_list.split(",")]
    methods = {"Interpolation": interpolation_baseline}
    if args.checkpoint:
        model = Trainer.load(args.checkpoint).model.to(torch.float64)
        methods["Model"] = lambda lr, k: super_resolve(model, lr, k, workers=workers)
    report = evaluate(methods, _volumes_in(args.gt_dir), k_list)
    table = report.to_table()
    out = Path(args.report)
    out.write_text(table)
    out.with_suffix(".jsonl").write_text(report.to_jsonl())
    print(table, end="")
    return 0


def cmd_grad_check(args) -> int:
    cfg = _load_run_config(args)
    _workers(cfg.threads)
    report = gradient_check(cfg.model_config() if args.config else None, args.tolerance, seed=cfg.seed)
    print(report.format())
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slicesr", description="Arbitrary-ratio slice interpolation for 3D volumes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate-lr", help="keep every k-th slice of a volume")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("-k", type=int, required=True)
    s.set_defaults(func=cmd_simulate_lr)

    s = sub.add_parser("train", help="train a model on a directory of HR volumes")
    s.add_argument("--config")
    s.add_argument("--data-dir")
    s.add_argument("--out", help="output checkpoint")
    s.add_argument("--epochs", type=int)
    s.add_argument("--resume", help="continue from this checkpoint")
    s.add_argument("--log", help="append LDJSON step records here")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. train.lr=1e-3")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="super-resolve an LR volume at ratio k")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("-k", type=int, required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--baseline", action="store_true", help="use trilinear interpolation instead of a model")
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="PSNR/SSIM report against ground-truth HR volumes")
    s.add_argument("--checkpoint")
    s.add_argument("--gt-dir", required=True)
    s.add_argument("--k-list", default="2,3,4")
    s.add_argument("--report", required=True, help="table output; records go to the same path with .jsonl")
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("grad-check", help="finite-difference check of all parameter gradients")
    s.add_argument("--config")
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command in ("simulate-lr", "infer") and args.k < 1:
        print(f"error: k must be >= 1, got {args.k}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, VolumeFormatError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
