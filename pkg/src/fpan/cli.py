"""Command-line interface: ``fpan train | sr | eval | count``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path

from . import config as runconfig
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .imaging import DegradationSpec, ImageIOError, list_pngs, load_png, read_dataset, save_png
from .imaging import self_ensemble_sr, super_resolve
from .metrics import count_flops, count_params, evaluate
from .model import ABLATIONS, FPAN, PAPER_PARAM_TARGET, ConfigurationError, ModelConfig, preset
from .training import PairDataset, TrainingDivergedError, steps_per_epoch, train

log = logging.getLogger("fpan")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

_CKPT_RE = re.compile(r"epoch_(\d{4,})\.ckpt$")


class UsageError(Exception):
    pass


def _load_run_config(path: str | None, overrides: list[str]) -> runconfig.RunConfig:
    cfg = runconfig.load(path) if path else runconfig.RunConfig()
    for item in overrides:
        if "=" not in item:
            raise runconfig.ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg = runconfig.apply(cfg, key, value, source="--set")
    return cfg


def latest_checkpoint(out_dir: Path) -> tuple[int, Path] | None:
    found = []
    for p in out_dir.glob("epoch_*.ckpt"):
        m = _CKPT_RE.search(p.name)
        if m:
            found.append((int(m.group(1)), p))
    return max(found) if found else None


# ----------------------------------------------------------------------
# train
# ----------------------------------------------------------------------
def cmd_train(args) -> int:
    cfg = _load_run_config(args.config, args.set)
    model_cfg = cfg.model_config()
    tcfg = cfg.train_config()
    data_dir = Path(cfg.data_dir)
    if not data_dir.is_dir():
        print(f"error: data_dir {data_dir} does not exist", file=sys.stderr)
        return EXIT_RUNTIME
    triples = read_dataset(data_dir, cfg.lr_dir or None)
    if not triples:
        print(f"error: no PNG files in {data_dir}", file=sys.stderr)
        return EXIT_RUNTIME
    names = [t[0] for t in triples]
    dataset = PairDataset.from_hr([t[1] for t in triples], tcfg.degradation, names, [t[2] for t in triples])

    out_dir = Path(cfg.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.txt").write_text(runconfig.dump(cfg))
    except OSError as exc:
        print(f"error: cannot write to {out_dir}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    start_epoch = 0
    resume = latest_checkpoint(out_dir)
    if resume is not None:
        epoch, path = resume
        model = load_checkpoint(path)
        if model.cfg != model_cfg:
            print(f"error: {path} was trained with a different model config", file=sys.stderr)
            return EXIT_USAGE
        start_epoch = epoch + 1
        log.info("resuming from %s", path)
    else:
        model = FPAN(model_cfg, seed=cfg.seed)

    n_steps = steps_per_epoch(dataset, tcfg)
    log_path = out_dir / "loss.log"
    kept = []
    if start_epoch and log_path.exists():
        kept = log_path.read_text().splitlines()[: start_epoch * n_steps]
    log_path.write_text("".join(line + "\n" for line in kept))

    with open(log_path, "a") as fh:

        def on_step(step, epoch, lr, loss):
            fh.write(f"{step} {epoch} {lr:.10g} {loss:.10g}\n")
            fh.flush()

        def on_epoch_end(epoch):
            save_checkpoint(model, out_dir / f"epoch_{epoch:04d}.ckpt", with_optimizer=True)

        try:
            train(model, dataset, tcfg, start_epoch=start_epoch, on_step=on_step, on_epoch_end=on_epoch_end)
        except TrainingDivergedError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
    return EXIT_OK


# ----------------------------------------------------------------------
# sr / eval
# ----------------------------------------------------------------------
def cmd_sr(args) -> int:
    model = load_checkpoint(args.checkpoint)
    lr = load_png(args.input)
    sr = self_ensemble_sr(model, lr) if args.ensemble else super_resolve(model, lr)
    save_png(sr, args.output)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    paths = list_pngs(args.hr_dir)
    if not paths:
        print(f"error: no PNG files in {args.hr_dir}", file=sys.stderr)
        return EXIT_RUNTIME
    spec = DegradationSpec(args.degradation, model.scale, seed=args.seed)
    images = [(p.name, load_png(p)) for p in paths]
    report = evaluate(model, images, spec, ensemble=args.ensemble)
    csv = report.to_csv()
    if args.out:
        Path(args.out).write_text(csv)
        print(report.table())
    else:
        sys.stdout.write(csv)
    return EXIT_OK


# ----------------------------------------------------------------------
# count
# ----------------------------------------------------------------------
def _count_config(args) -> ModelConfig:
    if args.preset:
        if args.config or args.set:
            raise UsageError("--preset cannot be combined with a config file or --set")
        return preset(args.preset)
    return _load_run_config(args.config, args.set).model_config()


def cmd_count(args) -> int:
    cfg = _count_config(args)
    hr = (args.hr_size, args.hr_size)
    if args.grid:
        print("preset,params,flops")
        for name in ABLATIONS:
            model = FPAN(cfg.with_ablation(name))
            report = count_flops(model, hr)
            print(f"{name},{report.params},{report.flops}")
        print(f"# FLOPs at {hr[0]}x{hr[1]} HR, x{cfg.scale}; multiply-add counted as 2 operations")
        print("# Set5 x4 PSNR of the ablation table (32.33..32.55 dB) needs full-scale training; not reproduced")
        return EXIT_OK

    model = FPAN(cfg)
    report = count_flops(model, hr)
    assert report.params == count_params(model).params
    if args.csv:
        sys.stdout.write(report.to_csv())
        return EXIT_OK
    print(
        f"config: scale x{cfg.scale}, C={cfg.channels}, G={cfg.num_blocks}, D={cfg.stage_depth}, "
        f"attention={cfg.attention} S={cfg.attention_scales}, ablation={cfg.ablation or '-'}"
    )
    print(f"params: {report.params:,}")
    print(f"FLOPs:  {report.flops:,}  ({report.flops / 1e9:.2f} G at {hr[0]}x{hr[1]} HR)")
    if args.preset == "paper":
        gap = report.params - PAPER_PARAM_TARGET
        print(
            f"target: {PAPER_PARAM_TARGET / 1e6:.1f} M; resolved G={cfg.num_blocks}; "
            f"gap {gap:+,.0f} ({100 * gap / PAPER_PARAM_TARGET:+.2f}%)"
        )
    return EXIT_OK


# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpan", description="Feedback pyramid attention network for super-resolution")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a run config")
    p.add_argument("config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", help="super-resolve one PNG")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--ensemble", action="store_true", help="average over the 8 flips/rotations")
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("eval", help="PSNR/SSIM over a directory of HR PNGs")
    p.add_argument("checkpoint")
    p.add_argument("hr_dir")
    p.add_argument("--degradation", default="BI", choices=["BI", "BD", "DN"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ensemble", action="store_true")
    p.add_argument("--out", help="write CSV here (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("count", help="parameter and FLOP accounting")
    p.add_argument("config", nargs="?")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--preset", choices=["tiny", "desk", "paper"])
    p.add_argument("--grid", action="store_true", help="emit the P0-P4 ablation grid")
    p.add_argument("--hr-size", type=int, default=512)
    p.add_argument("--csv", action="store_true", help="per-layer breakdown as CSV")
    p.set_defaults(func=cmd_count)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (runconfig.ConfigError, ConfigurationError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, ImageIOError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
