"""Command-line entry points: synth, train, predict, eval, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import data
from ._alloc import retain_freed_memory
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ModelConfig
from .metrics import MetricError, evaluate_dirs
from .model import build_model
from .tensor import Tensor
from .train import NonFiniteLoss, fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-5

log = logging.getLogger("vasl")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _threshold_list(text):
    vals = []
    for part in text.split(","):
        part = part.strip()
        if ":" in part:
            lo, hi, step = (float(v) for v in part.split(":"))
            n = int(round((hi - lo) / step)) + 1
            vals.extend(round(lo + k * step, 10) for k in range(n))
        elif part:
            vals.append(float(part))
    for v in vals:
        if not 0.0 <= v <= 1.0:
            raise argparse.ArgumentTypeError(f"threshold {v} outside [0, 1]")
    return vals


def build_parser():
    p = _Parser(prog="vasl", description="Splice localization toolkit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="generate a synthetic splice dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--size", type=int, default=data.IMAGE_SIZE)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=None)

    r = sub.add_parser("predict", help="predict a splice mask for one image")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--rgb", required=True)
    r.add_argument("--edge")
    r.add_argument("--depth")
    r.add_argument("--depth-proxy", action="store_true")
    r.add_argument("--out", required=True)
    r.add_argument("--prob", action="store_true")
    r.add_argument("--threshold", type=float, default=0.5)

    e = sub.add_parser("eval", help="score predictions against ground-truth masks")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--threshold", type=_threshold_list, default=[0.5])
    e.add_argument("--report", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    g.add_argument("--seed", type=int, default=0)
    return p


def cmd_synth(args):
    if args.count < 0:
        raise UsageError("--count must be non-negative")
    spec = data.SynthSpec(count=args.count, size=args.size, seed=args.seed)
    try:
        ids = data.write_dataset(args.out, spec)
    except OSError as exc:
        raise DataError(f"cannot write dataset: {exc}") from None
    print(f"wrote {len(ids)} samples to {args.out}")
    return EXIT_OK


def cmd_train(args):
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config: {exc}") from None
    try:
        cfg = ModelConfig.from_text(text)
        if args.epochs is not None:
            cfg = cfg.with_(epochs=args.epochs)
    except ConfigError as exc:
        raise UsageError(f"config: {exc}") from None
    samples = data.load_dataset(args.data, cfg.image_size)
    net, store = build_model(cfg)
    lines = ["epoch\tlr\tloss\tiou"]

    def on_epoch(entry):
        lines.append(f"{entry.epoch}\t{entry.lr!r}\t{entry.loss!r}\t{entry.iou!r}")
        print(f"epoch {entry.epoch} lr {entry.lr:.6g} loss {entry.loss:.6f} iou {entry.iou:.4f}")

    result = fit(net, store, samples, cfg, on_epoch=on_epoch)
    save_checkpoint(args.out, cfg, store, epoch=result.epoch)
    Path(str(args.out) + ".log").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def _load_plane(path, channels, size):
    return data.load_plane(path, channels, size)


def cmd_predict(args):
    net, _, ckpt = load_checkpoint(args.ckpt)
    cfg = ckpt.config
    size = cfg.image_size
    domains = cfg.enabled_domains
    rgb = _load_plane(args.rgb, 3, size)
    for flag, name in ((args.edge, "edge"), (args.depth, "depth")):
        if flag is not None and name not in domains:
            print(f"warning: checkpoint does not use the {name} domain; --{name} ignored", file=sys.stderr)
    planes = {"rgb": rgb}
    if "edge" in domains:
        if args.edge is not None:
            planes["edge"] = _load_plane(args.edge, 1, size)
        else:
            planes["edge"] = data.to_levels(data.sobel_edge(rgb)) / 255.0
    if "depth" in domains:
        if args.depth is not None:
            planes["depth"] = data.depth_channel(depth_path=args.depth, size=size)
        elif args.depth_proxy:
            planes["depth"] = data.depth_channel(rgb=rgb, proxy=True, size=size)
        else:
            raise UsageError("checkpoint uses the depth domain: pass --depth FILE or --depth-proxy")
    prob = net.predict({d: Tensor(planes[d][None]) for d in domains})[0, 0]
    if args.prob:
        data.save_probability(args.out, prob)
    else:
        data.save_mask(args.out, (prob >= args.threshold).astype(np.float64))
    return EXIT_OK


def cmd_eval(args):
    reports = [evaluate_dirs(args.pred, args.gt, t) for t in args.threshold]
    report_path = Path(args.report)
    if len(reports) == 1:
        text = reports[0].to_text()
    else:
        text = "".join(r.to_text() + "\n" for r in reports)
        text += "sweep\n" + "".join(r.summary() + "\n" for r in reports)
    report_path.write_text(text, encoding="utf-8")
    report_path.with_suffix(".csv").write_text(reports[0].to_csv() if len(reports) == 1 else
                                               "".join(r.to_csv() for r in reports), encoding="utf-8")
    for r in reports:
        print(r.summary())
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    worst = 0.0
    for rep in run_suite(args.seed):
        print(rep)
        worst = max(worst, rep.max_rel_error)
        if rep.checked == 0:
            worst = float("inf")
    ok = worst < GRADCHECK_TOL
    print(f"{'PASS' if ok else 'FAIL'} worst relative error {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    retain_freed_memory()
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, ValueError) as exc:
        # PixmapError, CheckpointError, MetricError, DepthMissingError are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
