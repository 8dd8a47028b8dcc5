"""``dime`` command line: synth, train, enhance, eval, analyze, gradcheck.

Exit codes: 0 success, 1 failure (e.g. a failing gradcheck), 2 bad config key
or value, 3 missing path, 4 checkpoint/config mismatch.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import torch

from .config import DEFAULTS, Config, format_value, parse_overrides
from .errors import ConfigError, ConfigMismatchError, DatasetError
from .imaging import classify_illumination, load_image, save_image, v_histogram
from .metrics import MetricReport

log = logging.getLogger("dimenet")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_PATH, EXIT_MISMATCH = 0, 1, 2, 3, 4
CONFIG_ECHO = "config.txt"


class MissingPath(Exception):
    pass


def keys_epilog() -> str:
    lines = ["config keys (set with --set key=value or a --config file):"]
    lines += [f"  {k} = {format_value(v)}" for k, v in DEFAULTS.items()]
    return "\n".join(lines)


def require(path, kind="path") -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingPath(f"{kind} not found: {p}")
    return p


def effective_config(args, extra: dict | None = None) -> Config:
    """defaults < config file < --set overrides < explicit flags."""
    values = {}
    if args.config:
        values.update(dict(Config.load(require(args.config, "config file")).items()))
    values.update(parse_overrides(args.set))
    values.update({k: v for k, v in (extra or {}).items() if v is not None})
    return Config(values)


def user_config_given(args) -> bool:
    return bool(args.config or args.set)


def echo_config(cfg: Config, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.dump(out_dir / CONFIG_ECHO)


def apply_threads() -> None:
    n = os.environ.get("DIME_THREADS")
    if n:
        torch.set_num_threads(max(1, int(n)))
        try:
            import cv2
            cv2.setNumThreads(max(1, int(n)))
        except ImportError:  # pragma: no cover
            pass


def image_paths(target) -> list[Path]:
    p = require(target)
    if p.is_dir():
        return sorted(q for q in p.iterdir() if q.suffix.lower() == ".png")
    return [p]


def load_model(args, cfg: Config):
    from .checkpoint import load_checkpoint
    from .model import DimeNet

    if args.checkpoint:
        expected = cfg if user_config_given(args) else None
        return load_checkpoint(require(args.checkpoint, "checkpoint"), expected)
    log.warning("no --checkpoint given; using an untrained model")
    return DimeNet(cfg, seed=cfg["train.seed"])


# subcommands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    from .datasynth import build_dataset, synth_scenes

    cfg = effective_config(args, {"data.n_low": args.n_low, "data.n_back": args.n_back,
                                  "data.seed": args.seed, "data.scenes": args.scenes,
                                  "data.scene_size": args.scene_size})
    out = Path(args.out)
    if args.clean:
        clean_dir = require(args.clean, "clean directory")
    else:
        clean_dir = out / "scenes"
        clean_dir.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(synth_scenes(cfg["data.scenes"], cfg["data.scene_size"], cfg["data.seed"])):
            save_image(img, clean_dir / f"scene{i:03d}.png")
    rows = build_dataset(clean_dir, cfg["data.n_low"], cfg["data.n_back"], cfg["data.seed"], out)
    echo_config(cfg, out)
    print(f"wrote {len(rows)} pairs to {out}")
    return EXIT_OK


def load_training_data(args, cfg: Config):
    from .datasynth import load_manifest_dataset, load_paired_dir, synth_pairs, synth_scenes

    if args.data:
        root = require(args.data, "data directory")
        if (root / "manifest.tsv").exists():
            return load_manifest_dataset(root)
        return load_paired_dir(require(root / "degraded"), require(root / "clean")).samples
    cleans = synth_scenes(cfg["data.scenes"], cfg["data.scene_size"], cfg["data.seed"])
    return synth_pairs(cleans, cfg["data.n_low"], cfg["data.n_back"], cfg["data.seed"])


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .model import DimeNet
    from .training import TrainConfig, train

    cfg = effective_config(args, {"train.iterations": args.iterations, "train.seed": args.seed})
    out = Path(args.out)
    echo_config(cfg, out)
    data = load_training_data(args, cfg)
    tcfg = TrainConfig.from_config(cfg)
    model = DimeNet(cfg, seed=tcfg.seed)

    def checkpoint_fn(m, iteration, rng):
        save_checkpoint(m, out / f"ckpt_{iteration:06d}.dime", iteration, rng)
        if iteration == tcfg.iterations:
            save_checkpoint(m, out / "model.dime", iteration, rng)

    result = train(model, data, tcfg, log_path=out / "train.log", csv_path=out / "train.csv",
                   checkpoint_fn=checkpoint_fn)
    last = result.records[-1]
    print(f"trained {tcfg.iterations} iterations; final psnr={last['psnr']:.4f} -> {out / 'model.dime'}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    from .model import enhance

    cfg = effective_config(args)
    paths = image_paths(args.input)
    model = load_model(args, cfg)
    out = Path(args.out)
    echo_config(model.config, out)
    for p in paths:
        save_image(enhance(load_image(p), model), out / p.name, bits=args.bits)
    print(f"enhanced {len(paths)} images into {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .datasynth import load_paired_dir
    from .model import enhance

    cfg = effective_config(args)
    pairs = load_paired_dir(require(args.degraded, "degraded directory"),
                            require(args.clean, "clean directory"))
    model = load_model(args, cfg)
    report = MetricReport()
    for s in pairs.samples:
        report.add(s.name, enhance(s.degraded, model), s.clean)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_tsv(), encoding="utf-8")
    echo_config(model.config, out.parent)
    print(f"mean\t{report.mean_psnr:.4f}\t{report.mean_ssim:.6f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = effective_config(args)
    kw = dict(bins=cfg["imaging.bins"], smooth_width=cfg["imaging.smooth_width"],
              peak_threshold=cfg["imaging.peak_threshold"])
    paths = [p for target in args.inputs for p in image_paths(target)]
    rows, bin_rows = [], []
    for p in paths:
        hist = v_histogram(load_image(p), **kw)
        label = classify_illumination(hist, cfg["imaging.low_boundary"], cfg["imaging.high_boundary"])
        peaks = ",".join(f"{x:.4f}" for x in hist.peak_positions) or "-"
        rows.append(f"{p}\t{label.value}\t{peaks}")
        bin_rows.append(f"{p}," + ",".join(f"{b:.6g}" for b in hist.bins))
    text = "\n".join(rows) + ("\n" if rows else "")
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text("path\tlabel\tpeaks\n" + text, encoding="utf-8")
    if args.bins_csv:
        header = "path," + ",".join(f"b{i}" for i in range(kw["bins"]))
        Path(args.bins_csv).write_text(header + "\n" + "\n".join(bin_rows) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import FRAGMENTS, run_fragment

    names = args.fragments or list(FRAGMENTS)
    unknown = [n for n in names if n not in FRAGMENTS and n != "constant"]
    if unknown:
        raise ConfigError(f"unknown fragment(s) {unknown}; choose from {sorted(FRAGMENTS)}")
    ok = True
    for name in names:
        rep = run_fragment(name, seed=args.seed)
        print(rep.line(), flush=True)
        ok &= rep.passed
    return EXIT_OK if ok else EXIT_FAIL


# parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file with 'key = value' lines")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dime", description="Dual-illumination image enhancement toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.RawDescriptionHelpFormatter

    def add(name, fn, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text,
                           epilog=keys_epilog(), formatter_class=fmt)
        p.set_defaults(fn=fn)
        return p

    p = add("synth", cmd_synth, "generate synthetic low-light/backlit pairs and a manifest")
    p.add_argument("--clean", help="directory of clean PNGs (procedural scenes if omitted)")
    p.add_argument("--n-low", type=int)
    p.add_argument("--n-back", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scenes", type=int, help="number of procedural scenes when --clean is omitted")
    p.add_argument("--scene-size", type=int)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train a model; writes log, CSV, checkpoints and config echo")
    p.add_argument("--data", help="output of 'synth' (or a dir with degraded/ and clean/); "
                                  "synthesized in memory from data.* keys if omitted")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = add("enhance", cmd_enhance, "enhance a PNG or a directory of PNGs")
    p.add_argument("--checkpoint")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bits", type=int, choices=(8, 16), default=8)

    p = add("eval", cmd_eval, "enhance and score against clean images (PSNR/SSIM TSV)")
    p.add_argument("--checkpoint", help="untrained model if omitted")
    p.add_argument("--degraded", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--out", required=True, help="report TSV path")

    p = add("analyze", cmd_analyze, "classify illumination from V-histogram peaks")
    p.add_argument("inputs", nargs="+", help="PNG files or directories")
    p.add_argument("--out", help="write the table as TSV")
    p.add_argument("--bins-csv", help="write per-image histogram bins as CSV")

    p = add("gradcheck", cmd_gradcheck, "finite-difference gradient verification (64-bit)")
    p.add_argument("fragments", nargs="*", help="subset of fragments (default: all)")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    apply_threads()
    try:
        return args.fn(args)
    except ConfigMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingPath, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PATH
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
