"""Command-line entry point: ``arnsal {synth,train,infer,eval,gradcheck,selftest}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
Configuration precedence: built-in defaults < ``--config`` file < flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import numgrad as gradcheck_mod
from .datapipe import (
    DatasetManifest,
    Sample,
    load_manifest_samples,
    preprocess,
    read_gray,
    read_rgb,
    resize_bilinear,
    synth_generate,
    write_png,
    binarize_mask,
)
from .metrics import evaluate_set
from .network import NetConfig, SaliencyModel
from .selftest import gradient_suite, invariant_suite
from .trainer import CheckpointError, TrainConfig, load_checkpoint, train

IMAGE_SUFFIXES = {".png", ".bmp", ".tif", ".tiff"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config handling


def _coerce(field: dataclasses.Field, raw: str):
    typ = field.type if isinstance(field.type, type) else {"int": int, "float": float}.get(str(field.type))
    if typ is None:
        typ = type(field.default)
    try:
        return typ(raw)
    except ValueError as exc:
        raise UsageError(f"bad value {raw!r} for {field.name}: {exc}") from None


def parse_overrides(pairs: dict) -> tuple[dict, dict]:
    """Split flat ``key -> str`` settings into NetConfig and TrainConfig kwargs.

    A key present in both (``seed``) sets both.
    """
    net_fields = {f.name: f for f in dataclasses.fields(NetConfig)}
    train_fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    net, tr = {}, {}
    for key, raw in pairs.items():
        if key not in net_fields and key not in train_fields:
            raise UsageError(f"unknown config key {key!r}")
        if key in net_fields:
            net[key] = _coerce(net_fields[key], raw)
        if key in train_fields:
            tr[key] = _coerce(train_fields[key], raw)
    return net, tr


def read_config_file(path: str) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def resolve_configs(args) -> tuple[NetConfig, TrainConfig]:
    settings = {}
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        settings[key.strip()] = value.strip()
    if getattr(args, "steps", None) is not None:
        settings["steps"] = str(args.steps)
    net, tr = parse_overrides(settings)
    try:
        return NetConfig(**net), TrainConfig(**tr)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _print_config(command: str, **sections) -> None:
    print(json.dumps({"command": command, **sections}, indent=2, sort_keys=True, default=str))
    sys.stdout.flush()


# ---------------------------------------------------------------------------
# commands


def run_synth(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    if args.size < 16:
        raise UsageError("--size must be >= 16")
    _print_config("synth", count=args.count, size=args.size, seed=args.seed, out=args.out)
    manifest = synth_generate(args.count, args.size, args.seed, args.out)
    print(f"wrote {len(manifest.pairs)} pairs and {Path(args.out) / 'manifest.txt'}")
    return 0


def run_train(args) -> int:
    ckpt = Path(args.ckpt)
    log_path = Path(args.log) if args.log else ckpt.with_name(ckpt.name + ".loss.tsv")
    if args.resume:
        state = load_checkpoint(ckpt)
        model, means, start = state.model, state.channel_means, state.step
        train_cfg = state.train_config
        if args.steps is not None:
            train_cfg = dataclasses.replace(train_cfg, steps=args.steps)
        net_cfg = model.config
    else:
        net_cfg, train_cfg = resolve_configs(args)
        model = SaliencyModel(net_cfg)
        start = 0
    manifest = DatasetManifest.read(args.data)
    if not args.resume:
        means = manifest.channel_means
    _print_config("train", net_config=net_cfg.to_dict(), train_config=train_cfg.to_dict(),
                  data=str(args.data), ckpt=str(ckpt), log=str(log_path), start_step=start,
                  channel_means=list(means))
    samples = load_manifest_samples(manifest, net_cfg.input_size)
    mode = "a" if args.resume else "w"
    with open(log_path, mode) as fh:
        def on_step(step, loss):
            fh.write(f"{step}\t{loss!r}\n")
            if step % max(1, args.print_every) == 0:
                print(f"step {step} loss {loss:.6f}", flush=True)

        train(model, samples, train_cfg, means, start_step=start, checkpoint_path=ckpt, on_step=on_step)
    print(f"checkpoint {ckpt}")
    return 0


def _collect_images(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not path.is_file():
        raise FileNotFoundError(f"no such image or directory: {path}")
    return [path]


def run_infer(args) -> int:
    state = load_checkpoint(args.ckpt)
    model = state.model
    size = model.config.input_size
    src = Path(args.image)
    images = _collect_images(src)
    out = Path(args.out)
    _print_config("infer", ckpt=str(args.ckpt), image=str(src), out=str(out),
                  net_config=model.config.to_dict(), channel_means=list(state.channel_means))
    if src.is_dir():
        out.mkdir(parents=True, exist_ok=True)
    for path in images:
        image = resize_bilinear(read_rgb(path), size)
        blank = np.zeros((1, size, size))
        x = preprocess(Sample(image=image, mask=blank), state.channel_means)
        pred = model.predict(x)[0]
        target = out / (path.stem + ".png") if src.is_dir() else out
        write_png(target, np.clip(np.rint(pred * 255.0), 0, 255).astype(np.uint8))
    print(f"wrote {len(images)} saliency map(s)")
    return 0


def _load_eval_pair(pred_path: Path, mask_path: Path):
    pred = read_gray(pred_path).astype(np.float64) / 255.0
    mask = binarize_mask(read_gray(mask_path))
    if pred.shape != mask.shape:
        raise ValueError(f"{pred_path.name}: prediction {pred.shape} and mask {mask.shape} differ in size")
    return pred[None], mask[None]


def run_eval(args) -> int:
    pred_dir, mask_dir = Path(args.pred_dir), Path(args.mask_dir)
    for d in (pred_dir, mask_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"no such directory: {d}")
    preds = {p.stem: p for p in _collect_images(pred_dir)}
    masks = {p.stem: p for p in _collect_images(mask_dir)}
    names = sorted(set(preds) & set(masks))
    if not names:
        raise FileNotFoundError(f"no prediction in {pred_dir} has a matching mask in {mask_dir}")
    _print_config("eval", pred_dir=str(pred_dir), mask_dir=str(mask_dir), csv=args.csv,
                  threads=args.threads, n_pairs=len(names))
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        pairs = list(pool.map(lambda n: _load_eval_pair(preds[n], masks[n]), names))
    report = evaluate_set(pairs)
    report.write_csv(args.csv)
    print(f"max_f {report.max_f:.4f} (threshold {report.max_f_threshold})  mae {report.mae:.4f}  n={report.n_samples}")
    return 0


def _run_suites(args, with_invariants: bool) -> int:
    if args.inject_fault:
        gradcheck_mod.ANALYTIC_PERTURBATION = 1e-2
    _print_config("selftest" if with_invariants else "gradcheck", seed=args.seed,
                  tolerance=1e-4, eps=1e-5, inject_fault=bool(args.inject_fault))
    failures = []
    t0 = time.perf_counter()
    for report in gradient_suite(args.seed):
        print(report)
        if not report.passed:
            failures.append(report.name)
    if with_invariants:
        for check in invariant_suite(args.seed):
            print(check)
            if not check.passed:
                failures.append(check.name)
    print(f"{time.perf_counter() - t0:.1f}s")
    if failures:
        print("FAILED: " + ", ".join(failures))
        return 1
    print("all checks passed")
    return 0


def run_gradcheck(args) -> int:
    return _run_suites(args, with_invariants=False)


def run_selftest(args) -> int:
    return _run_suites(args, with_invariants=True)


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="arnsal", description="Attentional recurrent saliency network")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic shape dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=run_synth)

    p = sub.add_parser("train", help="train from a manifest")
    p.add_argument("--data", required=True, help="manifest file or dataset directory")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--steps", type=int)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--log", help="loss log path (default: <ckpt>.loss.tsv)")
    p.add_argument("--resume", action="store_true", help="continue from --ckpt")
    p.add_argument("--print-every", type=int, default=50)
    p.set_defaults(func=run_train)

    p = sub.add_parser("infer", help="write saliency maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True, help="image file or directory")
    p.add_argument("--out", required=True, help="output file, or directory when --image is one")
    p.set_defaults(func=run_infer)

    p = sub.add_parser("eval", help="PR / F-measure / MAE report")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--mask-dir", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=run_eval)

    for name, func in (("gradcheck", run_gradcheck), ("selftest", run_selftest)):
        p = sub.add_parser(name, help=f"run the {name} suite")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
        p.set_defaults(func=func)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    prev = gradcheck_mod.ANALYTIC_PERTURBATION
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"arnsal: usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, CheckpointError, ValueError) as exc:
        print(f"arnsal: error: {exc}", file=sys.stderr)
        return 1
    finally:
        gradcheck_mod.ANALYTIC_PERTURBATION = prev


if __name__ == "__main__":
    sys.exit(main())
