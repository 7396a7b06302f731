"""Command-line surface.

Subcommands: synth, train, restore, eval, ablate, gradcheck, params.
Exit codes: 0 success, 2 I/O error, 3 bad arguments or shapes,
4 missing/corrupt checkpoint.
"""

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from tanet import backend
from tanet.blocks import NetworkConfig, TANetModel, param_count
from tanet.checkpoint import CheckpointError, load_model
from tanet.config import format_run_config, parse_run_config
from tanet.losses import LossConfig
from tanet.tensor import ShapeError, Tensor, no_grad
from tanet.training import (
    ablation_csv,
    ablation_text,
    evaluate,
    gradcheck_text,
    gradient_check,
    report_csv,
    report_text,
    run_ablation,
    smoothed,
    train,
    TrainState,
)
from tanet.weather import build_dataset, read_image, read_manifest, write_image

EXIT_OK = 0
EXIT_IO = 2
EXIT_USAGE = 3
EXIT_CHECKPOINT = 4

log = logging.getLogger("tanet")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _network_config(cfg):
    return NetworkConfig(
        base_channels=cfg.base_channels,
        num_tabs=cfg.num_tabs,
        use_global_residual=cfg.use_global_residual,
        seed=cfg.seed,
        variant=cfg.variant,
    )


def _loss_config(cfg, fft_enabled):
    return LossConfig(epsilon=cfg.epsilon, lambda_fft=cfg.lambda_fft, fft_enabled=fft_enabled)


def _echo_config(cfg, out_dir=None):
    text = format_run_config(cfg)
    print(text, end="")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "effective_config.cfg").write_text(text)


def _load_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    return read_manifest(path)


def cmd_synth(args):
    out_dir = Path(args.out_dir)
    print(f"clean_dir = {args.clean_dir}\nout_dir = {args.out_dir}\n"
          f"per_kind = {args.per_kind}\nsplit_ratio = {args.split_ratio}\nseed = {args.seed}")
    train_man, test_man = build_dataset(
        args.clean_dir, out_dir, per_kind=args.per_kind,
        split_ratio=args.split_ratio, seed=args.seed,
    )
    counts = train_man.counts
    print(f"train pairs: {counts['haze']}/{counts['rain']}/{counts['snow']} (haze/rain/snow)")
    counts = test_man.counts
    print(f"test pairs:  {counts['haze']}/{counts['rain']}/{counts['snow']} (haze/rain/snow)")
    print(f"manifests under {out_dir}")
    return EXIT_OK


def cmd_train(args):
    cfg = parse_run_config(args.config)
    _echo_config(cfg, cfg.out_dir)
    manifest = _load_manifest(Path(cfg.data_dir) / "manifest-train.tsv")
    model = TANetModel(_network_config(cfg))
    fft_on = cfg.variant == "Net5"
    state = TrainState(
        total_steps=cfg.steps, seed=cfg.seed, lr0=cfg.lr0, lr_min=cfg.lr_min,
        loss_config=_loss_config(cfg, fft_on),
    )
    curve = train(model, manifest, state, steps=cfg.steps, batch=cfg.batch,
                  crop=cfg.crop, out_dir=cfg.out_dir)
    if curve:
        losses = [row[1] for row in curve]
        first, last = smoothed(losses)[0], smoothed(losses)[-1]
        print(f"trained {len(curve)} steps; smoothed loss {first:.5f} -> {last:.5f}")
    else:
        print("trained 0 steps; model unchanged")
    print(f"checkpoint: {Path(cfg.out_dir) / 'checkpoint.tant'}")
    print(f"loss curve: {Path(cfg.out_dir) / 'loss_curve.csv'}")
    return EXIT_OK


def _pad_to_multiple_of_4(img):
    h, w = img.shape[:2]
    ph = (-h) % 4
    pw = (-w) % 4
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect")
    return img, h, w


def cmd_restore(args):
    model = load_model(args.checkpoint)
    in_path = Path(args.input)
    if not in_path.is_file():
        raise FileNotFoundError(f"input image not found: {in_path}")
    img = read_image(in_path, dtype=backend.default_dtype())
    padded, h, w = _pad_to_multiple_of_4(img)
    with no_grad():
        restored = model(Tensor(padded[None]), clamp=True)
    write_image(args.output, restored.data[0, :h, :w, :])
    print(f"restored {in_path} -> {args.output}")
    return EXIT_OK


def _time_256(model, repeats=3):
    x = Tensor(np.zeros((1, 256, 256, 3), dtype=backend.default_dtype()))
    with no_grad():
        model(x)  # warm any lazy compilation
        start = time.perf_counter()
        for _ in range(repeats):
            model(x)
    return 1000.0 * (time.perf_counter() - start) / repeats


def cmd_eval(args):
    model = load_model(args.checkpoint)
    manifest = _load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = evaluate(model, manifest)
    (out_dir / "report.csv").write_text(report_csv(report))
    (out_dir / "report.txt").write_text(report_text(report))
    print(report_text(report), end="")
    ms256 = _time_256(model)
    timing = (f"mean inference: {report.ms_per_image:.1f} ms/image on eval data, "
              f"{ms256:.1f} ms/image at 256x256 (CPU)\n")
    (out_dir / "timing.txt").write_text(timing)
    print(timing, end="")
    return EXIT_OK


def cmd_ablate(args):
    cfg = parse_run_config(args.config)
    _echo_config(cfg, cfg.out_dir)
    data_dir = Path(cfg.data_dir)
    train_man = _load_manifest(data_dir / "manifest-train.tsv")
    test_man = _load_manifest(data_dir / "manifest-test.tsv")
    result = run_ablation(
        _network_config(cfg), train_man, test_man, steps=cfg.steps,
        batch=cfg.batch, crop=cfg.crop, seed=cfg.seed,
        loss_config=_loss_config(cfg, fft_enabled=True), out_dir=cfg.out_dir,
    )
    out_dir = Path(cfg.out_dir)
    (out_dir / "ablation.txt").write_text(ablation_text(result))
    (out_dir / "ablation.csv").write_text(ablation_csv(result))
    print(ablation_text(result), end="")
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = parse_run_config(args.config)
    print(format_run_config(cfg), end="")
    from tanet.blocks import GDAModule, GSAModule, LPAModule, Module, TABlock

    class _Passthrough(Module):
        def forward(self, x):
            return x

    rng = np.random.default_rng(cfg.seed)
    battery = [
        ("charbonnier", _Passthrough(), (1, 5, 5, 3), LossConfig(fft_enabled=False)),
        ("fft_loss", _Passthrough(), (1, 5, 5, 3), LossConfig(lambda_fft=1.0)),
        ("lpa", LPAModule(rng), (1, 4, 4, 2), None),
        ("gsa", GSAModule(2, rng), (1, 5, 4, 2), None),
        ("gda", GDAModule(4, rng), (1, 4, 4, 4), None),
        ("tab", TABlock(4, rng), (1, 4, 4, 4), None),
        (
            "model_2tab",
            TANetModel(NetworkConfig(base_channels=4, num_tabs=2, seed=cfg.seed)),
            (1, 8, 8, 3),
            None,
        ),
    ]
    all_ok = True
    for name, module, shape, loss_cfg in battery:
        results = gradient_check(module, shape, tolerance=1e-4, seed=cfg.seed,
                                 loss_config=loss_cfg)
        ok = all(r.passed for r in results)
        all_ok &= ok
        print(f"== {name}: {'pass' if ok else 'FAIL'}")
        print(gradcheck_text(results), end="")
    print("gradient check:", "ALL PASS" if all_ok else "FAILURES (see report)")
    return EXIT_OK


def cmd_params(args):
    cfg = parse_run_config(args.config)
    print(format_run_config(cfg), end="")
    model = TANetModel(_network_config(cfg))
    n = param_count(model)
    print(f"{n} parameters ({n / 1e6:.3f}M)")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="tanet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a mixed weather dataset")
    p.add_argument("clean_dir")
    p.add_argument("out_dir")
    p.add_argument("--per-kind", type=int, default=100)
    p.add_argument("--split-ratio", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("restore", help="restore one image with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a manifest")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score all five variants")
    p.add_argument("config")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient report")
    p.add_argument("config")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="print the parameter count for a config")
    p.add_argument("config")
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ShapeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
