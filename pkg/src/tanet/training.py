"""Optimization loop, evaluation, ablation runner, and gradient checking.

Training is Adam under a cosine-annealed learning rate with paired
random crop/flip/rotation augmentation.  Everything is driven by one
seeded generator held in the TrainState, so a (seed, config, manifest)
triple reproduces checkpoints bitwise.

Evaluation reports per-kind PSNR of the restored images next to the
degraded-input baseline.  Wall-clock timing is measured but kept out of
the deterministic report renderings.
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tanet import blocks
from tanet import tensor as T
from tanet.checkpoint import save_model
from tanet.losses import LossConfig, format_psnr, psnr, total_loss
from tanet.tensor import Tensor, backward, no_grad
from tanet.weather import KINDS, augment, manifest_digest, read_image

log = logging.getLogger(__name__)


class TrainingAbort(RuntimeError):
    """Raised when optimization hits a non-finite loss or gradient."""


def cosine_lr(step, total_steps, lr0=1e-4, lr_min=1e-7):
    """Cosine annealing from lr0 to lr_min; endpoints are hit exactly."""
    if not lr0 > lr_min > 0:
        raise ValueError(f"need lr0 > lr_min > 0, got lr0={lr0}, lr_min={lr_min}")
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step == 0:
        return lr0
    if step >= total_steps:
        return lr_min
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class TrainState:
    """Optimizer state: schedule position, Adam moments, RNG seed, loss weights."""

    total_steps: int
    seed: int = 0
    lr0: float = 1e-4
    lr_min: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_config: LossConfig = field(default_factory=LossConfig)
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(named_params, state):
    """One bias-corrected Adam update at the scheduled learning rate."""
    lr = cosine_lr(state.step, state.total_steps, state.lr0, state.lr_min)
    t = state.step + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in named_params:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif np.isnan(g).any():
            raise TrainingAbort(f"NaN gradient in parameter {name!r} at step {t}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.adam_eps)
    state.step = t
    return lr


class _PairCache:
    """Decoded image pairs, loaded once per path."""

    def __init__(self, manifest, dtype):
        self.manifest = manifest
        self.dtype = dtype
        self._images = {}

    def pair(self, entry):
        clean_path, degraded_path = self.manifest.resolve(entry)
        return self._load(degraded_path), self._load(clean_path)

    def _load(self, path):
        key = str(path)
        if key not in self._images:
            self._images[key] = read_image(path, dtype=self.dtype)
        return self._images[key]


def train(model, manifest, state, steps=None, batch=4, crop=64, out_dir=None,
          checkpoint_every=500):
    """Optimize the model on manifest pairs; returns the (step, loss, lr) curve.

    Writes ``checkpoint.tant`` and ``loss_curve.csv`` under out_dir when
    given; the checkpoint is refreshed every `checkpoint_every` steps so
    an abort retains the last one.
    """
    if steps is None:
        steps = state.total_steps - state.step
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if not manifest.entries:
        raise ValueError("training manifest is empty")
    if crop % 4 != 0:
        raise ValueError(f"crop must be divisible by 4, got {crop}")

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    dtype = next(model.named_params())[1].dtype.type
    cache = _PairCache(manifest, dtype)
    rng = np.random.default_rng(state.seed)
    params = list(model.named_params())
    curve = []

    try:
        for _ in range(steps):
            picks = rng.integers(0, len(manifest.entries), size=batch)
            ds, cs = [], []
            for idx in picks:
                d, c = cache.pair(manifest.entries[int(idx)])
                da, ca = augment(d, c, crop, rng)
                ds.append(da)
                cs.append(ca)
            batch_d = Tensor(np.stack(ds).astype(dtype, copy=False))
            batch_c = Tensor(np.stack(cs).astype(dtype, copy=False))

            model.zero_grad()
            restored = model(batch_d)
            loss = total_loss(restored, batch_c, state.loss_config)
            loss_val = loss.item()
            if math.isnan(loss_val) or math.isinf(loss_val):
                # do not overwrite the last good checkpoint with broken weights
                raise TrainingAbort(
                    f"non-finite loss {loss_val} at step {state.step + 1}; "
                    "last checkpoint retained"
                )
            backward(loss)
            lr = adam_step(params, state)
            curve.append((state.step, loss_val, lr))

            if out_dir is not None and state.step % checkpoint_every == 0:
                save_model(out_dir / "checkpoint.tant", model)
        if out_dir is not None:
            save_model(out_dir / "checkpoint.tant", model)
    finally:
        if out_dir is not None:
            write_loss_curve(out_dir / "loss_curve.csv", curve)
    return curve


def write_loss_curve(path, curve):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr"])
        for step, loss_val, lr in curve:
            writer.writerow([step, repr(loss_val), repr(lr)])


def smoothed(values, window=50):
    if not values:
        return []
    out = []
    acc = 0.0
    from collections import deque
    q = deque()
    for v in values:
        q.append(v)
        acc += v
        if len(q) > window:
            acc -= q.popleft()
        out.append(acc / len(q))
    return out


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    restored: dict      # kind -> mean PSNR of model output vs clean
    degraded: dict      # kind -> mean PSNR of degraded input vs clean (baseline)
    average_restored: float
    average_degraded: float
    params: int
    ms_per_image: float
    n_images: int
    data_digest: str


def evaluate(model, manifest):
    """Per-kind PSNR of restored vs clean, with the identity baseline alongside."""
    by_kind_restored = {}
    by_kind_degraded = {}
    dtype = next(model.named_params())[1].dtype.type
    elapsed = 0.0
    n_images = 0
    for entry in manifest.entries:
        clean_path, degraded_path = manifest.resolve(entry)
        clean = read_image(clean_path)
        degraded = read_image(degraded_path)
        start = time.perf_counter()
        with no_grad():
            restored = model(Tensor(degraded[None].astype(dtype, copy=False)), clamp=True)
        elapsed += time.perf_counter() - start
        n_images += 1
        by_kind_restored.setdefault(entry.kind, []).append(
            psnr(restored.data.astype(np.float64), clean[None])
        )
        by_kind_degraded.setdefault(entry.kind, []).append(psnr(degraded, clean))

    missing = [k for k in KINDS if k not in by_kind_restored]
    if missing:
        log.warning("evaluation manifest has no %s pairs; averaging the rest", missing)
    restored = {k: float(np.mean(v)) for k, v in by_kind_restored.items()}
    degraded = {k: float(np.mean(v)) for k, v in by_kind_degraded.items()}
    present = [k for k in KINDS if k in restored]
    if not present:
        raise ValueError("evaluation manifest is empty")
    return EvalReport(
        restored=restored,
        degraded=degraded,
        average_restored=float(np.mean([restored[k] for k in present])),
        average_degraded=float(np.mean([degraded[k] for k in present])),
        params=blocks.param_count(model),
        ms_per_image=1000.0 * elapsed / max(n_images, 1),
        n_images=n_images,
        data_digest=manifest_digest(manifest),
    )


def report_rows(report):
    rows = []
    for kind in KINDS:
        if kind in report.restored:
            r, d = report.restored[kind], report.degraded[kind]
            rows.append((kind, r, d, r - d))
    rows.append(("average", report.average_restored, report.average_degraded,
                 report.average_restored - report.average_degraded))
    return rows


def report_csv(report):
    """Deterministic CSV rendering (timing deliberately excluded)."""
    lines = ["kind,psnr_restored,psnr_degraded,delta"]
    for kind, r, d, delta in report_rows(report):
        lines.append(f"{kind},{format_psnr(r)},{format_psnr(d)},{delta:.4f}")
    return "\n".join(lines) + "\n"


def report_text(report):
    lines = [
        f"{'kind':<10}{'psnr_restored':>15}{'psnr_degraded':>15}{'delta':>10}",
    ]
    for kind, r, d, delta in report_rows(report):
        lines.append(f"{kind:<10}{format_psnr(r):>15}{format_psnr(d):>15}{delta:>10.4f}")
    lines.append(f"params: {report.params}")
    lines.append(f"data: {report.data_digest} ({report.n_images} images)")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# ablation


@dataclass
class AblationRow:
    variant: str
    restored: dict
    average: float
    params: int
    report: EvalReport
    train_seconds: float


@dataclass
class AblationResult:
    rows: list
    data_digest: str
    steps: int


def run_ablation(config, train_manifest, test_manifest, steps, batch=4, crop=64,
                 seed=0, loss_config=None, out_dir=None):
    """Train and evaluate all five variants under one shared budget and data order."""
    base_loss = loss_config or LossConfig()
    out_dir = Path(out_dir) if out_dir is not None else None
    rows = []
    for variant in blocks.VARIANTS:
        _, _, _, fft_on = blocks.variant_flags(variant)
        model = blocks.build_ablation_variant(config, variant)
        state = TrainState(
            total_steps=steps,
            seed=seed,
            loss_config=LossConfig(
                epsilon=base_loss.epsilon,
                lambda_fft=base_loss.lambda_fft,
                fft_enabled=fft_on,
                charbonnier_global=base_loss.charbonnier_global,
            ),
        )
        variant_dir = out_dir / variant.lower() if out_dir is not None else None
        log.info("ablation: training %s for %d steps", variant, steps)
        start = time.perf_counter()
        train(model, train_manifest, state, steps=steps, batch=batch, crop=crop,
              out_dir=variant_dir)
        train_seconds = time.perf_counter() - start
        report = evaluate(model, test_manifest)
        if variant_dir is not None:
            (variant_dir / "report.csv").write_text(report_csv(report))
        rows.append(AblationRow(
            variant=variant,
            restored=report.restored,
            average=report.average_restored,
            params=report.params,
            report=report,
            train_seconds=train_seconds,
        ))
    return AblationResult(rows=rows, data_digest=manifest_digest(train_manifest), steps=steps)


def ablation_text(result):
    lines = [
        f"{'variant':<9}{'haze':>10}{'rain':>10}{'snow':>10}{'average':>10}{'params':>10}",
    ]
    for row in result.rows:
        lines.append(
            f"{row.variant:<9}"
            f"{format_psnr(row.restored.get('haze', math.nan)):>10}"
            f"{format_psnr(row.restored.get('rain', math.nan)):>10}"
            f"{format_psnr(row.restored.get('snow', math.nan)):>10}"
            f"{format_psnr(row.average):>10}"
            f"{row.params:>10}"
        )
    lines.append(f"data: {result.data_digest}  steps: {result.steps}")
    return "\n".join(lines) + "\n"


def ablation_csv(result):
    lines = ["variant,haze,rain,snow,average,params"]
    for row in result.rows:
        lines.append(
            f"{row.variant},{format_psnr(row.restored.get('haze', math.nan))},"
            f"{format_psnr(row.restored.get('rain', math.nan))},"
            f"{format_psnr(row.restored.get('snow', math.nan))},"
            f"{format_psnr(row.average)},{row.params}"
        )
    lines.append(f"# data {result.data_digest} steps {result.steps}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckResult:
    group: str
    checked: int
    max_rel_err: float
    passed: bool


def gradient_check(module, input_shape, tolerance=1e-4, h=1e-5, seed=0,
                   max_entries=8, loss_config=None):
    """Central-difference check of every parameter group plus the input.

    Groups larger than 512 entries are spot-checked at `max_entries`
    seeded positions; smaller groups are checked exhaustively.  An entry
    passes when |analytic - fd| <= max(tolerance * max(|a|, |fd|), 1e-8).
    """
    rng = np.random.default_rng(seed)
    cfg = loss_config or LossConfig()
    x = Tensor(rng.random(input_shape), requires_grad=True)
    with no_grad():
        probe = module(x)
    target = Tensor(rng.random(probe.shape))

    def loss_fn():
        return total_loss(module(x), target, cfg)

    groups = [("input", x)] + list(module.named_params())
    for _, t in groups:
        t.grad = None
    backward(loss_fn())
    analytic = {
        name: (t.grad.reshape(-1).copy() if t.grad is not None else np.zeros(t.data.size))
        for name, t in groups
    }

    results = []
    atol = 1e-8
    for name, t in groups:
        flat = t.data.reshape(-1)
        if flat.size > 512:
            idx = rng.choice(flat.size, size=min(max_entries, flat.size), replace=False)
            idx.sort()
        else:
            idx = np.arange(flat.size)
        worst = 0.0
        ok = True
        for i in idx:
            saved = flat[i]
            flat[i] = saved + h
            with no_grad():
                up = loss_fn().item()
            flat[i] = saved - h
            with no_grad():
                down = loss_fn().item()
            flat[i] = saved
            fd = (up - down) / (2.0 * h)
            a = analytic[name][i]
            diff = abs(a - fd)
            if diff > atol:
                rel = diff / max(abs(a), abs(fd))
                worst = max(worst, rel)
                if rel > tolerance:
                    ok = False
        results.append(GradCheckResult(name, len(idx), worst, ok))
    return results


def gradcheck_text(results):
    lines = [f"{'group':<40}{'checked':>8}{'max_rel_err':>14}{'status':>8}"]
    for r in results:
        lines.append(f"{r.group:<40}{r.checked:>8}{r.max_rel_err:>14.3e}"
                     f"{'pass' if r.passed else 'FAIL':>8}")
    return "\n".join(lines) + "\n"
