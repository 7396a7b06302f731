"""Synthetic weather degradations and dataset assembly.

Haze follows the atmospheric scattering model I = J*t + A*(1 - t) with
transmission t = exp(-beta * d) over a synthetic linear or radial depth
gradient.  Rain stamps anti-aliased oriented streaks and screen-blends
them over the clean image; snow alpha-composites blurred soft disks
toward white.  Every degradation is a pure function of (clean image,
spec), and a spec is a pure function of its seed, so the whole pipeline
is reproducible byte for byte.

Datasets are written as an output tree::

    out_dir/clean/...        copied clean sources
    out_dir/degraded/...     synthesized pairs
    out_dir/manifest-train.tsv
    out_dir/manifest-test.tsv

with manifest lines ``kind<TAB>clean<TAB>degraded<TAB>spec_hash`` holding
paths relative to the manifest, and clean sources partitioned between
the splits so no file is referenced from both.
"""

import dataclasses
import hashlib
import math
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

KINDS = ("haze", "rain", "snow")


@dataclass
class DegradationSpec:
    """Parameters of one synthetic corruption; identical spec => identical image."""

    kind: str
    seed: int = 0
    # haze
    beta: float = 1.2
    airlight: tuple = (0.9, 0.9, 0.9)
    depth_mode: str = "linear"
    # rain
    streak_count: int = 80
    streak_length: float = 12.0
    angle_deg: float = 0.0
    intensity: float = 0.6
    # snow
    flake_count: int = 120
    radius_min: float = 0.8
    radius_max: float = 2.4
    transparency: float = 0.7
    blur_radius: float = 0.8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "haze":
            if self.beta <= 0:
                raise ValueError(f"haze beta must be > 0, got {self.beta}")
            if not all(0.7 <= a <= 1.0 for a in self.airlight):
                raise ValueError(f"airlight channels must lie in [0.7, 1.0], got {self.airlight}")
            if self.depth_mode not in ("linear", "radial"):
                raise ValueError(f"depth_mode must be linear or radial, got {self.depth_mode!r}")
        elif self.kind == "rain":
            if self.streak_count < 0:
                raise ValueError("streak_count must be >= 0")
            if not -30.0 <= self.angle_deg <= 30.0:
                raise ValueError(f"angle must lie in [-30, 30] degrees, got {self.angle_deg}")
            if not 0.0 <= self.intensity <= 1.0:
                raise ValueError(f"intensity must lie in [0, 1], got {self.intensity}")
        elif self.kind == "snow":
            if self.flake_count < 0:
                raise ValueError("flake_count must be >= 0")
            if not 0 < self.radius_min <= self.radius_max:
                raise ValueError("need 0 < radius_min <= radius_max")
            if not 0.0 <= self.transparency <= 1.0:
                raise ValueError(f"transparency must lie in [0, 1], got {self.transparency}")
            if self.blur_radius < 0:
                raise ValueError("blur_radius must be >= 0")


def spec_hash(spec):
    """Stable 16-hex-digit digest of a spec's fields."""
    canon = repr(sorted(dataclasses.asdict(spec).items()))
    return hashlib.blake2b(canon.encode(), digest_size=8).hexdigest()


def random_spec(kind, seed, rng):
    """Draw degradation parameters within their documented ranges."""
    if kind == "haze":
        return DegradationSpec(
            kind="haze",
            seed=seed,
            beta=float(rng.uniform(0.8, 2.2)),
            airlight=tuple(float(a) for a in rng.uniform(0.75, 1.0, size=3)),
            depth_mode=("linear", "radial")[int(rng.integers(2))],
        )
    if kind == "rain":
        return DegradationSpec(
            kind="rain",
            seed=seed,
            streak_count=int(rng.integers(50, 130)),
            streak_length=float(rng.uniform(8.0, 18.0)),
            angle_deg=float(rng.uniform(-30.0, 30.0)),
            intensity=float(rng.uniform(0.45, 0.9)),
        )
    if kind == "snow":
        return DegradationSpec(
            kind="snow",
            seed=seed,
            flake_count=int(rng.integers(70, 180)),
            radius_min=float(rng.uniform(0.6, 1.1)),
            radius_max=float(rng.uniform(1.4, 2.8)),
            transparency=float(rng.uniform(0.5, 0.9)),
            blur_radius=float(rng.uniform(0.4, 1.1)),
        )
    raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")


# ---------------------------------------------------------------------------
# degradation synthesis


def _depth_map(h, w, mode, rng):
    """Synthetic depth in [0, 1]: a random linear ramp or radial bowl."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if mode == "linear":
        theta = rng.uniform(0.0, 2.0 * np.pi)
        proj = yy * np.cos(theta) + xx * np.sin(theta)
        lo, hi = proj.min(), proj.max()
        return (proj - lo) / max(hi - lo, 1e-12)
    cy = rng.uniform(0.25, 0.75) * h
    cx = rng.uniform(0.25, 0.75) * w
    dist = np.hypot(yy - cy, xx - cx)
    return dist / max(dist.max(), 1e-12)


def haze_composite(clean, transmission, airlight):
    """Scattering model I = J*t + A*(1 - t); a pixelwise convex combination."""
    t = transmission[:, :, None]
    a = np.asarray(airlight, dtype=np.float64).reshape(1, 1, 3)
    return clean * t + a * (1.0 - t)


def synth_haze(clean, spec):
    if spec.beta <= 0:
        raise ValueError(f"haze beta must be > 0, got {spec.beta}")
    rng = np.random.default_rng(spec.seed)
    depth = _depth_map(clean.shape[0], clean.shape[1], spec.depth_mode, rng)
    return haze_composite(clean, np.exp(-spec.beta * depth), spec.airlight)


def _stamp_segment(layer, cy, cx, angle_deg, length, thickness, value):
    """Max-compose an anti-aliased line segment; angle measured from vertical."""
    h, w = layer.shape
    rad = math.radians(angle_deg)
    dy, dx = math.cos(rad), math.sin(rad)
    half = length / 2.0
    y0, y1 = cy - dy * half, cy + dy * half
    x0, x1 = cx - dx * half, cx + dx * half
    margin = thickness + 1.0
    ylo = max(int(math.floor(min(y0, y1) - margin)), 0)
    yhi = min(int(math.ceil(max(y0, y1) + margin)) + 1, h)
    xlo = max(int(math.floor(min(x0, x1) - margin)), 0)
    xhi = min(int(math.ceil(max(x0, x1) + margin)) + 1, w)
    if ylo >= yhi or xlo >= xhi:
        return
    yy, xx = np.mgrid[ylo:yhi, xlo:xhi].astype(np.float64)
    vy, vx = y1 - y0, x1 - x0
    vv = vy * vy + vx * vx
    t = np.clip(((yy - y0) * vy + (xx - x0) * vx) / max(vv, 1e-12), 0.0, 1.0)
    dist = np.hypot(yy - (y0 + t * vy), xx - (x0 + t * vx))
    cover = np.clip(0.5 + thickness / 2.0 - dist, 0.0, 1.0) * value
    np.maximum(layer[ylo:yhi, xlo:xhi], cover, out=layer[ylo:yhi, xlo:xhi])


def _stamp_disk(layer, cy, cx, radius, value):
    """Max-compose an anti-aliased filled disk."""
    h, w = layer.shape
    margin = radius + 1.0
    ylo = max(int(math.floor(cy - margin)), 0)
    yhi = min(int(math.ceil(cy + margin)) + 1, h)
    xlo = max(int(math.floor(cx - margin)), 0)
    xhi = min(int(math.ceil(cx + margin)) + 1, w)
    if ylo >= yhi or xlo >= xhi:
        return
    yy, xx = np.mgrid[ylo:yhi, xlo:xhi].astype(np.float64)
    dist = np.hypot(yy - cy, xx - cx)
    cover = np.clip(radius + 0.5 - dist, 0.0, 1.0) * value
    np.maximum(layer[ylo:yhi, xlo:xhi], cover, out=layer[ylo:yhi, xlo:xhi])


def gaussian_blur(img, sigma):
    """Separable Gaussian blur of a 2-D array (zero boundary)."""
    if sigma <= 0:
        return img.copy()
    radius = max(int(math.ceil(2.0 * sigma)), 1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()

    def along(a, axis):
        out = np.zeros_like(a)
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        ap = np.pad(a, pad)
        n = a.shape[axis]
        for k, kv in enumerate(kernel):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(k, k + n)
            out += kv * ap[tuple(sl)]
        return out

    return along(along(img, 0), 1)


def synth_rain(clean, spec):
    if spec.streak_count == 0 or spec.intensity == 0:
        return clean.copy()
    rng = np.random.default_rng(spec.seed)
    h, w = clean.shape[:2]
    layer = np.zeros((h, w), dtype=np.float64)
    for _ in range(spec.streak_count):
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        value = spec.intensity * rng.uniform(0.55, 1.0)
        thickness = rng.uniform(0.8, 1.3)
        _stamp_segment(layer, cy, cx, spec.angle_deg, spec.streak_length, thickness, value)
    out = 1.0 - (1.0 - clean) * (1.0 - layer[:, :, None])  # screen blend
    return np.clip(out, 0.0, 1.0)


def synth_snow(clean, spec):
    if spec.flake_count == 0 or spec.transparency == 0:
        return clean.copy()
    rng = np.random.default_rng(spec.seed)
    h, w = clean.shape[:2]
    layer = np.zeros((h, w), dtype=np.float64)
    for _ in range(spec.flake_count):
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        radius = rng.uniform(spec.radius_min, spec.radius_max)
        alpha = spec.transparency * rng.uniform(0.6, 1.0)
        _stamp_disk(layer, cy, cx, radius, alpha)
    layer = gaussian_blur(layer, spec.blur_radius)
    out = clean + layer[:, :, None] * (1.0 - clean)  # composite toward white
    return np.clip(out, 0.0, 1.0)


_SYNTH = {"haze": synth_haze, "rain": synth_rain, "snow": synth_snow}


def apply_degradation(clean, spec):
    return _SYNTH[spec.kind](clean, spec)


# ---------------------------------------------------------------------------
# clean-image generation (keeps the pipeline self-contained)


def _smooth_noise(h, w, rng, cell=8):
    coarse = rng.standard_normal((h // cell + 2, w // cell + 2))
    fine = np.repeat(np.repeat(coarse, cell, axis=0), cell, axis=1)[:h, :w]
    return gaussian_blur(fine, cell / 2.0)


def generate_clean_image(height, width, seed):
    """Procedural scene: gradient background, soft shapes, mild texture."""
    rng = np.random.default_rng(seed)
    c0 = rng.uniform(0.15, 0.95, size=3)
    c1 = rng.uniform(0.15, 0.95, size=3)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    proj = yy * np.cos(theta) + xx * np.sin(theta)
    t = (proj - proj.min()) / max(np.ptp(proj), 1e-12)
    img = c0.reshape(1, 1, 3) + t[:, :, None] * (c1 - c0).reshape(1, 1, 3)

    for _ in range(int(rng.integers(4, 9))):
        cy = rng.uniform(0, height)
        cx = rng.uniform(0, width)
        ry = rng.uniform(height / 12, height / 3)
        rx = rng.uniform(width / 12, width / 3)
        color = rng.uniform(0.05, 0.95, size=3)
        dist = np.hypot((yy - cy) / ry, (xx - cx) / rx)
        alpha = np.clip(1.25 - dist, 0.0, 1.0)[:, :, None]
        img = img * (1.0 - alpha) + color.reshape(1, 1, 3) * alpha

    img += 0.04 * _smooth_noise(height, width, rng)[:, :, None]
    return np.clip(img, 0.0, 1.0)


def make_clean_set(out_dir, count, height=96, width=96, seed=0):
    """Write `count` procedural clean PNGs; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        path = out / f"clean_{i:04d}.png"
        write_image(path, generate_clean_image(height, width, seed * 100_003 + i))
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# image I/O (8-bit PNG and binary PPM)


def write_image(path, arr):
    path = Path(path)
    u8 = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    if path.suffix.lower() == ".ppm":
        with open(path, "wb") as fh:
            fh.write(f"P6\n{u8.shape[1]} {u8.shape[0]}\n255\n".encode())
            fh.write(u8.tobytes())
    else:
        Image.fromarray(u8, "RGB").save(path)


def read_image(path, dtype=np.float64):
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        u8 = _read_ppm(path)
    else:
        with Image.open(path) as im:
            u8 = np.asarray(im.convert("RGB"))
    return (u8.astype(dtype)) / dtype(255.0)


def _read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic != b"P6" or maxval != 255:
        raise ValueError(f"{path}: only binary P6 with maxval 255 is supported")
    return np.frombuffer(data, dtype=np.uint8, count=h * w * 3, offset=pos).reshape(h, w, 3)


# ---------------------------------------------------------------------------
# dataset assembly


@dataclass
class ManifestEntry:
    kind: str
    clean_path: str
    degraded_path: str
    spec_hash: str


@dataclass
class DatasetManifest:
    split: str
    entries: list
    root: Path

    @property
    def counts(self):
        out = {k: 0 for k in KINDS}
        for e in self.entries:
            out[e.kind] += 1
        return out

    def resolve(self, entry):
        return self.root / entry.clean_path, self.root / entry.degraded_path


def write_manifest(path, entries):
    lines = [f"{e.kind}\t{e.clean_path}\t{e.degraded_path}\t{e.spec_hash}" for e in entries]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_manifest(path):
    path = Path(path)
    entries = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        kind, clean, degraded, digest = line.split("\t")
        entries.append(ManifestEntry(kind, clean, degraded, digest))
    split = "train" if "train" in path.name else "test"
    return DatasetManifest(split, entries, path.parent)


def manifest_digest(manifest):
    """Hash of the manifest lines; identifies the exact data an experiment saw."""
    lines = [f"{e.kind}\t{e.clean_path}\t{e.degraded_path}\t{e.spec_hash}" for e in manifest.entries]
    return hashlib.blake2b("\n".join(lines).encode(), digest_size=8).hexdigest()


def _list_clean(clean_dir):
    clean_dir = Path(clean_dir)
    if not clean_dir.is_dir():
        raise FileNotFoundError(f"clean image directory not found: {clean_dir}")
    paths = sorted(
        p for p in clean_dir.iterdir() if p.suffix.lower() in (".png", ".ppm")
    )
    if not paths:
        raise FileNotFoundError(f"no .png/.ppm images in {clean_dir}")
    return paths


def build_dataset(clean_dir, out_dir, per_kind, split_ratio=0.9, seed=0):
    """Synthesize a balanced mixed-weather dataset with a stratified split.

    Returns (train_manifest, test_manifest).  Clean sources are
    partitioned between the splits before synthesis so no image leaks
    across them.
    """
    if per_kind < 1:
        raise ValueError(f"per_kind must be >= 1, got {per_kind}")
    if not 0.0 < split_ratio <= 1.0:
        raise ValueError(f"split_ratio must lie in (0, 1], got {split_ratio}")
    sources = _list_clean(clean_dir)
    out = Path(out_dir)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    (out / "degraded").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sources))
    n_train_entries = int(round(per_kind * split_ratio))
    n_test_entries = per_kind - n_train_entries
    if n_test_entries > 0:
        if len(sources) < 2:
            raise ValueError(
                "need at least 2 clean images to keep train/test sources disjoint"
            )
        n_test_pool = max(1, int(round(len(sources) * (1.0 - split_ratio))))
        n_test_pool = min(n_test_pool, len(sources) - 1)
    else:
        n_test_pool = 0
    train_pool = [sources[i] for i in order[:len(sources) - n_test_pool]]
    test_pool = [sources[i] for i in order[len(sources) - n_test_pool:]]

    # copy each referenced clean source into the output tree once
    copied = {}

    def local_clean(src):
        if src not in copied:
            dst = out / "clean" / src.name
            shutil.copyfile(src, dst)
            copied[src] = f"clean/{src.name}"
        return copied[src]

    def synth_split(split, pool, count_per_kind):
        entries = []
        for kind in KINDS:
            for i in range(count_per_kind):
                src = pool[int(rng.integers(len(pool)))]
                spec = random_spec(kind, seed=int(rng.integers(2**31)), rng=rng)
                degraded = apply_degradation(read_image(src), spec)
                rel = f"degraded/{split}_{kind}_{i:04d}.png"
                write_image(out / rel, degraded)
                entries.append(ManifestEntry(kind, local_clean(src), rel, spec_hash(spec)))
        order = rng.permutation(len(entries))
        return [entries[i] for i in order]

    train_entries = synth_split("train", train_pool, n_train_entries)
    test_entries = synth_split("test", test_pool, n_test_entries) if n_test_entries else []

    write_manifest(out / "manifest-train.tsv", train_entries)
    write_manifest(out / "manifest-test.tsv", test_entries)
    return (
        DatasetManifest("train", train_entries, out),
        DatasetManifest("test", test_entries, out),
    )


# ---------------------------------------------------------------------------
# paired augmentation


def augment(degraded, clean, crop, rng):
    """Identical random crop + horizontal flip + k*90 deg rotation on a pair."""
    h, w = degraded.shape[:2]
    if degraded.shape != clean.shape:
        raise ValueError(f"pair shapes differ: {degraded.shape} vs {clean.shape}")
    if h < crop or w < crop:
        raise ValueError(
            f"image {h}x{w} is smaller than the {crop} crop; resize the image or lower the crop"
        )
    oy = int(rng.integers(0, h - crop + 1))
    ox = int(rng.integers(0, w - crop + 1))
    flip = bool(rng.integers(0, 2))
    k = int(rng.integers(0, 4))

    def apply(img):
        patch = img[oy:oy + crop, ox:ox + crop]
        if flip:
            patch = patch[:, ::-1]
        if k:
            patch = np.rot90(patch, k, axes=(0, 1))
        return np.ascontiguousarray(patch)

    return apply(degraded), apply(clean)
