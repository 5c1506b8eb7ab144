"""Labeled image datasets: normalization, resizing, splitting, synthetic data and on-disk layout."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, FormatError
from .imageio import atomic_write, load_pgm, read_obf1, save_pgm, write_obf1

MANIFEST = "manifest.json"


@dataclass
class LabeledDataset:
    """A stack of equally sized grayscale images with integer class labels.

    ``images`` has shape (M, H, W), float64. ``unbounded`` marks data whose
    values may leave [0, 1] (raw SVD/PCA obfuscations).
    """

    images: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    unbounded: bool = False

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3:
            raise DomainError(f"images must be an (M, H, W) stack, got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DomainError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, indices, name: str | None = None) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.images[indices], self.labels[indices], name or self.name, self.unbounded
        )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.6
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f <= 0 for f in fracs):
            raise ConfigError(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fracs)!r}")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train_fraction, self.val_fraction, self.test_fraction)


def minmax_normalize(image: np.ndarray) -> np.ndarray:
    """Scale one image onto [0, 1]; a constant image becomes all zeros."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = image.min(), image.max()
    if hi > lo:
        return (image - lo) / (hi - lo)
    return np.zeros_like(image)


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with a corner-aligned grid (first/last pixels map to first/last)."""
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"output size must be positive, got {out_h}x{out_w}")
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()

    def axis_weights(n_in, n_out):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = axis_weights(h, out_h)
    c0, c1, fc = axis_weights(w, out_w)
    fr = fr[:, None]
    top = image[r0][:, c0] * (1 - fc) + image[r0][:, c1] * fc
    bottom = image[r1][:, c0] * (1 - fc) + image[r1][:, c1] * fc
    out = top * (1 - fr) + bottom * fr
    # keep constant images exact; the blend above can drift by an ulp
    lo, hi = image.min(), image.max()
    if lo == hi:
        out.fill(lo)
    return out


def _allocate(count: int, fractions) -> list[int]:
    """Largest-remainder apportionment of ``count`` items over ``fractions``."""
    raw = [count * f for f in fractions]
    sizes = [int(np.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: count - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_indices(labels, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(labels))
    parts: list[list[int]] = [[], [], []]
    for cls in np.unique(labels):
        members = order[labels[order] == cls]
        sizes = _allocate(len(members), spec.fractions)
        start = 0
        for k, size in enumerate(sizes):
            parts[k].extend(members[start : start + size].tolist())
            start += size
    rank = np.empty(len(labels), dtype=np.int64)
    rank[order] = np.arange(len(labels))
    out = []
    for name, part in zip(("train", "val", "test"), parts):
        if not part:
            raise ConfigError(f"split fractions {spec.fractions} leave the {name} split empty")
        part = np.asarray(part, dtype=np.int64)
        out.append(part[np.argsort(rank[part], kind="stable")])
    return tuple(out)


def split_dataset(ds: LabeledDataset, spec: SplitSpec):
    """Stratified, seeded split into (train, val, test)."""
    idx = split_indices(ds.labels, spec)
    return tuple(
        ds.subset(i, f"{ds.name}-{part}") for i, part in zip(idx, ("train", "val", "test"))
    )


@dataclass(frozen=True)
class SyntheticStyle:
    """Geometry of the synthetic vessel-like strokes.

    ``curvature`` is the bend of the class-0 diagonal stroke as a fraction of
    the image height; ``thickness`` is the stroke's Gaussian profile width and
    ``wobble`` the amplitude of its tortuosity, both in pixels.
    """

    thickness: float = 1.5
    curvature: float = 0.25
    wobble: float = 2.0
    stroke_level: tuple[float, float] = (0.8, 1.0)
    background_level: tuple[float, float] = (0.05, 0.1)


DEFAULT_STYLE = SyntheticStyle()
# an alternative "modality" for attacker data drawn from a different distribution
SHIFTED_STYLE = SyntheticStyle(
    thickness=3.0, curvature=-0.45, wobble=0.5, stroke_level=(0.55, 0.8), background_level=(0.25, 0.4)
)


def _stroke_path(label: int, h: int, w: int, rng: np.random.Generator, style: SyntheticStyle):
    """Sample points (row, col) along one stroke, including its sinusoidal wobble."""
    if label == 0:
        start = np.array([rng.uniform(0.05, 0.15) * h, rng.uniform(0.05, 0.15) * w])
        end = np.array([rng.uniform(0.85, 0.95) * h, rng.uniform(0.85, 0.95) * w])
        d = end - start
        normal = np.array([-d[1], d[0]]) / np.hypot(*d)
        bend = style.curvature * h * rng.uniform(0.6, 1.0)
        ctrl = (start + end) / 2 + bend * normal
        t = np.linspace(0.0, 1.0, 4 * (h + w))[:, None]
        path = (1 - t) ** 2 * start + 2 * (1 - t) * t * ctrl + t**2 * end
    else:
        row = rng.uniform(0.3, 0.7) * h
        c0, c1 = rng.uniform(0.05, 0.2) * w, rng.uniform(0.8, 0.95) * w
        t = np.linspace(0.0, 1.0, 4 * w)[:, None]
        path = np.column_stack([np.full(len(t), row), c0 + (c1 - c0) * t[:, 0]])
        normal = np.array([1.0, 0.0])
    freq = rng.uniform(1.5, 4.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    amp = style.wobble * rng.uniform(0.5, 1.0)
    return path + amp * np.sin(2.0 * np.pi * freq * t + phase) * normal


def render_stroke(path: np.ndarray, h: int, w: int, thickness: float) -> np.ndarray:
    """Unit-peak intensity profile exp(-d^2 / 2 t^2) of distance d to a polyline."""
    rows, cols = np.mgrid[0:h, 0:w]
    pix = np.column_stack([rows.ravel() + 0.5, cols.ravel() + 0.5])
    cross = pix @ path.T
    d2 = (pix * pix).sum(axis=1)[:, None] + (path * path).sum(axis=1)[None, :] - 2.0 * cross
    d2 = np.maximum(d2.min(axis=1), 0.0)
    return np.exp(-d2 / (2.0 * thickness**2)).reshape(h, w)


def generate_synthetic(
    n_per_class: int,
    h: int = 32,
    w: int = 32,
    noise_sigma: float = 0.05,
    seed: int = 0,
    style: SyntheticStyle = DEFAULT_STYLE,
    name: str = "synthetic",
) -> LabeledDataset:
    """Two-class stand-in for angiography frames.

    Class 0 carries a curved diagonal stroke, class 1 a horizontal one, both
    bright on a dark background, with additive Gaussian noise clipped to [0, 1].
    Images are ordered class by class.
    """
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be >= 1, got {n_per_class}")
    if h < 2 or w < 2:
        raise ConfigError(f"image size must be at least 2x2, got {h}x{w}")
    rng = np.random.default_rng(seed)
    images = np.empty((2 * n_per_class, h, w))
    labels = np.repeat([0, 1], n_per_class)
    for i, label in enumerate(labels):
        path = _stroke_path(int(label), h, w, rng, style)
        profile = render_stroke(path, h, w, style.thickness)
        bg = rng.uniform(*style.background_level)
        fg = rng.uniform(*style.stroke_level)
        img = bg + (fg - bg) * profile
        if noise_sigma > 0:
            img = img + rng.normal(0.0, noise_sigma, size=(h, w))
        images[i] = np.clip(img, 0.0, 1.0)
    return LabeledDataset(images, labels, name)


def save_dataset_dir(ds: LabeledDataset, out_dir, fmt: str = "pgm", extra: dict | None = None) -> None:
    """Write one file per image plus ``manifest.json``.

    ``fmt="pgm"`` quantizes to 8 bits without rescaling (values are assumed in
    [0, 1]); ``fmt="obf1"`` is lossless.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = {"pgm": "pgm", "obf1": "obf"}[fmt]
    width = max(4, len(str(len(ds))))
    files = []
    for i, img in enumerate(ds.images):
        fname = f"img_{i:0{width}d}.{ext}"
        if fmt == "pgm":
            save_pgm(img, out_dir / fname, rescale=False)
        else:
            write_obf1(img, out_dir / fname, unbounded=ds.unbounded)
        files.append(fname)
    manifest = {"format": fmt, "name": ds.name, "height": ds.shape[0], "width": ds.shape[1]}
    manifest.update(extra or {})
    manifest["files"] = files
    manifest["labels"] = ds.labels.tolist()
    with atomic_write(out_dir / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise FormatError(f"no {MANIFEST} in {data_dir}") from None


def load_dataset_dir(data_dir, normalize: bool = False) -> LabeledDataset:
    """Load a directory written by :func:`save_dataset_dir`.

    ``normalize`` applies per-image min-max scaling after loading (for
    externally produced PGMs).
    """
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir)
    files, labels = manifest["files"], manifest["labels"]
    if len(files) != len(labels) or not files:
        raise FormatError(f"manifest in {data_dir} lists {len(files)} files and {len(labels)} labels")
    unbounded = False
    images = []
    for fname in files:
        if manifest.get("format") == "obf1":
            img, flag = read_obf1(data_dir / fname)
            unbounded = unbounded or flag
        else:
            img = load_pgm(data_dir / fname)
        if normalize:
            img = minmax_normalize(img)
        images.append(img)
    if len({im.shape for im in images}) != 1:
        raise DomainError(f"images in {data_dir} do not share one size")
    return LabeledDataset(np.stack(images), labels, manifest.get("name", data_dir.name), unbounded)


def style_to_dict(style: SyntheticStyle) -> dict:
    return asdict(style)


def style_from_dict(d: dict) -> SyntheticStyle:
    d = dict(d)
    for key in ("stroke_level", "background_level"):
        if key in d:
            d[key] = tuple(d[key])
    return SyntheticStyle(**d)
