"""SSIM / PSNR privacy metrics and aggregate reports."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import minmax_normalize
from .errors import DomainError

WINDOW = 11
SIGMA = 1.5
K1 = 0.01
K2 = 0.03
DATA_RANGE = 1.0


def gaussian_taps(size: int, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _prepare(a, b, normalize: bool | None):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch: {a.shape} vs {b.shape}")
    return _scale(a, normalize), _scale(b, normalize)


def _scale(x: np.ndarray, normalize: bool | None) -> np.ndarray:
    if normalize is None:
        normalize = bool(x.min() < 0.0 or x.max() > 1.0)
    return minmax_normalize(x) if normalize else x


def _filter(x: np.ndarray, gr: np.ndarray, gc: np.ndarray) -> np.ndarray:
    """Valid-mode separable weighted window sums."""
    rows = sliding_window_view(x, len(gr), axis=0) @ gr
    return sliding_window_view(rows, len(gc), axis=1) @ gc


def ssim_map(a, b, normalize: bool | None = None) -> np.ndarray:
    """Local SSIM for every fully contained window position.

    Images smaller than the 11x11 window use a window truncated to the image
    size along that axis.
    """
    a, b = _prepare(a, b, normalize)
    gr = gaussian_taps(min(WINDOW, a.shape[0]))
    gc = gaussian_taps(min(WINDOW, a.shape[1]))
    c1 = (K1 * DATA_RANGE) ** 2
    c2 = (K2 * DATA_RANGE) ** 2
    mu_a, mu_b = _filter(a, gr, gc), _filter(b, gr, gc)
    var_a = _filter(a * a, gr, gc) - mu_a * mu_a
    var_b = _filter(b * b, gr, gc) - mu_b * mu_b
    cov = _filter(a * b, gr, gc) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, normalize: bool | None = None) -> float:
    """Mean structural similarity of two equally sized images.

    ``normalize=None`` min-max scales an input only when it leaves [0, 1];
    ``True`` always scales, ``False`` never does.
    """
    return float(ssim_map(a, b, normalize).mean())


def psnr(a, b, normalize: bool | None = None) -> float:
    """Peak signal-to-noise ratio in dB for a peak of 1.0; ``inf`` when identical."""
    a, b = _prepare(a, b, normalize)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(DATA_RANGE**2 / mse)


@dataclass
class PrivacyReport:
    pair_ssim: list[float] = field(default_factory=list)
    pair_psnr: list[float] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.pair_ssim)

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.pair_ssim)) if self.pair_ssim else math.nan

    @property
    def std_ssim(self) -> float:
        return float(np.std(self.pair_ssim)) if self.pair_ssim else math.nan

    @property
    def mean_psnr(self) -> float:
        """Mean over finite PSNR values; ``inf`` if every pair is identical."""
        finite = [p for p in self.pair_psnr if math.isfinite(p)]
        if finite:
            return float(np.mean(finite))
        return math.inf if self.pair_psnr else math.nan

    def summary(self) -> dict:
        return {
            "count": self.count,
            "mean_ssim": self.mean_ssim,
            "std_ssim": self.std_ssim,
            "mean_psnr": self.mean_psnr,
        }

    def to_csv(self) -> str:
        lines = ["index,ssim,psnr_db"]
        for i, (s, p) in enumerate(zip(self.pair_ssim, self.pair_psnr)):
            lines.append(f"{i},{format_float(s)},{format_float(p)}")
        lines.append(
            f"# mean_ssim={format_float(self.mean_ssim)},"
            f"std_ssim={format_float(self.std_ssim)},"
            f"mean_psnr={format_float(self.mean_psnr)}"
        )
        return "\n".join(lines) + "\n"


def format_float(x: float) -> str:
    """Shortest round-trip decimal; infinities as ``inf``."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def privacy_report(originals, others, normalize: bool | None = None, threads: int = 1) -> PrivacyReport:
    """Pairwise SSIM/PSNR between two equally long image sequences."""
    originals, others = list(originals), list(others)
    if len(originals) != len(others):
        raise DomainError(f"{len(originals)} originals vs {len(others)} comparison images")

    def pair(i):
        return ssim(originals[i], others[i], normalize), psnr(originals[i], others[i], normalize)

    if threads > 1 and len(originals) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(pair, range(len(originals))))
    else:
        results = [pair(i) for i in range(len(originals))]
    return PrivacyReport([r[0] for r in results], [r[1] for r in results])
