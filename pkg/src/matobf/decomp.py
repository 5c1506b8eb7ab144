"""Per-image SVD and dataset-level PCA with a reproducible sign convention."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateVarianceError, DomainError, FormatError
from .imageio import atomic_write

PCA1_MAGIC = b"PCA1"
PCA1_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class SvdFactors:
    """Full SVD ``a = u @ diag(s) @ v_h`` with u (H, H), s (min(H, W),), v_h (W, W)."""

    u: np.ndarray
    s: np.ndarray
    v_h: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape[0], self.v_h.shape[0]


def _sign_flips(vectors: np.ndarray) -> np.ndarray:
    """+1/-1 per row so that each row's largest-|.| entry (first on ties) is >= 0."""
    pivot = np.argmax(np.abs(vectors), axis=1)
    signs = np.sign(vectors[np.arange(len(vectors)), pivot])
    signs[signs == 0] = 1.0
    return signs


def svd(image: np.ndarray) -> SvdFactors:
    """Full SVD of one image.

    Signs are fixed so the largest-magnitude entry of every column of ``u`` is
    non-negative; the paired row of ``v_h`` is flipped with it. Rows of
    ``v_h`` without a paired column (W > H) follow the same rule on their own.
    """
    a = np.asarray(image, dtype=np.float64)
    if a.ndim != 2:
        raise DomainError(f"expected a 2-D image, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("image contains non-finite values")
    u, s, v_h = np.linalg.svd(a, full_matrices=True)
    k = len(s)
    flips = _sign_flips(u.T)
    u = u * flips
    v_h = v_h.copy()
    v_h[:k] *= flips[:k, None]
    if v_h.shape[0] > k:
        v_h[k:] *= _sign_flips(v_h[k:])[:, None]
    return SvdFactors(u, s, v_h)


def svd_reconstruct(f: SvdFactors) -> np.ndarray:
    h, w = f.u.shape[0], f.v_h.shape[1]
    k = len(f.s)
    if f.u.shape != (h, h) or f.v_h.shape != (w, w) or k != min(h, w):
        raise DomainError(
            f"inconsistent factor shapes u{f.u.shape} s{f.s.shape} v_h{f.v_h.shape}"
        )
    return (f.u[:, :k] * f.s) @ f.v_h[:k]


@dataclass(frozen=True)
class PcaBasis:
    """Mean image plus ``n`` orthonormal principal directions (rows of ``components``)."""

    mean: np.ndarray
    components: np.ndarray
    source_dims: tuple[int, int]
    explained_variance: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.components.shape[0]

    def truncate(self, n: int) -> "PcaBasis":
        """Keep the leading ``n`` components."""
        if not 1 <= n <= self.n:
            raise ConfigError(f"cannot truncate a {self.n}-component basis to {n}")
        ev = None if self.explained_variance is None else self.explained_variance[:n]
        return PcaBasis(self.mean, self.components[:n], self.source_dims, ev)


def fit_pca(train, n: int, route: str = "auto") -> PcaBasis:
    """Fit a mean-centred PCA basis on a training stack.

    ``train`` is a :class:`~matobf.dataset.LabeledDataset` or an (M, H, W)
    array. With ``route="auto"`` the top eigenpairs of the M x M Gram matrix
    are used when M < D, otherwise a thin SVD of the centred data;
    ``"gram"`` and ``"svd"`` force one route.
    """
    if route not in ("auto", "gram", "svd"):
        raise ConfigError(f"unknown PCA route {route!r}")
    images = np.asarray(getattr(train, "images", train), dtype=np.float64)
    if images.ndim != 3:
        raise DomainError(f"expected an (M, H, W) stack, got shape {images.shape}")
    m, h, w = images.shape
    d = h * w
    if not 1 <= n <= min(m - 1, d):
        raise ConfigError(f"n must lie in [1, {min(m - 1, d)}] for {m} images of {h}x{w}, got {n}")
    x = images.reshape(m, d)
    mean = x.mean(axis=0)
    xc = x - mean
    if not np.any(xc):
        raise DegenerateVarianceError("training images are identical; no variance to extract")

    components = None
    if route == "gram" or (route == "auto" and m < d):
        gram = xc @ xc.T
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals, kind="stable")[::-1][:n]
        evals, evecs = evals[order], evecs[:, order]
        tol = max(m, d) * np.finfo(float).eps * evals[0]
        if evals[0] <= 0:
            raise DegenerateVarianceError("training set has zero variance")
        if evals[-1] > tol:
            components = (xc.T @ evecs / np.sqrt(evals)).T
            sq_sv = evals
    if components is None:
        # also covers requests beyond the numerical rank, where the Gram route is unstable
        _, sv, vh = np.linalg.svd(xc, full_matrices=False)
        components, sq_sv = vh[:n], sv[:n] ** 2
    components = components * _sign_flips(components)[:, None]
    return PcaBasis(mean, np.ascontiguousarray(components), (h, w), sq_sv / max(m - 1, 1))


def _check_dims(basis: PcaBasis, image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != tuple(basis.source_dims):
        raise DomainError(f"image shape {image.shape} does not match basis {basis.source_dims}")
    return image


def pca_project(basis: PcaBasis, image: np.ndarray) -> np.ndarray:
    """Coefficients of ``image - mean`` along each component."""
    image = _check_dims(basis, image)
    return basis.components @ (image.ravel() - basis.mean)


def pca_project_many(basis: PcaBasis, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.shape[1:] != tuple(basis.source_dims):
        raise DomainError(f"image shape {images.shape[1:]} does not match basis {basis.source_dims}")
    return (images.reshape(len(images), -1) - basis.mean) @ basis.components.T


def pca_reconstruct(basis: PcaBasis, coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (basis.n,):
        raise DomainError(f"expected {basis.n} coefficients, got shape {coeffs.shape}")
    return (basis.mean + coeffs @ basis.components).reshape(basis.source_dims)


def encode_basis(basis: PcaBasis, permutation=None) -> bytes:
    h, w = basis.source_dims
    perm = np.arange(basis.n) if permutation is None else np.asarray(permutation)
    if perm.shape != (basis.n,):
        raise DomainError(f"permutation length {perm.shape} does not match n={basis.n}")
    return b"".join(
        [
            PCA1_HEADER.pack(PCA1_MAGIC, basis.n, h, w),
            np.asarray(basis.mean, dtype="<f8").tobytes(),
            np.ascontiguousarray(basis.components, dtype="<f8").tobytes(),
            perm.astype("<f8").tobytes(),
        ]
    )


def decode_basis(data: bytes) -> tuple[PcaBasis, np.ndarray]:
    if len(data) < PCA1_HEADER.size:
        raise FormatError("file shorter than the PCA1 header", len(data))
    magic, n, h, w = PCA1_HEADER.unpack_from(data, 0)
    if magic != PCA1_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {PCA1_MAGIC!r}", 0)
    d = h * w
    expected = PCA1_HEADER.size + 8 * (d + n * d + n)
    if len(data) != expected:
        raise FormatError(f"expected {expected} bytes for n={n}, {h}x{w}; got {len(data)}", PCA1_HEADER.size)
    values = np.frombuffer(data, dtype="<f8", offset=PCA1_HEADER.size).astype(np.float64)
    mean, comps, perm = values[:d], values[d : d + n * d].reshape(n, d), values[d + n * d :]
    if not np.array_equal(np.sort(perm), np.arange(n)):
        raise FormatError("stored permutation block is not a bijection", PCA1_HEADER.size + 8 * (d + n * d))
    return PcaBasis(mean, comps, (h, w)), perm.astype(np.int64)


def save_basis(basis: PcaBasis, path, permutation=None) -> None:
    payload = encode_basis(basis, permutation)
    with atomic_write(path) as fh:
        fh.write(payload)


def load_basis(path) -> tuple[PcaBasis, np.ndarray]:
    """Return ``(basis, permutation)`` from a PCA1 file."""
    return decode_basis(Path(path).read_bytes())
