"""SVD and PCA image obfuscation with optional random pixel perturbation."""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import LabeledDataset, save_dataset_dir
from .decomp import PcaBasis, pca_project, pca_reconstruct, svd
from .errors import ConfigError, DomainError

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


class Method(str, enum.Enum):
    SVD_U = "svd-u"
    SVD_VH = "svd-vh"
    SVD_SUM = "svd-sum"
    PCA = "pca"
    PCA_SC = "pca-sc"

    @property
    def is_pca(self) -> bool:
        return self in (Method.PCA, Method.PCA_SC)


SVD_METHODS = (Method.SVD_U, Method.SVD_VH, Method.SVD_SUM)


def mix_seed(master_seed: int, index: int) -> int:
    """SplitMix64 finalizer applied to ``master_seed + (index + 1) * GOLDEN_GAMMA``."""
    z = (master_seed + (index + 1) * GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class ObfuscationPolicy:
    method: Method
    n_components: int | None = None
    randomize: bool = False
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not 0 <= self.master_seed <= MASK64:
            raise ConfigError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if self.method.is_pca and (self.n_components is None or self.n_components < 1):
            raise ConfigError(f"{self.method.value} needs n_components >= 1")

    def check(self, basis: PcaBasis | None, dims: tuple[int, int] | None = None) -> None:
        """Raise ConfigError if the policy cannot run with ``basis`` on images of ``dims``."""
        if self.method.is_pca:
            if basis is None:
                raise ConfigError(f"{self.method.value} requires a fitted PCA basis")
            if basis.n != self.n_components:
                raise ConfigError(
                    f"policy asks for {self.n_components} components, basis has {basis.n}"
                )
            if dims is not None and tuple(dims) != tuple(basis.source_dims):
                raise ConfigError(f"images are {dims}, basis was fitted on {basis.source_dims}")
        elif self.method is Method.SVD_SUM and dims is not None and dims[0] != dims[1]:
            raise ConfigError(f"svd-sum requires square images, got {dims[0]}x{dims[1]}")


@dataclass(frozen=True)
class Permutation:
    mapping: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        mapping = np.asarray(self.mapping, dtype=np.int64)
        if mapping.ndim != 1 or not np.array_equal(np.sort(mapping), np.arange(len(mapping))):
            raise DomainError("permutation mapping must be a bijection on 0..n-1")
        object.__setattr__(self, "mapping", mapping)

    def __len__(self) -> int:
        return len(self.mapping)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        """out[i] = coeffs[mapping[i]]"""
        return np.asarray(coeffs)[..., self.mapping]

    def inverse(self) -> "Permutation":
        return Permutation(np.argsort(self.mapping), self.seed)


def make_permutation(n: int, seed: int) -> Permutation:
    """Seeded Fisher-Yates shuffle of 0..n-1."""
    if n < 1:
        raise ConfigError(f"permutation size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    mapping = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        mapping[i], mapping[j] = mapping[j], mapping[i]
    return Permutation(np.array(mapping), seed)


def perturb_pixels(image: np.ndarray, seed: int) -> np.ndarray:
    """Replace one random pixel in each of max(1, H // 3) random rows with a U[0, 1) value."""
    image = np.array(image, dtype=np.float64)
    h, w = image.shape
    rng = np.random.default_rng(seed)
    n_rows = max(1, h // 3)
    rows = rng.choice(h, size=n_rows, replace=False)
    cols = rng.integers(0, w, size=n_rows)
    image[rows, cols] = rng.random(n_rows)
    return image


def obfuscate_svd(image: np.ndarray, variant) -> np.ndarray:
    """Drop the singular values and keep U, V^H, or U + V^H."""
    variant = Method(variant)
    image = np.asarray(image, dtype=np.float64)
    if variant is Method.SVD_SUM and image.shape[0] != image.shape[1]:
        raise ConfigError(f"svd-sum requires a square image, got {image.shape[0]}x{image.shape[1]}")
    if variant not in SVD_METHODS:
        raise ConfigError(f"{variant.value} is not an SVD variant")
    f = svd(image)
    if variant is Method.SVD_U:
        return f.u
    if variant is Method.SVD_VH:
        return f.v_h
    return f.u + f.v_h


def obfuscate_pca(basis: PcaBasis, image: np.ndarray, perm: Permutation | None = None) -> np.ndarray:
    coeffs = pca_project(basis, image)
    if perm is not None:
        if len(perm) != basis.n:
            raise DomainError(f"permutation length {len(perm)} does not match basis n={basis.n}")
        coeffs = perm.apply(coeffs)
    return pca_reconstruct(basis, coeffs)


def policy_permutation(policy: ObfuscationPolicy) -> Permutation | None:
    """The single shuffle shared by every image under a PCA-SC policy."""
    if policy.method is Method.PCA_SC:
        return make_permutation(policy.n_components, policy.master_seed)
    return None


def obfuscate_image(
    policy: ObfuscationPolicy,
    basis: PcaBasis | None,
    image: np.ndarray,
    item_seed: int | None = None,
    perm: Permutation | None = None,
) -> np.ndarray:
    """Single-image pipeline: optional perturbation, then the policy's method.

    ``item_seed`` drives the perturbation when ``policy.randomize`` is set; it
    defaults to the seed the batch would use for item 0.
    """
    if policy.randomize:
        seed = mix_seed(policy.master_seed, 0) if item_seed is None else item_seed
        image = perturb_pixels(image, seed)
    if policy.method.is_pca:
        if perm is None:
            perm = policy_permutation(policy)
        return obfuscate_pca(basis, image, perm)
    return obfuscate_svd(image, policy.method)


def obfuscate_batch(
    policy: ObfuscationPolicy,
    basis: PcaBasis | None,
    ds: LabeledDataset,
    threads: int = 1,
) -> LabeledDataset:
    """Obfuscate every image of ``ds``; item i is perturbed with ``mix_seed(master_seed, i)``."""
    policy.check(basis, ds.shape)
    perm = policy_permutation(policy)

    def work(i):
        return obfuscate_image(policy, basis, ds.images[i], mix_seed(policy.master_seed, i), perm)

    if threads > 1 and len(ds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(work, range(len(ds))))
    else:
        out = [work(i) for i in range(len(ds))]
    if out:
        images = np.stack(out)
    else:
        h, w = ds.shape
        shape = {Method.SVD_U: (h, h), Method.SVD_VH: (w, w)}.get(policy.method, (h, w))
        images = np.empty((0,) + shape)
    return LabeledDataset(images, ds.labels.copy(), f"{ds.name}-{policy.method.value}", unbounded=True)


def policy_to_dict(policy: ObfuscationPolicy, perm: Permutation | None = None) -> dict:
    return {
        "method": policy.method.value,
        "n_components": policy.n_components,
        "randomize": policy.randomize,
        "master_seed": policy.master_seed,
        "permutation": None if perm is None else perm.mapping.tolist(),
    }


def write_obfuscated_dir(obf: LabeledDataset, out_dir, policy: ObfuscationPolicy) -> None:
    """One OBF1 file per image plus a manifest carrying the policy and permutation."""
    save_dataset_dir(obf, Path(out_dir), fmt="obf1", extra=policy_to_dict(policy, policy_permutation(policy)))
