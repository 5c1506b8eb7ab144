"""Re-identification and learned-reconstruction attacks on obfuscated images.

The reconstruction attacker is closed-form ridge regression from flattened
obfuscated images to flattened originals.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .dataset import DEFAULT_STYLE, SHIFTED_STYLE, LabeledDataset, SyntheticStyle, generate_synthetic
from .decomp import fit_pca
from .errors import ConfigError, DomainError
from .metrics import PrivacyReport, format_float, privacy_report
from .obfuscate import ObfuscationPolicy, mix_seed, obfuscate_batch, obfuscate_image, policy_permutation

DEFAULT_LAMBDA = 1e-2


@dataclass(frozen=True)
class RidgeAttacker:
    """Affine map ``flatten(obf) @ weights + intercept`` -> flattened original.

    ``weights`` has shape (D_in, D_out).
    """

    weights: np.ndarray
    intercept: np.ndarray
    lam: float
    in_dims: tuple[int, int]
    out_dims: tuple[int, int]


def _stack(images, what: str) -> np.ndarray:
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if len({im.shape for im in images}) > 1:
        raise DomainError(f"{what} images do not share one shape")
    return np.stack(images)


def train_ridge_attacker(obf, orig, lam: float = DEFAULT_LAMBDA) -> RidgeAttacker:
    """Solve (X^T X + lam I) W = X^T Y on centred, flattened pairs."""
    if not lam > 0:
        raise ConfigError(f"ridge lambda must be positive, got {lam}")
    if len(obf) != len(orig):
        raise DomainError(f"{len(obf)} obfuscated vs {len(orig)} original images")
    if len(obf) < 2:
        raise DomainError("need at least two training pairs")
    xs, ys = _stack(obf, "obfuscated"), _stack(orig, "original")
    x = xs.reshape(len(xs), -1)
    y = ys.reshape(len(ys), -1)
    x_mean, y_mean = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - x_mean, y - y_mean
    gram = xc.T @ xc
    gram[np.diag_indices_from(gram)] += lam
    weights = np.linalg.solve(gram, xc.T @ yc)
    intercept = y_mean - x_mean @ weights
    return RidgeAttacker(weights, intercept, lam, xs.shape[1:], ys.shape[1:])


def attack_reconstruct(attacker: RidgeAttacker, obf: np.ndarray, clip: bool = True) -> np.ndarray:
    obf = np.asarray(obf, dtype=np.float64)
    if obf.shape != tuple(attacker.in_dims):
        raise DomainError(f"input shape {obf.shape} does not match attacker {attacker.in_dims}")
    out = (obf.ravel() @ attacker.weights + attacker.intercept).reshape(attacker.out_dims)
    return np.clip(out, 0.0, 1.0) if clip else out


class Scenario(str, enum.Enum):
    """Attacker knowledge: same-distribution data or a shifted modality."""

    SAME = "same"
    SHIFTED = "shifted"


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of the synthetic generator behind a dataset."""

    h: int = 32
    w: int = 32
    noise_sigma: float = 0.05
    style: SyntheticStyle = DEFAULT_STYLE

    def shifted(self) -> "GeneratorSpec":
        return replace(self, noise_sigma=2.0 * self.noise_sigma + 0.02, style=SHIFTED_STYLE)


def attacker_training_set(scenario, target_gen: GeneratorSpec, n_per_class: int, seed: int) -> LabeledDataset:
    gen = target_gen if Scenario(scenario) is Scenario.SAME else target_gen.shifted()
    return generate_synthetic(
        n_per_class, gen.h, gen.w, gen.noise_sigma, seed, gen.style, name=f"attacker-{Scenario(scenario).value}"
    )


def run_attack_scenario(
    scenario,
    policy: ObfuscationPolicy,
    basis,
    target_test: LabeledDataset,
    seed: int,
    target_gen: GeneratorSpec = GeneratorSpec(),
    attacker_per_class: int = 100,
    lam: float = DEFAULT_LAMBDA,
    threads: int = 1,
) -> PrivacyReport:
    """Simulate the three-step reconstruction attack against ``target_test``.

    The attacker knows the method, N and the randomization setting, but not
    the victim's secrets: it fits its own PCA basis on its own data and draws
    its own master seed (hence its own PCA-SC shuffle).
    """
    if len(target_test) == 0:
        return PrivacyReport()
    intercepted = obfuscate_batch(policy, basis, target_test, threads=threads)

    own = attacker_training_set(scenario, target_gen, attacker_per_class, mix_seed(seed, 0))
    own_policy = replace(policy, master_seed=mix_seed(seed, 1))
    own_basis = fit_pca(own, policy.n_components) if policy.method.is_pca else None
    own_obf = obfuscate_batch(own_policy, own_basis, own, threads=threads)
    attacker = train_ridge_attacker(own_obf.images, own.images, lam)

    recon = [attack_reconstruct(attacker, im) for im in intercepted.images]
    return privacy_report(target_test.images, recon, threads=threads)


@dataclass(frozen=True)
class ReidResult:
    probe_index: int
    exact_match: bool
    nn_rank: int
    distance_gap: float


def reidentify(
    probe_original: np.ndarray,
    policy: ObfuscationPolicy,
    basis,
    obf_dataset: LabeledDataset,
    seed: int,
    true_index: int | None = None,
) -> ReidResult:
    """Obfuscate a known original and look for it in an obfuscated dataset.

    ``seed`` drives the probe's own perturbation when the policy randomizes.
    ``nn_rank`` is the Euclidean rank of item ``true_index`` (or of the
    nearest item when it is None); ``distance_gap`` is the distance to the
    closest other item minus the distance to that item.
    """
    if len(obf_dataset) == 0:
        raise DomainError("cannot re-identify against an empty dataset")
    probe = np.asarray(probe_original, dtype=np.float64)
    policy.check(basis, probe.shape)
    obf_probe = obfuscate_image(policy, basis, probe, item_seed=seed, perm=policy_permutation(policy))
    if obf_probe.shape != obf_dataset.shape:
        raise DomainError(f"obfuscated probe {obf_probe.shape} vs dataset images {obf_dataset.shape}")
    flat = obf_dataset.images.reshape(len(obf_dataset), -1)
    dists = np.linalg.norm(flat - obf_probe.ravel(), axis=1)
    exact = bool(np.any(np.all(flat == obf_probe.ravel(), axis=1)))
    idx = int(np.argmin(dists)) if true_index is None else int(true_index)
    if not 0 <= idx < len(obf_dataset):
        raise DomainError(f"true_index {idx} outside dataset of {len(obf_dataset)}")
    rank = 1 + int(np.sum(dists < dists[idx]))
    others = np.delete(dists, idx)
    gap = float(others.min() - dists[idx]) if len(others) else float("inf")
    return ReidResult(idx, exact, rank, gap)


ATTACK_CSV_HEADER = "scenario,method,n_components,seed,mean_ssim,mean_psnr"
REID_CSV_HEADER = "probe,exact_match,nn_rank,distance_gap"


def attack_csv_row(scenario, policy: ObfuscationPolicy, seed: int, report: PrivacyReport) -> str:
    n = "" if policy.n_components is None else str(policy.n_components)
    return ",".join(
        [Scenario(scenario).value, policy.method.value, n, str(seed),
         format_float(report.mean_ssim), format_float(report.mean_psnr)]
    )


def reid_csv(results) -> str:
    lines = [REID_CSV_HEADER]
    for r in results:
        lines.append(f"{r.probe_index},{str(r.exact_match).lower()},{r.nn_rank},{format_float(r.distance_gap)}")
    return "\n".join(lines) + "\n"
