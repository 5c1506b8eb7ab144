"""Privacy-preserving image obfuscation via SVD and PCA, with privacy metrics,
a linear utility probe and simulated re-identification/reconstruction attacks."""

from .dataset import (
    LabeledDataset,
    SplitSpec,
    generate_synthetic,
    minmax_normalize,
    resize_bilinear,
    split_dataset,
)
from .decomp import PcaBasis, SvdFactors, fit_pca, pca_project, pca_reconstruct, svd, svd_reconstruct
from .imageio import load_pgm, read_obf1, save_pgm, write_obf1
from .metrics import PrivacyReport, privacy_report, psnr, ssim
from .obfuscate import (
    Method,
    ObfuscationPolicy,
    Permutation,
    make_permutation,
    obfuscate_batch,
    obfuscate_pca,
    obfuscate_svd,
    perturb_pixels,
)
from .attacks import RidgeAttacker, Scenario, attack_reconstruct, reidentify, run_attack_scenario, train_ridge_attacker
from .probe import LinearClassifier, TrainConfig, evaluate, predict, train_classifier

__version__ = "0.1.0"
