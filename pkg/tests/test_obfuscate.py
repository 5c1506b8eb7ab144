import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matobf.dataset import LabeledDataset, generate_synthetic
from matobf.decomp import fit_pca, pca_project, svd
from matobf.errors import ConfigError, DomainError
from matobf.obfuscate import (
    Method,
    ObfuscationPolicy,
    Permutation,
    make_permutation,
    mix_seed,
    obfuscate_batch,
    obfuscate_image,
    obfuscate_pca,
    obfuscate_svd,
    perturb_pixels,
    policy_permutation,
)


@pytest.fixture(scope="module")
def data():
    return generate_synthetic(15, 16, 16, 0.05, seed=3)


@pytest.fixture(scope="module")
def basis(data):
    return fit_pca(data, 8)


# ------------------------------------------------------------------ perturbation


def test_perturb_changes_one_pixel_per_chosen_row():
    img = np.full((6, 8), 2.0)  # out of [0, 1) so every replacement is visible
    out = perturb_pixels(img, seed=1)
    changed = np.argwhere(out != img)
    assert len(changed) == 2
    assert len(set(changed[:, 0])) == 2
    assert np.all((out[out != img] >= 0) & (out[out != img] < 1))
    assert np.array_equal(img, np.full((6, 8), 2.0)), "input must not be mutated"


def test_perturb_tiny_image_touches_one_pixel():
    out = perturb_pixels(np.full((2, 2), 5.0), seed=0)
    assert np.sum(out != 5.0) == 1


def test_perturb_seeds_give_different_results():
    img = np.full((12, 12), 2.0)
    differ = sum(
        not np.array_equal(perturb_pixels(img, mix_seed(7, i)), perturb_pixels(img, mix_seed(7, i + 100)))
        for i in range(100)
    )
    assert differ == 100


def test_perturb_is_reproducible():
    img = np.random.default_rng(0).random((9, 9))
    assert perturb_pixels(img, 42).tobytes() == perturb_pixels(img, 42).tobytes()


def test_mix_seed_is_64bit_and_spreads():
    seeds = {mix_seed(0, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert all(0 <= s < 2**64 for s in seeds)


# ------------------------------------------------------------------ SVD variants


def test_svd_sum_is_exact_sum(data):
    img = data.images[0]
    f = svd(img)
    assert np.array_equal(obfuscate_svd(img, Method.SVD_SUM), f.u + f.v_h)
    assert np.array_equal(obfuscate_svd(img, "svd-u"), f.u)
    assert np.array_equal(obfuscate_svd(img, "svd-vh"), f.v_h)


def test_svd_u_rows_have_unit_norm(data):
    for img in data.images:
        out = obfuscate_svd(img, Method.SVD_U)
        assert np.allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)


def test_svd_shapes_for_rectangular_images():
    img = np.random.default_rng(1).random((5, 7))
    assert obfuscate_svd(img, Method.SVD_U).shape == (5, 5)
    assert obfuscate_svd(img, Method.SVD_VH).shape == (7, 7)
    with pytest.raises(ConfigError):
        obfuscate_svd(img, Method.SVD_SUM)


def test_svd_outputs_are_unbounded_but_finite(data):
    out = obfuscate_batch(ObfuscationPolicy(Method.SVD_SUM), None, data)
    assert out.unbounded
    assert np.all(np.isfinite(out.images))
    assert out.images.min() < 0


# ------------------------------------------------------------------ permutations


def test_make_permutation_is_a_seeded_bijection():
    p = make_permutation(10, 3)
    assert sorted(p.mapping.tolist()) == list(range(10))
    assert make_permutation(10, 3).mapping.tolist() == p.mapping.tolist()
    assert any(make_permutation(10, s).mapping.tolist() != p.mapping.tolist() for s in range(4, 10))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**64 - 1))
def test_permutation_inverse_round_trips(n, seed):
    p = make_permutation(n, seed)
    c = np.arange(n, dtype=float) * 1.5
    assert np.array_equal(p.inverse().apply(p.apply(c)), c)


def test_permutation_apply_convention():
    p = Permutation([2, 0, 1])
    assert p.apply(np.array([10.0, 20.0, 30.0])).tolist() == [30.0, 10.0, 20.0]
    with pytest.raises(DomainError):
        Permutation([0, 0, 1])


# ------------------------------------------------------------------ PCA variants


def test_pca_identity_permutation_matches_plain_pca(data, basis):
    img = data.images[4]
    assert np.array_equal(obfuscate_pca(basis, img), obfuscate_pca(basis, img, Permutation.identity(8)))


def test_mean_image_is_a_fixed_point(basis):
    mean_img = basis.mean.reshape(basis.source_dims)
    perm = make_permutation(8, 5)
    assert np.allclose(obfuscate_pca(basis, mean_img, perm), mean_img, atol=1e-12)


def test_pca_sc_swaps_coefficients():
    rng = np.random.default_rng(2)
    b = fit_pca(rng.random((6, 3, 3)), 2)
    img = rng.random((3, 3))
    c = pca_project(b, img)
    out = obfuscate_pca(b, img, Permutation([1, 0]))
    assert np.allclose(pca_project(b, out), c[::-1], atol=1e-12)


def test_pca_policy_validation(data, basis):
    with pytest.raises(ConfigError):
        ObfuscationPolicy(Method.PCA)
    with pytest.raises(ConfigError):
        obfuscate_batch(ObfuscationPolicy(Method.PCA, 4), basis, data)
    with pytest.raises(ConfigError):
        obfuscate_batch(ObfuscationPolicy(Method.PCA, 8), None, data)
    with pytest.raises(ConfigError):
        ObfuscationPolicy(Method.SVD_U, master_seed=-1)


def test_policy_permutation_only_for_pca_sc():
    assert policy_permutation(ObfuscationPolicy(Method.PCA, 5)) is None
    p = policy_permutation(ObfuscationPolicy(Method.PCA_SC, 5, master_seed=9))
    assert p.mapping.tolist() == make_permutation(5, 9).mapping.tolist()


# ------------------------------------------------------------------ batches


ALL_POLICIES = [
    ObfuscationPolicy(Method.SVD_U),
    ObfuscationPolicy(Method.SVD_VH, randomize=True, master_seed=1),
    ObfuscationPolicy(Method.SVD_SUM, randomize=True, master_seed=2),
    ObfuscationPolicy(Method.PCA, 8),
    ObfuscationPolicy(Method.PCA_SC, 8, randomize=True, master_seed=3),
]


@pytest.mark.parametrize("policy", ALL_POLICIES, ids=lambda p: p.method.value)
def test_batch_is_deterministic_and_thread_independent(policy, data, basis):
    a = obfuscate_batch(policy, basis, data)
    b = obfuscate_batch(policy, basis, data)
    c = obfuscate_batch(policy, basis, data, threads=4)
    assert a.images.tobytes() == b.images.tobytes() == c.images.tobytes()
    assert np.array_equal(a.labels, data.labels)


@pytest.mark.parametrize("policy", ALL_POLICIES, ids=lambda p: p.method.value)
def test_batch_of_one_matches_single_image(policy, data, basis):
    one = data.subset([0])
    batch = obfuscate_batch(policy, basis, one)
    single = obfuscate_image(policy, basis, data.images[0], mix_seed(policy.master_seed, 0))
    assert batch.images[0].tobytes() == single.tobytes()
    # the default item seed is the one the batch uses for item 0
    assert obfuscate_image(policy, basis, data.images[0]).tobytes() == single.tobytes()


def test_randomized_batches_depend_on_master_seed(data):
    a = obfuscate_batch(ObfuscationPolicy(Method.SVD_SUM, randomize=True, master_seed=1), None, data)
    b = obfuscate_batch(ObfuscationPolicy(Method.SVD_SUM, randomize=True, master_seed=2), None, data)
    assert not np.array_equal(a.images, b.images)


def test_deterministic_pca_is_idempotent(data, basis):
    policy = ObfuscationPolicy(Method.PCA, 8)
    once = obfuscate_batch(policy, basis, data)
    twice = obfuscate_batch(policy, basis, once)
    assert np.allclose(twice.images, once.images, atol=1e-10)


def test_pca_sc_inverse_recovers_plain_pca(data, basis):
    perm = make_permutation(8, 11)
    img = data.images[2]
    scrambled = obfuscate_pca(basis, img, perm)
    restored = obfuscate_pca(basis, scrambled, perm.inverse())
    assert np.allclose(restored, obfuscate_pca(basis, img), atol=1e-10)


def test_empty_batch():
    empty = LabeledDataset(np.empty((0, 4, 6)), np.empty(0, dtype=np.int64))
    out = obfuscate_batch(ObfuscationPolicy(Method.SVD_VH), None, empty)
    assert out.images.shape == (0, 6, 6)
