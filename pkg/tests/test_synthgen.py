import numpy as np
import pytest
from hypothesis import given, strategies as st

from tupleinfonce.synthgen import (
    AugmentParams,
    ModalitySpec,
    SceneSpec,
    SingularCovarianceError,
    TupleBatch,
    analytic_pair_mi,
    analytic_view_mi,
    augment_tuple,
    empirical_mi_estimate,
    make_validation_set,
    sample_batch,
    strong_weak_spec,
    two_view_spec,
)


def pair_spec(s1=1.0, s2=1.0, c=1.0):
    return SceneSpec(1, (ModalitySpec(np.array([[c]]), s1), ModalitySpec(np.array([[1.0]]), s2)), 0)


def test_noiseless_modalities_are_exact_projections(rng):
    spec = SceneSpec(2, (ModalitySpec(np.array([[1.0, 2.0]]), 0.0), ModalitySpec(np.eye(2), 0.0)), 0)
    b = sample_batch(spec, 50, rng)
    assert np.allclose(b.modalities[0][:, 0], b.modalities[1] @ np.array([1.0, 2.0]), atol=1e-12)


def test_same_seed_same_batch():
    spec = strong_weak_spec()
    a = sample_batch(spec, 20, np.random.default_rng(4))
    b = sample_batch(spec, 20, np.random.default_rng(4))
    assert a.equals(b)
    assert len(set(a.scene_ids.tolist())) == 20


def test_sample_mean_clt():
    spec = SceneSpec(1, (ModalitySpec(np.ones((1, 1)), 1.0),), 0)
    v = sample_batch(spec, 10_000, np.random.default_rng(0)).modalities[0]
    assert abs(v.mean()) < 3 / np.sqrt(10_000) * np.sqrt(2)


def test_sample_covariance_matches_closed_form():
    spec = strong_weak_spec()
    b = sample_batch(spec, 200_000, np.random.default_rng(1))
    X = np.concatenate(b.modalities, axis=1)
    assert np.allclose(np.cov(X.T), spec.covariance(), atol=0.03)


def test_pair_mi_closed_form_value():
    # rho = 1/2 for two unit-noise views of one unit latent
    assert analytic_pair_mi(pair_spec(), 0) == pytest.approx(-0.5 * np.log(1 - 0.25), abs=1e-12)


def test_pair_mi_against_binned_estimator():
    spec = pair_spec()
    b = sample_batch(spec, 1_000_000, np.random.default_rng(2))
    est = empirical_mi_estimate(b.modalities[0], b.modalities[1], bins=32)
    assert abs(est - analytic_pair_mi(spec, 0)) < 0.05


def test_independent_modalities_have_zero_mi():
    spec = SceneSpec(2, (ModalitySpec(np.array([[1.0, 0.0]]), 1.0), ModalitySpec(np.array([[0.0, 1.0]]), 1.0)), 0)
    assert analytic_pair_mi(spec, 0) == pytest.approx(0.0, abs=1e-12)


@given(st.floats(0.01, 100.0))
def test_pair_mi_invariant_to_scaling(c):
    base = analytic_pair_mi(pair_spec(1.0, 1.0, 1.0), 0)
    # scaling mixing and noise together rescales the modality
    assert analytic_pair_mi(pair_spec(c, 1.0, c), 0) == pytest.approx(base, abs=1e-9)


def test_pair_mi_nonincreasing_in_noise():
    values = [analytic_pair_mi(pair_spec(s, 1.0), 0) for s in np.linspace(0.1, 5, 40)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_singular_covariance_error_mentions_jitter():
    spec = pair_spec(0.0, 0.0)
    with pytest.raises(SingularCovarianceError, match="jitter"):
        analytic_pair_mi(spec, 0)


def test_view_mi_closed_form():
    spec = two_view_spec((1.0,), dims=(1,))
    # var(v) = 2, noise var 1 -> I = 0.5 ln(3)
    assert analytic_view_mi(spec, [1.0]) == pytest.approx(0.5 * np.log(3.0), abs=1e-12)


def test_binned_estimator_examples():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal(1_000_000), rng.standard_normal(1_000_000)
    assert empirical_mi_estimate(a, b) < 0.02
    c = 0.9 * a + np.sqrt(1 - 0.81) * b
    assert abs(empirical_mi_estimate(a, c) - (-0.5 * np.log(1 - 0.81))) < 0.05
    assert empirical_mi_estimate(a[:32 * 320], a[:32 * 320]) == pytest.approx(np.log(32), abs=1e-9)
    with pytest.raises(ValueError):
        empirical_mi_estimate(a[:100], b[:100])


def _aug(K, noise=0.0, mask=0.0, rot=0.0, role="train"):
    t = AugmentParams.zeros(K, max_noise=1.0, max_mask=1.0, max_rotation=180.0, role=role)
    return t.with_vector(np.r_[np.full(K, noise), np.full(K, mask), np.full(K, rot)])


def test_identity_and_full_mask(rng):
    b = sample_batch(strong_weak_spec(), 30, rng)
    assert augment_tuple(b, _aug(2), rng).equals(b)
    masked = augment_tuple(b, _aug(2, mask=1.0), rng)
    assert all(np.all(m == 0) for m in masked.modalities)
    assert np.array_equal(masked.scene_ids, b.scene_ids)


def test_noise_std():
    spec = SceneSpec(1, (ModalitySpec(np.zeros((1, 1)), 0.0),), 0)
    b = sample_batch(spec, 100_000, np.random.default_rng(0))
    out = augment_tuple(b, AugmentParams.zeros(1, max_noise=1.0).with_vector([0.5, 0, 0]), np.random.default_rng(1))
    assert 0.49 <= out.modalities[0].std() <= 0.51


@given(st.floats(0, 180))
def test_rotation_preserves_pair_norms(angle):
    b = sample_batch(strong_weak_spec(), 8, np.random.default_rng(0))
    out = augment_tuple(b, _aug(2, rot=angle), np.random.default_rng(0))
    for v, w in zip(b.modalities, out.modalities):
        assert np.allclose(np.hypot(v[:, 0::2], v[:, 1::2]), np.hypot(w[:, 0::2], w[:, 1::2]), atol=1e-12)


def test_out_of_bounds_augmentation_rejected():
    t = AugmentParams.zeros(2, max_noise=1.0)
    with pytest.raises(ValueError, match="noise"):
        t.with_vector([2.0, 0, 0, 0, 0, 0])
    with pytest.raises(ValueError):
        t.with_vector([-0.1, 0, 0, 0, 0, 0])


def test_train_and_validation_roles_are_the_same_operator():
    b = sample_batch(strong_weak_spec(), 16, np.random.default_rng(0))
    x = augment_tuple(b, _aug(2, 0.3, 0.2, 15.0, "train"), np.random.default_rng(5))
    y = augment_tuple(b, _aug(2, 0.3, 0.2, 15.0, "validation"), np.random.default_rng(5))
    assert x.equals(y)


def test_absent_modalities_stay_zero():
    b = sample_batch(strong_weak_spec(), 5, np.random.default_rng(0)).with_mask([True, False])
    out = augment_tuple(b, _aug(2, noise=0.5), np.random.default_rng(0))
    assert np.all(out.modalities[1] == 0) and not out.present[:, 1].any()


def test_validation_set_alignment_and_common_noise():
    spec = strong_weak_spec()
    val = make_validation_set(spec, 32, _aug(2, role="validation"), seed=7)
    a = val.augmented(_aug(2, noise=0.2, role="validation"))
    b = val.augmented(_aug(2, noise=0.4, role="validation"))
    # common random numbers: the noise draws scale together
    assert np.allclose(b.modalities[0] - val.base.modalities[0], 2 * (a.modalities[0] - val.base.modalities[0]))
    assert np.array_equal(a.scene_ids, val.base.scene_ids)
    train = sample_batch(spec, 32, np.random.default_rng(7))
    assert not np.allclose(train.modalities[0], val.base.modalities[0])


def test_scene_roundtrip_and_tuple_access():
    spec = strong_weak_spec(n_weak=2)
    assert SceneSpec.from_dict(spec.to_dict()) == spec
    b = sample_batch(spec, 3, np.random.default_rng(0))
    t = b[1]
    assert len(t.modalities) == 3 and t.scene_id == 1 and all(t.present)
    assert b.only(0).present[:, 1:].sum() == 0 and b.without(0).present[:, 0].sum() == 0
    assert isinstance(TupleBatch.concat([b, b]), TupleBatch) and len(TupleBatch.concat([b, b])) == 6


def test_strong_weak_shape():
    spec = strong_weak_spec()
    assert spec.dims == (12, 4)
    assert spec.modalities[0].noise_std < spec.modalities[1].noise_std
