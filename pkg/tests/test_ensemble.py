import math

import numpy as np
import pytest

from gmu import errors
from gmu.ensemble import (
    GmmEnsemble,
    aleatoric_entropy,
    build_posterior,
    ddu_epistemic_score,
    epistemic_entropy,
    mean_responsibilities,
    sample_ensemble,
)
from gmu.gmm import FeatureSet, classify, fit_gmm, mixture_log_density, model_from_params, responsibilities


def sym_model(sep=1.0, n=1000, d=2):
    mu = np.zeros(d)
    mu[0] = sep
    return model_from_params([-mu, mu], [np.eye(d)] * 2, [0.5, 0.5], counts=[n, n])


def test_posterior_formula():
    model = model_from_params([[0.0, 0.0]], [np.eye(2)], [1.0], counts=[1000])
    post = build_posterior(model)
    cp = post.classes[0]
    np.testing.assert_allclose(cp.mean_cov_factor.matrix(), np.eye(2) / 1000, rtol=1e-12)
    assert cp.iw_dof == 1000
    np.testing.assert_allclose(cp.iw_scale, 997 * np.eye(2))
    np.testing.assert_allclose(cp.iw_scale / (cp.iw_dof - 3), model.components[0].sigma, rtol=1e-9)


def test_posterior_insufficient_support():
    model = model_from_params([[0.0, 0.0]], [np.eye(2)], [1.0], counts=[4])
    with pytest.raises(errors.InsufficientSupport, match="class 0"):
        build_posterior(model)
    named = model_from_params([[0.0, 0.0]], [np.eye(2)], [1.0], counts=[4], class_names=["road"])
    with pytest.raises(errors.InsufficientSupport, match="road"):
        build_posterior(named)


def test_posterior_mean_cov_scales_inverse_with_support():
    sigma = np.array([[2.0, 0.3], [0.3, 1.0]])
    a = build_posterior(model_from_params([[0, 0]], [sigma], [1.0], counts=[100]))
    b = build_posterior(model_from_params([[0, 0]], [sigma], [1.0], counts=[200]))
    np.testing.assert_allclose(b.classes[0].mean_cov_factor.matrix(), a.classes[0].mean_cov_factor.matrix() / 2,
                               rtol=1e-12)


def test_sample_ensemble_deterministic():
    post = build_posterior(sym_model())
    a = sample_ensemble(post, 5, seed=11)
    b = sample_ensemble(post, 5, seed=11)
    for ma, mb in zip(a.models, b.models):
        assert np.array_equal(ma.means, mb.means)
        assert np.array_equal(ma.covariances, mb.covariances)
    c = sample_ensemble(post, 5, seed=12)
    assert not np.array_equal(a.models[0].means, c.models[0].means)


def test_member_depends_only_on_seed_and_index():
    post = build_posterior(sym_model())
    short = sample_ensemble(post, 3, seed=4)
    long = sample_ensemble(post, 8, seed=4)
    for k in range(3):
        assert np.array_equal(short.models[k].covariances, long.models[k].covariances)


def test_members_share_priors_and_are_spd():
    post = build_posterior(sym_model(d=4, n=50))
    ens = sample_ensemble(post, 20, seed=0)
    for m in ens.models:
        assert np.array_equal(m.log_pi, post.log_pi)
        assert m.d == 4 and m.num_classes == 2
        for c in m.components:
            assert np.all(np.diag(c.factor.lower) > 0)


def test_concentrated_member_matches_point_estimate():
    model = sym_model(sep=2.0, n=10**9)
    ens = sample_ensemble(build_posterior(model), 1, seed=3)
    rng = np.random.default_rng(0)
    pts = np.concatenate([rng.normal(size=(500, 2)) + [2, 0], rng.normal(size=(500, 2)) - [2, 0]])
    agree = np.mean(classify(ens.models[0], pts) == classify(model, pts))
    assert agree >= 0.99


def test_sampled_means_clt_bound():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(300, 3)) @ np.diag([2.0, 1.0, 0.5])
    model = fit_gmm(FeatureSet(x, np.zeros(300, dtype=int)), 1)
    post = build_posterior(model)
    ens = sample_ensemble(post, 64, seed=2)
    avg = np.mean([m.means[0] for m in ens.models], axis=0)
    sd = np.sqrt(np.max(np.diag(post.classes[0].mean_cov_factor.matrix())) / 64)
    assert np.all(np.abs(avg - model.means[0]) <= 3 * sd)


def _ensemble_of(models):
    return GmmEnsemble(models=tuple(models), seed=0)


def test_epistemic_entropy_agreement_and_disagreement():
    a = model_from_params([[0.0], [1.0]], [[[1.0]], [[1.0]]], [0.5, 0.5])
    b = model_from_params([[1.0], [0.0]], [[[1.0]], [[1.0]]], [0.5, 0.5])
    h, f = epistemic_entropy(_ensemble_of([a, a, a]), [0.1])
    assert h == 0.0 and list(f) == [1.0, 0.0]
    h, f = epistemic_entropy(_ensemble_of([a, b]), [0.1])
    assert h == pytest.approx(math.log(2)) and list(f) == [0.5, 0.5]


def test_mean_responsibilities_single_and_identical_members():
    model = sym_model()
    x = np.array([0.3, -0.7])
    np.testing.assert_allclose(mean_responsibilities(_ensemble_of([model]), x), responsibilities(model, x))
    np.testing.assert_allclose(mean_responsibilities(_ensemble_of([model] * 4), x), responsibilities(model, x),
                               rtol=1e-14)


def test_aleatoric_cases():
    ens = sample_ensemble(build_posterior(sym_model(sep=6.0)), 20, seed=1)
    assert aleatoric_entropy(ens, [6.0, 0.0]) < 0.01
    four = model_from_params(np.zeros((4, 2)), [np.eye(2)] * 4, [0.25] * 4)
    assert aleatoric_entropy(_ensemble_of([four]), [1.0, 1.0]) == pytest.approx(math.log(4))


def test_symmetric_midpoint_t200():
    ens = sample_ensemble(build_posterior(sym_model(sep=1.0, n=1000)), 200, seed=7)
    h, f = epistemic_entropy(ens, [0.0, 0.0])
    assert abs(f[0] - 0.5) <= 0.1 and abs(f[1] - 0.5) <= 0.1
    assert h >= 0.6
    r = mean_responsibilities(ens, [0.0, 0.0])
    np.testing.assert_allclose(r, [0.5, 0.5], atol=0.05)
    assert aleatoric_entropy(ens, [0.0, 0.0]) == pytest.approx(math.log(2), abs=0.05)


def test_uncertainties_bounded_and_frequencies_exact():
    model = model_from_params(np.eye(3) * 1.5, [np.eye(3)] * 3, [0.2, 0.3, 0.5], counts=[40, 60, 100])
    ens = sample_ensemble(build_posterior(model), 17, seed=5)
    x = np.random.default_rng(2).normal(size=(200, 3)) * 2
    h_e, f = epistemic_entropy(ens, x)
    h_a = aleatoric_entropy(ens, x)
    assert np.all(h_e <= math.log(3) + 1e-12) and np.all(h_a <= math.log(3) + 1e-12)
    counts = f * 17
    np.testing.assert_allclose(counts, np.round(counts), atol=1e-9)
    np.testing.assert_allclose(f.sum(axis=1), 1.0, atol=1e-12)


def test_epistemic_vanishes_far_inside_a_class():
    ens = sample_ensemble(build_posterior(sym_model(sep=3.0, n=5000)), 300, seed=9)
    h, f = epistemic_entropy(ens, [4.0, 0.0])
    assert h == 0.0 and f[1] == 1.0


def test_ddu_score_examples():
    single = model_from_params([[0.0]], [[[1.0]]], [1.0])
    assert ddu_epistemic_score(single, [0.0]) == pytest.approx(0.918938533204673, abs=1e-12)
    assert ddu_epistemic_score(single, [3.0]) == pytest.approx(5.418938533204673, abs=1e-12)
    model = sym_model(sep=4.0)
    x = np.array([1.2, 0.4])
    assert ddu_epistemic_score(model, x) == -mixture_log_density(model, x)
    mode = ddu_epistemic_score(model, [4.0, 0.0])
    far = ddu_epistemic_score(model, [0.0, 5.0 * 3])
    assert mode < far


def test_ddu_score_decreases_toward_mean():
    model = model_from_params([[1.0, -1.0]], [np.array([[2.0, 0.4], [0.4, 1.0]])], [1.0])
    direction = np.array([0.6, 0.8])
    scores = [ddu_epistemic_score(model, np.array([1.0, -1.0]) + s * direction) for s in np.linspace(10, 0, 30)]
    assert all(b < a for a, b in zip(scores, scores[1:]))
