import math

import numpy as np
import pytest

from fairgap.synthgen import (
    GenerationError,
    Scenario,
    SyntheticConfig,
    UtilityWeights,
    cov_ax_to_cov_zx,
    cov_zx_to_cov_ax,
    draw_utility_weights,
    generate_dataset,
    generate_raw,
    sample_base,
    sample_outcome,
    systematic_utility,
    threshold_protected,
)

N = 100_000


def _phi0():
    # standard normal density at 0, written independently of the package
    return 1.0 / math.sqrt(2.0 * math.pi)


@pytest.fixture(scope="module")
def linear_raw():
    return generate_raw(SyntheticConfig(cov_ax=0.5, n_predictors=5, sample_size=N, seed=3))


def test_config_validation():
    with pytest.raises(ValueError):
        SyntheticConfig(cov_ax=1.2)
    with pytest.raises(ValueError):
        SyntheticConfig(sample_size=0)
    with pytest.raises(ValueError):
        SyntheticConfig(n_predictors=-1)
    assert SyntheticConfig(scenario="quadratic").scenario is Scenario.QUADRATIC


@pytest.mark.parametrize("cov_ax", [0.0, 0.5])
def test_sample_base_correlation(cov_ax):
    a, x, k = sample_base(SyntheticConfig(cov_ax=cov_ax, sample_size=N), np.random.default_rng(1))
    assert abs(np.corrcoef(a, x)[0, 1] - cov_ax) <= 0.02
    for col in [a, x, *k.T]:
        assert abs(col.mean()) <= 0.02
    assert abs(a.std() - 1) < 0.02 and abs(x.std() - 1) < 0.02


def test_sample_base_cov_one_is_identity():
    a, x, _ = sample_base(SyntheticConfig(cov_ax=1.0, sample_size=100), np.random.default_rng(0))
    np.testing.assert_allclose(a, x)


@pytest.mark.parametrize("a, expected", [(0.7, 1), (-0.3, 0), (0.0, 1)])
def test_threshold_protected(a, expected):
    assert threshold_protected(a) == expected


def test_threshold_protected_vector():
    np.testing.assert_array_equal(threshold_protected(np.array([-1e-12, 0.0, 2.0])), [0, 1, 1])


def test_systematic_utility_examples():
    lin0 = UtilityWeights(alpha=0.0, beta_x1=1.0, beta_k1=np.array([0.5, -0.5, 0.5]))
    assert systematic_utility(0.0, np.zeros(3), lin0, "linear") == 0.0

    quad = UtilityWeights(alpha=-0.5, beta_x1=1.0, beta_x2=0.5, beta_k1=np.zeros(0), beta_k2=np.zeros(0))
    assert systematic_utility(1.0, np.zeros(0), quad, "quadratic") == pytest.approx(1.0)

    lin1 = UtilityWeights(alpha=0.0, beta_x1=1.0, beta_k1=np.array([-0.5]))
    assert systematic_utility(2.0, np.array([1.0]), lin1, "linear") == pytest.approx(1.5)


def test_systematic_utility_quadratic_terms():
    w = UtilityWeights(alpha=-0.5, beta_x1=1.0, beta_x2=0.5, beta_k1=np.array([0.5, -0.5]), beta_k2=np.array([-0.5, 0.5]))
    # -0.5 + 2 + 0.5*4 + (0.5*1 - 0.5*3) + (-0.5*1 + 0.5*9)
    assert systematic_utility(2.0, np.array([1.0, 3.0]), w, "quadratic") == pytest.approx(6.5)


def test_systematic_utility_dimension_mismatch():
    w = UtilityWeights(alpha=0.0, beta_x1=1.0, beta_k1=np.array([0.5]))
    with pytest.raises(ValueError):
        systematic_utility(1.0, np.zeros(2), w, "linear")


def test_utility_weight_signs():
    rng = np.random.default_rng(0)
    lin = draw_utility_weights("linear", 50, rng)
    assert lin.alpha == 0 and lin.beta_x1 == 1
    assert set(np.unique(lin.beta_k1)) <= {-0.5, 0.5}
    quad = draw_utility_weights("quadratic", 50, rng)
    assert (quad.alpha, quad.beta_x1, quad.beta_x2) == (-0.5, 1.0, 0.5)
    assert set(np.unique(quad.beta_k2)) <= {-0.5, 0.5} and len(quad.beta_k2) == 50


def test_sample_outcome_rates():
    rng = np.random.default_rng(5)
    assert abs(sample_outcome(np.zeros(N), rng).mean() - 0.5) < 0.01
    assert sample_outcome(np.full(N, 50.0), rng).mean() > 0.999
    expected = 1.0 / (1.0 + math.exp(-1.0))
    assert expected == pytest.approx(0.7311, abs=1e-4)
    assert abs(sample_outcome(np.ones(N), rng).mean() - expected) < 0.01
    assert sample_outcome(0.0, rng) in (0, 1)


def test_generate_dataset_balanced_and_layout():
    ds = generate_dataset(SyntheticConfig(cov_ax=0.0, n_predictors=5, sample_size=N, seed=9))
    share = min(ds.labels.mean(), 1 - ds.labels.mean())
    assert 0.40 <= share <= 0.50
    assert ds.feature_names == ("z", "x", "k1", "k2", "k3", "k4", "k5")
    np.testing.assert_array_equal(ds.features[:, 0], ds.protected)


def test_generate_dataset_deterministic():
    cfg = SyntheticConfig(cov_ax=0.25, n_predictors=3, sample_size=5000, scenario="quadratic", seed=42)
    a, b = generate_dataset(cfg), generate_dataset(cfg)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_generate_dataset_cov_zx_large_sample():
    ds, meta = generate_dataset(SyntheticConfig(cov_ax=0.5, n_predictors=5, sample_size=1_000_000, seed=2), return_meta=True)
    z, x = ds.features[:, 0], ds.features[:, 1]
    cov = np.mean((z - z.mean()) * (x - x.mean()))
    assert abs(cov - 0.2) <= 0.01
    assert abs(cov - 0.5 * _phi0()) <= 0.01
    assert meta["cov_zx_empirical"] == pytest.approx(cov, abs=1e-5)


def test_rejection_loop_exhausts():
    # n=1 leaves the minority share at 0, so every draw is rejected
    with pytest.raises(GenerationError, match="last minority-class share"):
        generate_dataset(SyntheticConfig(sample_size=1, max_rejections=3))


def test_rejection_uses_incremented_seed():
    cfg = SyntheticConfig(sample_size=40, n_predictors=1, seed=100, max_rejections=100)
    _, meta = generate_dataset(cfg, return_meta=True)
    raw = generate_raw(cfg, seed=meta["effective_seed"])
    assert meta["effective_seed"] == 100 + meta["rejections"]
    share = min(raw["y"].mean(), 1 - raw["y"].mean())
    assert 0.4 <= share <= 0.5


@pytest.mark.parametrize("cov_ax", [0.0, 0.25, 0.5, 0.75, 1.0])
def test_moment_invariants(cov_ax):
    raw = generate_raw(SyntheticConfig(cov_ax=cov_ax, n_predictors=5, sample_size=N, seed=17))
    z, x, k = raw["z"], raw["x"], raw["k"]
    assert 0.48 <= z.mean() <= 0.52
    cov = np.mean((z - z.mean()) * (x - x.mean()))
    assert abs(cov - cov_ax * _phi0()) <= 0.01
    for j in range(k.shape[1]):
        assert abs(np.corrcoef(z, k[:, j])[0, 1]) < 0.02


def test_mean_utility_near_zero_linear():
    raw = generate_raw(SyntheticConfig(cov_ax=0.5, n_predictors=5, sample_size=N, scenario="linear", seed=8))
    assert abs(raw["v"].mean()) < 0.05


def test_mean_utility_quadratic_closed_form():
    # E[V] = alpha + beta_x2 E[x^2] + sum(beta_k2) E[k^2] = sum(beta_k2): zero only
    # on average over the sign draws, so imbalanced datasets get rejected.
    raw = generate_raw(SyntheticConfig(cov_ax=0.5, n_predictors=5, sample_size=N, scenario="quadratic", seed=8))
    w = raw["weights"]
    expected = w.alpha + w.beta_x2 + w.beta_k2.sum()
    assert abs(raw["v"].mean() - expected) < 0.05


def test_cov_mapping_round_trip():
    for target in (0.0, 0.1, 0.2, 0.3):
        assert cov_ax_to_cov_zx(cov_zx_to_cov_ax(target)) == pytest.approx(target)
    assert cov_zx_to_cov_ax(0.4) == 1.0
    assert cov_ax_to_cov_zx(1.0) == pytest.approx(0.3989, abs=1e-4)
    with pytest.raises(ValueError):
        cov_zx_to_cov_ax(0.45)
