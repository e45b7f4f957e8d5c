import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbreg.errors import DomainError, NumericError
from nbreg.model import (
    Dataset,
    LinearPredictor,
    NBModel,
    gradient,
    gradient_factored,
    hessian_matrix,
    hessian_quadratic_form,
    linear_predictor,
    loss,
    nb_pmf,
    nb_sample,
    standardized_residuals,
    third_derivative_form,
    v_weights,
)

from oracles import loss_oracle, pmf_oracle


def random_instance(seed, n=None, p=None, r=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(5, 51))
    p = p or int(rng.integers(1, 11))
    X = rng.standard_normal((n, p))
    beta = rng.uniform(-1.0, 1.0, p)
    r = r or float(rng.uniform(0.3, 4.0))
    mu = np.exp(np.clip(X @ beta, -20, 20))
    y = rng.poisson(np.minimum(mu * (1 + rng.uniform(0, 1, n)), 1e6))
    return Dataset(X=X, y=y), NBModel(r=r, beta=beta)


class TestDataset:
    def test_rejects_negative_counts(self):
        with pytest.raises(DomainError):
            Dataset(X=np.ones((2, 1)), y=[1, -1])

    def test_rejects_fractional_counts(self):
        with pytest.raises(DomainError):
            Dataset(X=np.ones((2, 1)), y=[1.5, 2])

    def test_rejects_nonfinite_design(self):
        with pytest.raises(DomainError):
            Dataset(X=np.array([[np.inf], [0.0]]), y=[1, 2])

    def test_standardized_flag_checked(self):
        X = np.array([[1.0], [2.0], [3.0]])
        with pytest.raises(DomainError):
            Dataset(X=X, y=[0, 1, 2], standardized=True)

    def test_standardized_flag_autodetects(self):
        col = np.array([1.0, 2.0, 3.0])
        col = (col - col.mean()) / np.sqrt(((col - col.mean()) ** 2).mean())
        data = Dataset(X=col[:, None], y=[0, 1, 2])
        assert data.standardized

    def test_integer_float_counts_accepted(self):
        data = Dataset(X=np.ones((2, 1)), y=[1.0, 4.0])
        assert data.y.dtype == np.int64


class TestNBModel:
    def test_rejects_nonpositive_r(self):
        with pytest.raises(DomainError):
            NBModel(r=0.0, beta=np.zeros(2))

    def test_rejects_nonfinite_beta(self):
        with pytest.raises(DomainError):
            NBModel(r=1.0, beta=np.array([np.nan]))


class TestLinearPredictor:
    def test_mu_matches_eta(self):
        data, model = random_instance(0)
        pred = linear_predictor(model, data)
        assert np.allclose(pred.mu, np.exp(pred.eta), rtol=1e-12)
        assert np.all(pred.mu > 0)

    def test_inconsistent_pair_rejected(self):
        with pytest.raises(DomainError):
            LinearPredictor(eta=np.zeros(2), mu=np.array([1.0, 2.0]))


class TestPmf:
    def test_zero_count_closed_forms(self):
        assert nb_pmf(0, 1, 1) == pytest.approx(0.5, rel=1e-12)
        assert nb_pmf(0, 2, 2) == pytest.approx(0.25, rel=1e-12)

    def test_against_high_precision_oracle(self):
        # frozen from the 50-digit series oracle
        assert nb_pmf(3, 0.5, 1.7) == pytest.approx(0.06873887263106328, rel=1e-12)

    @pytest.mark.parametrize("y,r,mu", [(2, 1.3, 0.4), (11, 0.25, 6.0), (0, 5.0, 9.0)])
    def test_matches_oracle_elsewhere(self, y, r, mu):
        assert nb_pmf(y, r, mu) == pytest.approx(pmf_oracle(y, r, mu), rel=1e-12)

    def test_mass_sums_to_one(self):
        total = nb_pmf(np.arange(500), 1.5, 2.0).sum()
        assert total == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("bad", [(-1, 1, 1), (0.5, 1, 1), (0, -1, 1), (0, 1, 0.0), (0, np.nan, 1)])
    def test_domain_errors(self, bad):
        with pytest.raises(DomainError):
            nb_pmf(*bad)


class TestSampler:
    def test_moments_at_r2_mu3(self):
        rng = np.random.default_rng(11)
        draws = nb_sample(2.0, 3.0, rng, size=100_000)
        assert draws.mean() == pytest.approx(3.0, abs=0.05)
        assert draws.var() == pytest.approx(7.5, abs=0.3)

    def test_poisson_limit(self):
        rng = np.random.default_rng(12)
        draws = nb_sample(1e6, 2.0, rng, size=100_000)
        assert draws.var() == pytest.approx(2.0, abs=0.1)

    def test_vector_mu(self):
        rng = np.random.default_rng(13)
        mu = np.array([0.5, 5.0])
        draws = nb_sample(1.0, mu, rng, size=(200_000, 2))
        assert np.allclose(draws.mean(axis=0), mu, atol=0.06)

    def test_all_counts_nonnegative_integers(self):
        rng = np.random.default_rng(14)
        draws = nb_sample(0.3, 1.2, rng, size=1000)
        assert np.issubdtype(draws.dtype, np.integer)
        assert np.all(draws >= 0)


class TestLoss:
    def test_closed_form_at_zero_beta(self):
        # L(0) = log(r + 1) * (mean(y) + r)
        data = Dataset(X=np.array([[1.0], [-1.0]]), y=[0, 2])
        assert loss(NBModel(1.0, np.zeros(1)), data) == pytest.approx(
            2 * np.log(2), rel=1e-12
        )
        data3 = Dataset(X=np.ones((3, 1)), y=[1, 1, 1])
        assert loss(NBModel(2.0, np.zeros(1)), data3) == pytest.approx(
            3 * np.log(3), rel=1e-12
        )

    def test_fixed_instance_against_extended_precision_oracle(self):
        X = np.array(
            [
                [0.483983, -0.053693, 0.466786],
                [0.202275, -0.688645, -1.477785],
                [1.19257, -0.148911, -1.615774],
                [-1.209327, 0.149468, 0.57923],
                [-0.302123, 1.862099, -0.111923],
            ]
        )
        beta = np.array([0.237299, 0.022234, -0.790928])
        y = np.array([2, 0, 3, 2, 3])
        data = Dataset(X=X, y=y)
        # frozen from the term-by-term 50-digit oracle
        assert loss(NBModel(0.7, beta), data) == pytest.approx(
            1.5944662989240486, rel=1e-13
        )

    @pytest.mark.parametrize("seed", range(5))
    def test_random_instances_against_oracle(self, seed):
        data, model = random_instance(seed, n=8, p=3)
        expected = loss_oracle(data.X, data.y, model.beta, model.r)
        assert loss(model, data) == pytest.approx(expected, rel=1e-12)

    def test_overflow_safe_at_extreme_eta(self):
        X = np.array([[700.0], [-700.0]])
        data = Dataset(X=X, y=[3, 0])
        model = NBModel(1.5, np.ones(1))
        assert np.isfinite(loss(model, data))
        assert np.all(np.isfinite(gradient(model, data)))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_intermediate_names_observation(self):
        data = Dataset(X=np.array([[2.0], [0.0]]), y=[1, 1])
        with pytest.raises(NumericError, match="observation 0"):
            loss(NBModel(1.0, np.array([1e308])), data)


class TestGradient:
    def test_zero_residuals_give_zero_gradient(self):
        data = Dataset(X=np.array([[1.0, 0.5], [-1.0, 2.0], [0.3, -0.7]]), y=[1, 1, 1])
        g = gradient(NBModel(2.0, np.zeros(2)), data)
        assert np.allclose(g, 0.0, atol=1e-15)

    def test_single_observation_closed_form(self):
        data = Dataset(X=np.array([[1.0]]), y=[0])
        g = gradient(NBModel(1.0, np.zeros(1)), data)
        assert g[0] == pytest.approx(0.5, rel=1e-14)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_central_differences(self, seed):
        data, model = random_instance(seed)
        g = gradient(model, data)
        h = 1e-6
        fd = np.empty_like(g)
        for j in range(data.p):
            step = np.zeros(data.p)
            step[j] = h
            fd[j] = (
                loss(NBModel(model.r, model.beta + step), data)
                - loss(NBModel(model.r, model.beta - step), data)
            ) / (2 * h)
        assert np.abs(fd - g).max() <= 1e-5 * max(np.abs(g).max(), 1e-3)

    @pytest.mark.parametrize("seed", range(10))
    def test_factored_equals_simplified(self, seed):
        data, model = random_instance(seed)
        g1 = gradient(model, data)
        g2 = gradient_factored(model, data)
        assert np.abs(g1 - g2).max() <= 1e-12 * max(1.0, np.abs(g1).max())


class TestHessian:
    def test_zero_direction(self):
        data, model = random_instance(1)
        assert hessian_quadratic_form(model, data, np.zeros(data.p)) == 0.0

    def test_single_observation_closed_form(self):
        data = Dataset(X=np.array([[1.0]]), y=[1])
        q = hessian_quadratic_form(NBModel(1.0, np.zeros(1)), data, np.ones(1))
        assert q == pytest.approx(0.5, rel=1e-14)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_second_differences(self, seed):
        data, model = random_instance(seed)
        rng = np.random.default_rng(seed + 1000)
        v = rng.standard_normal(data.p)
        q = hessian_quadratic_form(model, data, v)
        h = 1e-4
        fd = (
            loss(NBModel(model.r, model.beta + h * v), data)
            - 2 * loss(model, data)
            + loss(NBModel(model.r, model.beta - h * v), data)
        ) / (h * h)
        assert fd == pytest.approx(q, rel=1e-4, abs=1e-8)

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_nonnegative_everywhere(self, seed):
        data, model = random_instance(seed)
        rng = np.random.default_rng(seed + 1)
        v = rng.standard_normal(data.p) * rng.uniform(0.1, 10)
        assert hessian_quadratic_form(model, data, v) >= 0.0

    def test_matrix_matches_quadratic_form(self):
        data, model = random_instance(5)
        H = hessian_matrix(model, data)
        rng = np.random.default_rng(2)
        v = rng.standard_normal(data.p)
        assert v @ H @ v == pytest.approx(
            hessian_quadratic_form(model, data, v), rel=1e-12
        )


class TestThirdDerivative:
    def test_linear_in_u(self):
        data, model = random_instance(3)
        v = np.ones(data.p)
        assert third_derivative_form(model, data, np.zeros(data.p), v) == 0.0

    def test_vanishes_when_mu_equals_r(self):
        # constant covariate column, beta chosen so exp(x beta) = r exactly
        r = 2.5
        X = np.full((4, 1), 2.0)
        data = Dataset(X=X, y=[1, 2, 0, 4])
        model = NBModel(r, np.array([np.log(r) / 2.0]))
        assert third_derivative_form(model, data, np.ones(1), np.ones(1)) == pytest.approx(
            0.0, abs=1e-12
        )

    @pytest.mark.parametrize("seed", range(8))
    def test_bounded_by_hessian_form(self, seed):
        data, model = random_instance(seed)
        rng = np.random.default_rng(seed + 77)
        u = rng.standard_normal(data.p)
        v = rng.standard_normal(data.p)
        lhs = abs(third_derivative_form(model, data, u, v))
        big_r = np.abs(data.X).max()
        rhs = big_r * np.abs(u).sum() * hessian_quadratic_form(model, data, v)
        assert lhs <= rhs * (1 + 1e-12)


class TestResidualsAndWeights:
    def test_zero_at_exact_mean(self):
        data = Dataset(X=np.zeros((3, 2)), y=[1, 1, 1])
        eps = standardized_residuals(NBModel(1.0, np.zeros(2)), data)
        assert np.allclose(eps, 0.0)

    def test_monte_carlo_moments(self):
        rng = np.random.default_rng(21)
        x = np.array([[0.4], [-1.0], [0.2]])
        beta = np.array([0.6])
        model = NBModel(1.0, beta)
        mu = np.exp(x @ beta)
        draws = nb_sample(1.0, mu, rng, size=(40_000, 3))
        sd = np.sqrt(mu * (1.0 + mu) / 1.0)
        eps = ((draws - mu) / sd).ravel()
        assert eps.mean() == pytest.approx(0.0, abs=0.02)
        assert eps.var() == pytest.approx(1.0, abs=0.03)

    def test_v_weights_values(self):
        data = Dataset(X=np.array([[1.0]]), y=[0])
        v, v_n = v_weights(NBModel(1.0, np.zeros(1)), data)
        assert v[0] == pytest.approx(1 / np.sqrt(2), rel=1e-12)
        assert v_n == pytest.approx(1 / np.sqrt(2), rel=1e-12)
        # mu = 4, r = 4 -> v = sqrt(2)
        data4 = Dataset(X=np.array([[1.0]]), y=[0])
        v4, _ = v_weights(NBModel(4.0, np.array([np.log(4.0)])), data4)
        assert v4[0] == pytest.approx(np.sqrt(2), rel=1e-12)

    def test_v_weights_vanish_for_tiny_mu(self):
        data = Dataset(X=np.array([[1.0]]), y=[0])
        v, _ = v_weights(NBModel(1.0, np.array([-40.0])), data)
        assert v[0] < 1e-8

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_v_weights_bounded_by_sqrt_r(self, seed):
        data, model = random_instance(seed)
        v, v_n = v_weights(model, data)
        assert np.all(v > 0)
        assert v_n <= np.sqrt(model.r) * (1 + 1e-12)
        assert v_n == np.max(v)
