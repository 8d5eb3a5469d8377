import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rectiflow.couplings import (
    Both,
    GaussianJointCoupling,
    GmmJointCoupling,
    ParticleCoupling,
    Scale1,
    Shift1,
    affine_transform,
    interp_cov,
)
from rectiflow.distributions import GaussianDist, GmmDist
from rectiflow.errors import (
    DomainError,
    EvaluationError,
    InvalidArgumentError,
    OutOfSupportError,
    SingularCovarianceError,
    SingularTimeError,
)
from rectiflow.velocity import (
    affine_wrap,
    constant_field,
    gaussian_field,
    gaussian_velocity,
    gmm_velocity,
    gmm_weights,
    jacobian_symmetry_check,
    kernel_field,
    kernel_velocity,
    linear_field,
    nadaraya_watson,
    scenario_field,
    scenario_velocity,
)
from strategies import gaussian_couplings, seeds

I2 = np.eye(2)
Z2 = np.zeros(2)
ANTIPODAL = GaussianJointCoupling(Z2, Z2, I2, I2, -I2)
INDEPENDENT = GaussianJointCoupling.independent(GaussianDist.standard(2), GaussianDist.standard(2))


def _independent_gmm(seed, K=3, d=2):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(K))
    w[-1] = 1.0 - w[:-1].sum()
    comps = []
    for _ in range(K):
        a = rng.normal(size=(d, d))
        comps.append(GaussianDist(rng.normal(scale=2.0, size=d), a @ a.T / d + 0.2 * np.eye(d)))
    return GmmJointCoupling.independent(GaussianDist.standard(d), GmmDist(w, tuple(comps)))


class TestVelocityField:
    def test_singular_time_is_refused(self):
        v = gaussian_field(INDEPENDENT)
        with pytest.raises(SingularTimeError):
            v(1.0, np.zeros(2))

    def test_outside_domain(self):
        with pytest.raises(DomainError):
            constant_field([1.0, 0.0])(1.5, np.zeros(2))

    def test_dimension_check(self):
        with pytest.raises(InvalidArgumentError):
            constant_field([1.0, 0.0])(0.5, np.zeros((3, 3)))

    def test_single_point_and_batch(self):
        v = constant_field([1.0, 2.0])
        assert v(0.3, [0.0, 0.0]).shape == (2,)
        assert v(0.3, np.zeros((5, 2))).shape == (5, 2)


class TestGaussianVelocity:
    def test_antipodal_quarter(self):
        np.testing.assert_allclose(gaussian_velocity(ANTIPODAL, 0.25, [1.0, 0.0]), [-4.0, 0.0],
                                   atol=1e-12)

    def test_independent_at_zero(self):
        x = np.array([0.3, -1.7])
        np.testing.assert_allclose(gaussian_velocity(INDEPENDENT, 0.0, x), -x, atol=1e-15)

    @pytest.mark.parametrize("t", [0.0, 0.3, 0.9])
    def test_identity_coupling(self, t):
        g = GaussianJointCoupling(Z2, Z2, I2, I2, I2)
        np.testing.assert_allclose(gaussian_velocity(g, t, [1.0, 2.0]), 0.0, atol=1e-12)

    def test_t_one(self):
        with pytest.raises(SingularTimeError):
            gaussian_velocity(INDEPENDENT, 1.0, [0.0, 0.0])

    def test_antipodal_midpoint_is_singular(self):
        with pytest.raises(SingularCovarianceError):
            gaussian_velocity(ANTIPODAL, 0.5, [1.0, 0.0])

    def test_antipodal_near_midpoint_is_singular(self):
        with pytest.raises(SingularCovarianceError):
            gaussian_velocity(ANTIPODAL, 0.5 + 1e-7, [1.0, 0.0])

    def test_antipodal_matches_formula(self):
        for t in (0.1, 0.4, 0.6, 0.95):
            x = np.array([0.7, -0.2])
            np.testing.assert_allclose(gaussian_velocity(ANTIPODAL, t, x), -2 * x / (1 - 2 * t),
                                       rtol=1e-10)

    @given(gaussian_couplings(), st.floats(0.0, 0.99), seeds)
    def test_linear_in_x_up_to_offset(self, g, t, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(2, g.dim))
        v0 = gaussian_velocity(g, t, np.zeros(g.dim))
        lhs = gaussian_velocity(g, t, x + y) - v0
        rhs = (gaussian_velocity(g, t, x) - v0) + (gaussian_velocity(g, t, y) - v0)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * max(1.0, np.abs(rhs).max()))

    @given(gaussian_couplings(), st.floats(0.0, 0.99), seeds)
    def test_superposition_zero_mean(self, g, t, seed):
        g = GaussianJointCoupling(np.zeros(g.dim), np.zeros(g.dim), g.sigma0, g.sigma1, g.sigma01)
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(2, g.dim))
        lhs = gaussian_velocity(g, t, x + y)
        rhs = gaussian_velocity(g, t, x) + gaussian_velocity(g, t, y)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * max(1.0, np.abs(rhs).max()))

    def test_monte_carlo_conditional_mean(self):
        g = GaussianJointCoupling(np.array([1.0]), np.array([-2.0]), [[1.0]], [[2.0]], [[0.6]])
        p = g.to_particles(400_000, seed=1)
        t = 0.4
        xt = (1 - t) * p.x0 + t * p.x1
        # linear regression of the displacement on x_t is exact for Gaussians
        A = np.column_stack([xt[:, 0], np.ones(len(xt))])
        coef, *_ = np.linalg.lstsq(A, (p.x1 - p.x0)[:, 0], rcond=None)
        for x in (-1.0, 0.0, 2.0):
            assert gaussian_velocity(g, t, [x])[0] == pytest.approx(coef[0] * x + coef[1], abs=0.02)


class TestGmmVelocity:
    @given(gaussian_couplings(), st.floats(0.0, 0.99), seeds)
    def test_single_component_reduces(self, g, t, seed):
        mix = GmmJointCoupling([1.0], (g,))
        x = np.random.default_rng(seed).normal(size=(5, g.dim))
        np.testing.assert_allclose(gmm_velocity(mix, t, x), gaussian_velocity(g, t, x),
                                   rtol=1e-10, atol=1e-10)

    @pytest.mark.parametrize("t", [0.0, 0.3, 0.7, 0.99])
    def test_symmetric_atoms_cancel(self, t):
        m = 1.5
        mix = GmmDist([0.5, 0.5], (GaussianDist([-m], [[0.0]]), GaussianDist([m], [[0.0]])))
        c = GmmJointCoupling.independent(GaussianDist.standard(1), mix)
        assert gmm_velocity(c, t, np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-12)

    @given(seeds, st.floats(0.0, 0.99))
    def test_weights_normalized(self, seed, t):
        c = _independent_gmm(seed)
        x = np.random.default_rng(seed).normal(scale=3.0, size=(30, 2))
        np.testing.assert_allclose(gmm_weights(c, t, x).sum(axis=0), 1.0, atol=1e-12)

    def test_far_point_is_finite(self):
        c = _independent_gmm(0)
        v = gmm_velocity(c, 0.5, np.array([300.0, -200.0]))
        assert np.all(np.isfinite(v))

    def test_underflow_raises(self):
        mix = GmmDist([1.0], (GaussianDist([0.0], [[0.0]]),))
        c = GmmJointCoupling.independent(GaussianDist([0.0], [[1e-300]]), mix)
        with pytest.raises((EvaluationError, SingularCovarianceError)):
            gmm_velocity(c, 0.5, np.array([1e200]))

    def test_point_mass_components(self):
        # independent N(0,1) -> atoms: w_t^k(x) = (m_k - x) / (1 - t)
        mix = GmmDist([0.3, 0.7], (GaussianDist([-2.0], [[0.0]]), GaussianDist([1.0], [[0.0]])))
        c = GmmJointCoupling.independent(GaussianDist.standard(1), mix)
        t, x = 0.4, np.array([[0.3]])
        a = gmm_weights(c, t, x)[:, 0]
        want = a[0] * (-2.0 - 0.3) / 0.6 + a[1] * (1.0 - 0.3) / 0.6
        assert gmm_velocity(c, t, x)[0, 0] == pytest.approx(want, rel=1e-12)

    def test_score_form(self):
        c = _independent_gmm(4)
        mix = c.marginal1()
        rng = np.random.default_rng(5)
        for _ in range(50):
            t = rng.uniform(0.1, 0.9)
            x = rng.normal(scale=2.0, size=2)
            # closed-form score of X_t = (1-t) N(0, I) + t GMM
            logits, grads = [], []
            for w, comp in zip(mix.weights, mix.components):
                mu = t * comp.mean
                S = (1 - t) ** 2 * np.eye(2) + t**2 * comp.cov
                P = np.linalg.inv(S)
                diff = x - mu
                logits.append(np.log(w) - 0.5 * diff @ P @ diff - 0.5 * np.linalg.slogdet(S)[1])
                grads.append(-P @ diff)
            logits = np.array(logits)
            a = np.exp(logits - logits.max())
            a /= a.sum()
            score = a @ np.array(grads)
            want = (1 - t) / t * score + x / t
            np.testing.assert_allclose(gmm_velocity(c, t, x), want, atol=1e-8)

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(8)
        blocks = []
        for _ in range(3):
            a = rng.normal(size=(4, 4))
            J = a @ a.T / 4 + 0.1 * np.eye(4)
            blocks.append(GaussianJointCoupling(rng.normal(size=2), rng.normal(scale=2.0, size=2),
                                                J[:2, :2], J[2:, 2:], J[2:, :2]))
        c = GmmJointCoupling([0.2, 0.3, 0.5], tuple(blocks))
        t = 0.3
        p = c.to_particles(1_000_000, seed=9)
        xt = (1 - t) * p.x0 + t * p.x1
        disp = p.x1 - p.x0
        queries = xt[rng.choice(len(xt), 20, replace=False)]
        h = 0.08
        est = np.empty_like(queries)
        for i, q in enumerate(queries):
            # local-linear smoother removes the first-order bias
            diff = xt - q
            w = np.exp(-0.5 * np.sum(diff**2, axis=1) / h**2)
            keep = w > 1e-8
            A = np.column_stack([np.ones(keep.sum()), diff[keep]]) * np.sqrt(w[keep])[:, None]
            coef, *_ = np.linalg.lstsq(A, disp[keep] * np.sqrt(w[keep])[:, None], rcond=None)
            est[i] = coef[0]
        exact = gmm_velocity(c, t, queries)
        rel = np.linalg.norm(est - exact) / np.linalg.norm(exact)
        assert rel < 0.02


class TestKernelVelocity:
    def test_single_pair(self):
        c = ParticleCoupling([[0.0, 0.0]], [[1.0, -3.0]])
        for x in ([0.0, 0.0], [10.0, 10.0]):
            v, oos = kernel_velocity(c, 0.5, 0.3, np.array(x))
            np.testing.assert_allclose(v, [1.0, -3.0])
            assert not oos.any()

    def test_equidistant_query(self):
        c = ParticleCoupling([[-1.0, 0.0], [1.0, 0.0]], [[-1.0, 2.0], [1.0, -4.0]])
        v, _ = kernel_velocity(c, 0.7, 0.0, np.array([0.0, 0.0]))
        np.testing.assert_allclose(v, [0.0, -1.0], atol=1e-12)

    def test_out_of_support_is_flagged_not_nan(self):
        c = ParticleCoupling([[0.0]], [[1.0]])
        v, oos = kernel_velocity(c, 0.01, 0.5, np.array([[1e6]]))
        assert oos[0]
        assert v[0, 0] == 0.0

    def test_bad_bandwidth(self):
        c = ParticleCoupling([[0.0]], [[1.0]])
        with pytest.raises(DomainError):
            kernel_velocity(c, 0.0, 0.5, np.array([0.0]))

    def test_grid_matches_exact(self):
        rng = np.random.default_rng(3)
        anchors = rng.normal(size=(3000, 2))
        vals = rng.normal(size=(3000, 2))
        q = rng.normal(size=(500, 2)) * 1.5
        a, _ = nadaraya_watson(q, anchors, vals, 0.2, method="exact")
        b, _ = nadaraya_watson(q, anchors, vals, 0.2, method="grid")
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_converges_to_closed_form(self):
        g = GaussianJointCoupling(Z2, np.array([2.0, -1.0]), I2, np.diag([4.0, 2.25]),
                                  np.diag([1.0, 0.75]))
        n, t = 100_000, 0.5
        p = g.to_particles(n, seed=2)
        _, S = interp_cov(g, t)
        h = n ** (-1 / 6) * np.sqrt(np.diag(S))
        fresh = g.to_particles(2000, seed=3)
        q = (1 - t) * fresh.x0 + t * fresh.x1
        est, _ = kernel_velocity(p, h, t, q)
        exact = gaussian_velocity(g, t, q)
        assert np.linalg.norm(est - exact) / np.linalg.norm(exact) < 0.05

    def test_error_non_increasing_in_n(self):
        g = GaussianJointCoupling(Z2, Z2, I2, np.diag([4.0, 1.0]), np.zeros((2, 2)))
        t = 0.5
        _, S = interp_cov(g, t)
        sd = np.sqrt(np.diag(S))
        q = g.to_particles(1000, seed=99)
        q = (1 - t) * q.x0 + t * q.x1
        exact = gaussian_velocity(g, t, q)
        errs = []
        for n in (1_000, 10_000, 100_000):
            p = g.to_particles(n, seed=n)
            est, _ = kernel_velocity(p, sd * n ** (-1 / 6), t, q)
            errs.append(np.sqrt(np.mean(np.sum((est - exact) ** 2, axis=1))))
        assert errs[0] >= errs[1] >= errs[2]

    def test_kernel_field_flags(self):
        c = ParticleCoupling([[0.0, 0.0]], [[1.0, 1.0]])
        v = kernel_field(c, bandwidth=0.01)
        out, ok = v.evaluate_flagged(0.5, np.array([[0.5, 0.5], [1e4, 0.0]]))
        assert ok.tolist() == [True, False]
        np.testing.assert_allclose(out, [[1.0, 1.0], [0.0, 0.0]])


class TestScenarioVelocity:
    @pytest.mark.parametrize("t", [0.0, 0.5, 0.99])
    def test_disconnected_opt(self, t):
        np.testing.assert_array_equal(scenario_velocity("disconnected-opt", t, [-2.0, 0.7]), [0.0, -2.0])

    def test_disconnected_nonopt(self):
        np.testing.assert_array_equal(scenario_velocity("disconnected-nonopt", 0.3, [5.0, 1.0]), [4.0, 0.0])
        np.testing.assert_array_equal(scenario_velocity("disconnected-nonopt", 0.3, [5.0, -1.0]), [-4.0, 0.0])

    def test_gauss_latent(self):
        np.testing.assert_array_equal(scenario_velocity("gauss-latent-fp", 0.5, [-1.0, 0.0]), [-2.0, 2.0])
        np.testing.assert_array_equal(scenario_velocity("gauss-latent-fp", 0.5, [1.0, 0.0]), [2.0, -2.0])

    def test_antipodal(self):
        np.testing.assert_allclose(scenario_velocity("antipodal", 0.25, [1.0, 0.0]), [-4.0, 0.0])

    def test_antipodal_singular(self):
        with pytest.raises(SingularTimeError):
            scenario_velocity("antipodal", 0.5, [1.0, 0.0])

    def test_gap_raises(self):
        with pytest.raises(OutOfSupportError):
            scenario_velocity("disconnected-opt", 0.2, [0.0, 0.0])
        with pytest.raises(OutOfSupportError):
            scenario_velocity("gauss-latent-fp", 0.5, [0.2, 0.0])

    def test_margin_widens_tubes(self):
        np.testing.assert_array_equal(
            scenario_velocity("disconnected-opt", 0.2, [-0.95, 0.0], margin=0.1), [0.0, -2.0])

    def test_unknown(self):
        with pytest.raises(InvalidArgumentError):
            scenario_field("nope")


def _random_invertible(rng, d):
    return rng.normal(size=(d, d)) + 2.5 * np.eye(d)


class TestAffineWrap:
    def test_identity(self):
        v = gaussian_field(ANTIPODAL)
        w = affine_wrap(v, Both(I2, Z2))
        x = np.array([[0.3, 0.4], [-1.0, 2.0]])
        np.testing.assert_array_equal(w(0.2, x), v(0.2, x))

    def test_shift_of_zero_field(self):
        w = affine_wrap(constant_field([0.0, 0.0]), Shift1([1.0, 0.0]))
        for t in (0.0, 0.4, 1.0):
            np.testing.assert_array_equal(w(t, [3.0, -2.0]), [1.0, 0.0])

    def test_scale_of_zero_field(self):
        w = affine_wrap(constant_field([0.0, 0.0]), Scale1(2.0))
        x = np.array([1.0, -3.0])
        for t in (0.0, 0.5, 1.0):
            np.testing.assert_allclose(w(t, x), x / (1 + t), rtol=1e-15)

    def test_scale_maps_singular_time(self):
        w = affine_wrap(scenario_field("antipodal"), Scale1(3.0))
        # r(t) = 3t/(1+2t) = 1/2 at t = 1/4
        assert w.singular_times[0] == pytest.approx(0.25, abs=1e-15)
        with pytest.raises(SingularTimeError):
            w(0.25, [1.0, 0.0])

    def test_scale_keeps_covariance_guard(self):
        w = affine_wrap(gaussian_field(ANTIPODAL), Scale1(3.0))
        with pytest.raises(SingularCovarianceError):
            w(0.25, [1.0, 0.0])

    def test_singular_matrix(self):
        with pytest.raises(InvalidArgumentError):
            affine_wrap(constant_field([0.0, 0.0]), Both(np.zeros((2, 2)), Z2))

    @given(gaussian_couplings(), seeds, st.floats(0.0, 0.98))
    def test_both_matches_transformed_coupling(self, g, seed, t):
        rng = np.random.default_rng(seed)
        mode = Both(_random_invertible(rng, g.dim), rng.normal(size=g.dim))
        x = rng.normal(size=(4, g.dim))
        lhs = affine_wrap(gaussian_field(g), mode)(t, x)
        rhs = gaussian_velocity(affine_transform(g, mode), t, x)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * max(1.0, np.abs(rhs).max()))

    @given(gaussian_couplings(), seeds, st.floats(0.0, 0.98))
    def test_shift_matches_transformed_coupling(self, g, seed, t):
        rng = np.random.default_rng(seed)
        mode = Shift1(rng.normal(size=g.dim))
        x = rng.normal(size=(4, g.dim))
        lhs = affine_wrap(gaussian_field(g), mode)(t, x)
        rhs = gaussian_velocity(affine_transform(g, mode), t, x)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * max(1.0, np.abs(rhs).max()))

    @given(gaussian_couplings(), st.floats(0.2, 5.0), seeds, st.floats(0.0, 0.98))
    def test_scale_matches_transformed_coupling(self, g, c, seed, t):
        mode = Scale1(c)
        x = np.random.default_rng(seed).normal(size=(4, g.dim))
        lhs = affine_wrap(gaussian_field(g), mode)(t, x)
        rhs = gaussian_velocity(affine_transform(g, mode), t, x)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * max(1.0, np.abs(rhs).max()))


class TestJacobianSymmetry:
    def test_symmetric_linear(self):
        S = np.array([[2.0, 0.5], [0.5, -1.0]])
        v = linear_field(lambda t: S, 2)
        pts = np.random.default_rng(0).normal(size=(20, 2))
        rep = jacobian_symmetry_check(v, 0.5, pts, h=1e-4, tol=1e-8)
        assert rep.is_gradient_like
        assert rep.max_asymmetry <= 1e-8

    def test_rotation(self):
        v = linear_field(lambda t: np.array([[0.0, 1.0], [-1.0, 0.0]]), 2)
        rep = jacobian_symmetry_check(v, 0.5, np.zeros((3, 2)), h=1e-4, tol=1e-6)
        assert not rep.is_gradient_like
        assert rep.max_asymmetry == pytest.approx(2.0, abs=1e-8)

    def test_diagonal_gaussian(self):
        g = GaussianJointCoupling(Z2, Z2, np.diag([1.0, 2.0]), np.diag([3.0, 0.5]), np.diag([0.4, -0.2]))
        pts = np.random.default_rng(1).normal(size=(100, 2))
        rep = jacobian_symmetry_check(gaussian_field(g), 0.5, pts, h=1e-4, tol=1e-6)
        assert rep.is_gradient_like

    def test_failure_reports_index(self):
        pts = np.array([[-3.0, 0.0], [0.0, 0.0], [3.0, 0.0]])
        with pytest.raises(EvaluationError) as info:
            jacobian_symmetry_check(scenario_field("disconnected-opt"), 0.5, pts)
        assert info.value.index == 1
