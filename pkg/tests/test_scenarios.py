import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rectiflow.distributions import GaussianDist
from rectiflow.errors import ConfigError, OutOfSupportError
from rectiflow.integrators import IntegratorConfig
from rectiflow.ot import bures_wasserstein, discrete_ot_exact, transport_cost
from rectiflow.rectification import ClosedForm, loss_eval, rectify
from rectiflow.scenarios import SCENARIOS, ScenarioSpec, build_scenario, list_scenarios
from rectiflow.velocity import scenario_field, scenario_velocity
from strategies import seeds

FIELDS = ["disconnected-opt", "disconnected-nonopt", "gauss-latent-fp"]


def test_registry_lists_every_scenario():
    names = [n for n, _ in list_scenarios()]
    assert names == list(SCENARIOS)
    assert all(desc for _, desc in list_scenarios())


class TestSpec:
    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            ScenarioSpec("nope")

    def test_unknown_param(self):
        with pytest.raises(ConfigError):
            ScenarioSpec("antipodal", {"radius": 1.0})

    def test_wrong_type(self):
        with pytest.raises(ConfigError):
            ScenarioSpec("antipodal", {"dim": 2.5})

    def test_int_accepted_as_float(self):
        assert ScenarioSpec("antipodal", {"c": 1}).resolved()["c"] == 1

    def test_round_trip(self):
        s = ScenarioSpec("disconnected-opt", {"eta_radius": 0.2, "balanced": False})
        assert ScenarioSpec.from_dict(s.to_dict()) == s
        assert ScenarioSpec.from_dict("antipodal") == ScenarioSpec("antipodal")

    def test_bad_radius(self):
        with pytest.raises(ConfigError):
            build_scenario(ScenarioSpec("disconnected-opt", {"eta_radius": 0.5}), 10, 0)

    def test_bad_n(self):
        with pytest.raises(ConfigError):
            build_scenario("antipodal", 0, 0)

    def test_custom_needs_data(self):
        with pytest.raises(ConfigError):
            build_scenario("custom", 10, 0)


class TestSelfConsistency:
    @pytest.mark.parametrize("name", FIELDS)
    def test_field_has_zero_loss(self, name):
        c, meta = build_scenario(name, 5000, seed=1)
        assert meta.fixed_point
        assert loss_eval(scenario_field(name), c, 500, seed=2) < 1e-8

    @pytest.mark.parametrize("name", FIELDS)
    def test_rectification_keeps_rows(self, name):
        c, meta = build_scenario(name, 3000, seed=3)
        out, _ = rectify(c, meta.field_source, IntegratorConfig("rk4", 20))
        assert np.abs(out.x1 - c.x1).max() < 1e-6

    @given(seeds, st.sampled_from(["disconnected-opt", "disconnected-nonopt"]))
    @settings(max_examples=15)
    def test_disc_rows_follow_pairing_rule(self, seed, name):
        c, _ = build_scenario(name, 400, seed)
        d = c.x1 - c.x0
        if name == "disconnected-opt":
            np.testing.assert_array_equal(d[:, 0], 0.0)
            np.testing.assert_allclose(np.abs(d[:, 1]), 2.0, atol=1e-14)
            np.testing.assert_array_equal(np.sign(d[:, 1]), np.sign(c.x0[:, 0]))
        else:
            np.testing.assert_array_equal(d[:, 1], 0.0)
            np.testing.assert_allclose(np.abs(d[:, 0]), 4.0, atol=1e-14)
            np.testing.assert_array_equal(np.sign(d[:, 0]), -np.sign(c.x0[:, 0]))

    def test_disc_costs(self):
        assert transport_cost(build_scenario("disconnected-opt", 2000, 0)[0]) == pytest.approx(4.0)
        assert transport_cost(build_scenario("disconnected-nonopt", 2000, 0)[0]) == pytest.approx(16.0)

    def test_disc_optimal_cost_matches_discrete_ot(self):
        # the two target discs are fresh draws, so the empirical optimum sits slightly above 4
        c, meta = build_scenario("disconnected-nonopt", 1500, seed=4)
        cost = discrete_ot_exact(c.x0, c.x1).cost
        assert meta.optimal_cost <= cost < meta.optimal_cost + 0.1

    @pytest.mark.parametrize("name,tol", [("antipodal", 0.15), ("disconnected-opt", 0.1)])
    def test_metadata_cost_matches_discrete_ot(self, name, tol):
        # empirical optima of 2000-point clouds exceed the population W2^2 by O(n^-1/2)
        c, meta = build_scenario(name, 2000, seed=6)
        cost = discrete_ot_exact(c.x0, c.x1).cost
        assert abs(cost - meta.optimal_cost) < tol

    def test_gaussian_metadata_cost_matches_discrete_ot(self):
        # sample covariances move W2^2 by about 5% at n = 2000, so compare with the fitted Gaussians
        c, meta = build_scenario("independent-gaussian", 2000, seed=6)
        fits = [GaussianDist(x.mean(0), np.cov(x, rowvar=False)) for x in (c.x0, c.x1)]
        cost = discrete_ot_exact(c.x0, c.x1).cost
        assert abs(cost - bures_wasserstein(*fits)) < 0.15
        assert abs(bures_wasserstein(*fits) - meta.optimal_cost) < 0.1 * meta.optimal_cost

    def test_balanced_halves(self):
        c, _ = build_scenario("disconnected-opt", 1001, seed=0)
        left = int(np.sum(c.x0[:, 0] < 0))
        assert left in (500, 501)

    @given(seeds)
    @settings(max_examples=15)
    def test_antipodal_rows(self, seed):
        c, meta = build_scenario("antipodal", 200, seed)
        np.testing.assert_array_equal(c.x1, -c.x0)
        assert meta.rectifiable is False

    def test_smoothed_antipodal_metadata(self):
        c, meta = build_scenario(ScenarioSpec("antipodal", {"c": 0.5, "dim": 1}), 50_000, 0)
        assert meta.rectifiable
        assert meta.optimal_cost == pytest.approx((np.sqrt(1.25) - 1.0) ** 2, rel=1e-12)
        assert np.var(c.x0) == pytest.approx(1.25, rel=0.03)

    def test_gauss_latent_cost_is_eight(self):
        c, meta = build_scenario("gauss-latent-fp", 20_000, seed=0)
        np.testing.assert_allclose(np.abs(c.x1 - c.x0), 2.0, atol=1e-14)
        assert meta.v1 == pytest.approx(10.0 + 4.0 * np.sqrt(2.0 / np.pi))
        assert np.mean(np.sum(c.x1 ** 2, axis=1)) == pytest.approx(meta.v1, rel=0.02)

    def test_gauss_latent_opt_is_a_repairing(self):
        c, _ = build_scenario("gauss-latent-fp", 600, seed=2)
        o, meta = build_scenario("gauss-latent-opt", 600, seed=2)
        np.testing.assert_array_equal(o.x0, c.x0)
        assert sorted(map(tuple, o.x1)) == sorted(map(tuple, c.x1))
        assert transport_cost(o) == pytest.approx(meta.optimal_cost, rel=1e-12)
        assert meta.optimal_cost < 8.0

    def test_gap_region_is_out_of_support(self):
        with pytest.raises(OutOfSupportError):
            scenario_velocity("disconnected-opt", 0.5, np.array([[0.0, 0.0]]))

    def test_independent_gaussian_metadata(self):
        _, meta = build_scenario("independent-gaussian", 10, 0)
        assert meta.optimal_cost == pytest.approx(5.0, rel=1e-12)
        assert meta.v1 == pytest.approx(10.0)

    def test_independent_gmm_moments(self):
        c, meta = build_scenario("independent-gmm", 40_000, 0)
        assert np.mean(np.sum(c.x1 ** 2, axis=1)) == pytest.approx(meta.v1, rel=0.02)
        assert isinstance(meta.field_source, ClosedForm)

    def test_custom_inline(self):
        c, meta = build_scenario(ScenarioSpec("custom", {"x0": [[0.0], [1.0]], "x1": [[1.0], [3.0]]}),
                                 1, 0)
        assert c.n == 2 and meta.v1 == pytest.approx(5.0)

    @pytest.mark.parametrize("name", [n for n in SCENARIOS if n != "custom"])
    def test_samplers_match_marginals(self, name):
        c, meta = build_scenario(name, 400, seed=5)
        assert meta.sample_mu0(7, 1).shape == (7, c.d)
        assert meta.sample_mu1(7, 1).shape == (7, c.d)

    @pytest.mark.parametrize("name", [n for n in SCENARIOS if n not in ("custom", "gauss-latent-opt")])
    def test_deterministic(self, name):
        a, _ = build_scenario(name, 300, seed=9)
        b, _ = build_scenario(name, 300, seed=9)
        np.testing.assert_array_equal(a.x0, b.x0)
        np.testing.assert_array_equal(a.x1, b.x1)
