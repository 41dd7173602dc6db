"""Geometry, pathloss, shadowing, and large-scale gain oracles."""

import dataclasses

import numpy as np
import pytest

from cfoutage import scenario as scen


def small_config(**overrides):
    defaults = dict(L=9, L_s=3, N=4, K_n=4, K_u=10, tau_p=3, seed=1)
    defaults.update(overrides)
    return scen.ScenarioConfig(**defaults)


class TestConfig:
    def test_default_matches_standard_setup(self):
        cfg = scen.ScenarioConfig()
        assert (cfg.L, cfg.L_s, cfg.N, cfg.K_n) == (21, 3, 16, 10)
        assert (cfg.tau_c, cfg.tau_p) == (200, 10)
        assert cfg.p_mw == 100.0 and cfg.noise_dbm == -94.0
        assert cfg.annulus == (450.0, 1000.0)
        assert abs(cfg.sigma2 - 10 ** -9.4) < 1e-24
        assert cfg.prelog == 0.95

    def test_invariant_violations_rejected(self):
        with pytest.raises(ValueError):
            scen.ScenarioConfig(L_s=22)          # L_s > L
        with pytest.raises(ValueError):
            scen.ScenarioConfig(tau_p=11)        # tau_p >= K_n + 1
        with pytest.raises(ValueError):
            scen.ScenarioConfig(tau_c=10, tau_p=10)
        with pytest.raises(ValueError):
            scen.ScenarioConfig(p_mw=0.0)
        with pytest.raises(ValueError):
            scen.ScenarioConfig(annulus=(300.0, 1000.0))  # r_min <= radius


class TestPathloss:
    def test_intercept(self):
        assert scen.pathloss_db(1.0) == -30.5

    def test_decade_steps(self):
        assert abs(scen.pathloss_db(10.0) - (-67.2)) < 1e-12
        assert abs(scen.pathloss_db(100.0) - (-103.9)) < 1e-12

    def test_monotone_decreasing(self):
        d = np.geomspace(0.5, 5000.0, 200)
        pl = scen.pathloss_db(d)
        assert np.all(np.diff(pl) < 0)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            scen.pathloss_db(0.0)
        with pytest.raises(ValueError):
            scen.pathloss_db(np.array([1.0, -2.0]))


class TestPlacement:
    def test_serving_cluster_inside_disk(self, rng):
        cfg = scen.ScenarioConfig(seed=7)
        geo = scen.place_network(cfg, rng)
        r = np.linalg.norm(geo.serving_positions, axis=1)
        assert r.shape == (3,)
        assert np.all(r <= cfg.serving_radius)

    def test_degenerate_no_neighbors(self, rng):
        cfg = small_config(L=3, L_s=3)
        geo = scen.place_network(cfg, rng)
        assert geo.ap_positions.shape == (3, 2)

    def test_rejects_nondivisible_neighbor_tier(self, rng):
        cfg = small_config(L=8, L_s=3)   # 5 neighbors, not divisible by 6
        with pytest.raises(ValueError):
            scen.place_network(cfg, rng)

    def test_determinism(self):
        cfg = scen.ScenarioConfig(seed=42)
        geo1 = scen.place_network(cfg, scen.substream(cfg.seed, 0))
        geo2 = scen.place_network(cfg, scen.substream(cfg.seed, 0))
        np.testing.assert_array_equal(geo1.ap_positions, geo2.ap_positions)
        np.testing.assert_array_equal(geo1.known_ue_positions,
                                      geo2.known_ue_positions)
        np.testing.assert_array_equal(geo1.unknown_ue_positions,
                                      geo2.unknown_ue_positions)

    def test_known_ues_inside_disk_and_preset(self, rng):
        cfg = scen.ScenarioConfig(ue_preset="edge", seed=3)
        geo = scen.place_network(cfg, rng)
        assert np.allclose(geo.known_ue_positions[0], (390.0, 0.0))
        r = np.linalg.norm(geo.known_ue_positions, axis=1)
        assert np.all(r <= cfg.serving_radius)


class TestUnknownDrops:
    def test_empty(self, rng):
        cfg = small_config(K_u=0)
        assert scen.drop_unknown_ues(cfg, rng).shape == (0, 2)

    def test_radii_in_annulus(self, rng):
        cfg = scen.ScenarioConfig(K_u=100)
        pts = scen.drop_unknown_ues(cfg, rng)
        r = np.linalg.norm(pts, axis=1)
        assert np.all(r >= 450.0) and np.all(r <= 1000.0)

    def test_area_uniformity_fraction(self, rng):
        # direct integration oracle: P[r <= 725] = (725^2-450^2)/(1000^2-450^2)
        cfg = scen.ScenarioConfig(K_u=100_000)
        r = np.linalg.norm(scen.drop_unknown_ues(cfg, rng), axis=1)
        want = (725.0 ** 2 - 450.0 ** 2) / (1000.0 ** 2 - 450.0 ** 2)
        assert abs(np.mean(r <= 725.0) - want) <= 0.005

    def test_radial_ks(self, rng):
        cfg = scen.ScenarioConfig(K_u=10_000)
        r = np.sort(np.linalg.norm(scen.drop_unknown_ues(cfg, rng), axis=1))
        cdf = (r ** 2 - 450.0 ** 2) / (1000.0 ** 2 - 450.0 ** 2)
        emp = (np.arange(1, r.size + 1) - 0.5) / r.size
        assert np.max(np.abs(cdf - emp)) <= 0.02


class TestShadowing:
    def test_covariance_at_zero_and_nine_meters(self):
        model = scen.ShadowingModel()
        pos = np.array([[0.0, 0.0], [9.0, 0.0]])
        cov = scen.shadowing_covariance(pos, model)
        assert abs(cov[0, 0] - 16.0) < 1e-12
        assert abs(cov[0, 1] - 8.0) < 1e-12

    def test_empirical_covariance_vs_model(self, rng):
        # delta in {0, 9, 18} m within +-0.3 dB^2 over 1e5 draws
        model = scen.ShadowingModel()
        pos = np.array([[0.0, 0.0], [9.0, 0.0], [18.0, 0.0]])
        draws = scen.shadowing_batch(pos, 1, model, rng, size=100_000)[..., 0]
        emp = draws.T @ draws / draws.shape[0]
        assert abs(emp[0, 0] - 16.0) <= 0.3
        assert abs(emp[0, 1] - 8.0) <= 0.3
        assert abs(emp[0, 2] - 16.0 * 2.0 ** -2) <= 0.3

    def test_independent_across_aps(self, rng):
        model = scen.ShadowingModel()
        pos = np.array([[0.0, 0.0], [5.0, 5.0]])
        draws = scen.shadowing_batch(pos, 2, model, rng, size=100_000)
        cross = np.mean(draws[:, 0, 0] * draws[:, 0, 1])
        assert abs(cross) <= 0.2

    def test_conditional_matches_marginals(self, rng):
        # conditioning on the known field must preserve the joint law;
        # columns are independent draws (one per "AP"), so one call batches
        model = scen.ShadowingModel()
        known = np.array([[0.0, 0.0], [20.0, 0.0]])
        new = np.array([[4.0, 0.0], [300.0, 0.0]])
        n = 100_000
        f_known = scen.shadowing_batch(known, n, model, rng)
        f_new = scen.conditional_shadowing(known, f_known, new, model, rng)
        # marginal variance of each new point is std^2
        assert abs(np.var(f_new[0]) - 16.0) <= 0.4
        assert abs(np.var(f_new[1]) - 16.0) <= 0.4
        # covariance with the nearest known point matches the model
        want = 16.0 * 2.0 ** (-4.0 / 9.0)
        assert abs(np.mean(f_new[0] * f_known[0]) - want) <= 0.4

    def test_jitter_retry_on_duplicate_positions(self, rng):
        # coincident UEs make the covariance singular; jitter must recover
        model = scen.ShadowingModel()
        pos = np.array([[0.0, 0.0], [0.0, 0.0], [3.0, 1.0]])
        draws = scen.shadowing_batch(pos, 1, model, rng, size=10)
        assert np.all(np.isfinite(draws))


class TestLargeScale:
    def test_db_to_linear(self, rng):
        cfg = small_config()
        geo = scen.place_network(cfg, rng)
        f = np.zeros((cfg.n_known + cfg.K_u, cfg.L))
        ls = scen.large_scale_gains(geo, f, cfg)
        d0 = ls.d[0, 0]
        assert abs(ls.beta[0, 0] - 10 ** (scen.pathloss_db(d0) / 10)) \
            <= 1e-15 * ls.beta[0, 0]

    def test_shadowing_shift_is_multiplicative(self, rng):
        cfg = small_config()
        geo = scen.place_network(cfg, rng)
        shape = (cfg.n_known + cfg.K_u, cfg.L)
        base = scen.large_scale_gains(geo, np.zeros(shape), cfg)
        shifted = scen.large_scale_gains(geo, np.full(shape, 10.0), cfg)
        np.testing.assert_allclose(shifted.beta, 10.0 * base.beta, rtol=1e-12)

    def test_strictly_positive(self, rng):
        cfg = small_config(seed=5)
        geo = scen.place_network(cfg, rng)
        f = scen.sample_shadowing(geo, cfg, rng)
        ls = scen.large_scale_gains(geo, f, cfg)
        assert np.all(ls.beta > 0)

    def test_determinism_of_large_scale(self):
        cfg = scen.ScenarioConfig(seed=11)
        out = []
        for _ in range(2):
            rng = scen.substream(cfg.seed, 0)
            geo = scen.place_network(cfg, rng)
            f = scen.sample_shadowing(geo, cfg, rng)
            out.append(scen.large_scale_gains(geo, f, cfg))
        np.testing.assert_array_equal(out[0].beta, out[1].beta)
        np.testing.assert_array_equal(out[0].F, out[1].F)
