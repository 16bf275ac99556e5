import numpy as np
import pytest

from cfdetect import simkit
from cfdetect.simkit import Perturbation, SystemConfig


def rngs(seed):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def realize(cfg, seed=0):
    geo, chan, pil, noise = rngs(seed)
    scen = simkit.build_scenario(cfg, geo)
    ch = simkit.draw_channels(scen, cfg, chan)
    pilots = simkit.generate_pilots(cfg, pil)
    return scen, ch, pilots, simkit.synthesize(scen, ch, pilots, cfg, noise)


def test_same_seed_reproduces_bit_for_bit():
    a = realize(SystemConfig(), 5)
    b = realize(SystemConfig(), 5)
    np.testing.assert_array_equal(a[3].y, b[3].y)
    np.testing.assert_array_equal(a[1].activity, b[1].activity)
    assert not np.array_equal(a[3].y, realize(SystemConfig(), 6)[3].y)


def test_shapes_follow_config():
    cfg = SystemConfig(K=3, M=2, N=7, L=5)
    scen, ch, pilots, sig = realize(cfg)
    assert scen.beta.shape == (3, 7)
    assert ch.g.shape == (3, 7, 2)
    assert pilots.s.shape == (5, 7)
    assert sig.y.shape == (3, 5, 2)


def test_pilot_columns_have_energy_L():
    pilots = simkit.generate_pilots(SystemConfig(L=13), np.random.default_rng(0))
    np.testing.assert_allclose(np.sum(np.abs(pilots.s) ** 2, axis=0), 13.0, rtol=1e-12)


def test_power_control_hits_target_or_the_cap():
    cfg = SystemConfig(N=400, area_km=6.0)
    scen = simkit.build_scenario(cfg, np.random.default_rng(1))
    p_max = float(simkit.dbm_to_watt(cfg.max_tx_power_dbm))
    assert np.all(scen.tx_power <= p_max * (1 + 1e-12))
    best = scen.effective_beta.max(axis=0)
    target = 10 ** (cfg.snr_target_db / 10)
    capped = np.isclose(scen.tx_power, p_max, rtol=1e-12)
    np.testing.assert_allclose(best[~capped], target, rtol=1e-10)
    assert np.all(best[capped] <= target * (1 + 1e-12))
    assert capped.any() and (~capped).any()


def test_pathloss_formula():
    assert simkit.pathloss_db(1.0) == pytest.approx(-128.1)
    assert simkit.pathloss_db(10.0, 2.0) == pytest.approx(-128.1 - 36.7 + 2.0)


def test_ap_grid_covers_area():
    aps = simkit.ap_grid(4, 2.0)
    np.testing.assert_allclose(aps, [[0.5, 0.5], [1.5, 0.5], [0.5, 1.5], [1.5, 1.5]])
    aps = simkit.ap_grid(5, 3.0)
    assert aps.shape == (5, 2)
    assert np.all((aps > 0) & (aps < 3.0))
    assert len({tuple(p) for p in aps}) == 5


def test_received_energy_matches_model_covariance():
    # E ||Y_k||^2 = trace(Q_k) * M under Rayleigh fading; averaged over redraws
    cfg = SystemConfig(K=2, M=4, N=12, L=6, epsilon=0.5)
    geo, pil, act = (np.random.default_rng(s) for s in (0, 1, 2))
    scen = simkit.build_scenario(cfg, geo)
    pilots = simkit.generate_pilots(cfg, pil)
    activity = simkit.draw_activity(cfg, act)
    q = simkit.model_covariance(scen.effective_beta, activity, pilots, cfg.noise_power)
    expected = np.real(np.trace(q, axis1=1, axis2=2)) * cfg.M
    rng = np.random.default_rng(3)
    trials = 4000
    total = np.zeros(cfg.K)
    for _ in range(trials):
        ch = simkit.draw_channels(scen, cfg, rng, activity=activity)
        total += np.sum(np.abs(simkit.synthesize(scen, ch, pilots, cfg, rng).y) ** 2, axis=(1, 2))
    np.testing.assert_allclose(total / trials, expected, rtol=0.05)


def test_activity_rate_follows_epsilon():
    cfg = SystemConfig(N=20000, epsilon=0.1)
    act = simkit.draw_activity(cfg, np.random.default_rng(0))
    assert act.mean() == pytest.approx(0.1, abs=0.01)
    assert simkit.draw_activity(cfg, np.random.default_rng(0), epsilon=0.0).sum() == 0


def test_rician_limits():
    scatter = np.random.default_rng(0).standard_normal((3, 4)) + 0j
    pure_nlos = simkit.rician_channel(0.0, 0.3, scatter)
    np.testing.assert_allclose(pure_nlos, scatter)
    los = simkit.rician_channel(np.inf, 0.3, scatter)
    np.testing.assert_allclose(los, np.broadcast_to(np.exp(1j * 0.3 * np.arange(4)), (3, 4)))


def test_rician_fraction_selects_users():
    cfg = SystemConfig(N=40, rician_fraction=0.25)
    scen = simkit.build_scenario(cfg, np.random.default_rng(0))
    ch = simkit.draw_channels(scen, cfg, np.random.default_rng(1))
    users = np.any(ch.rician_factor > 0, axis=0)
    assert users.sum() == 10
    assert ch.rician_factor.max() <= cfg.rician_factor_max


def test_channel_power_is_unit_on_average():
    cfg = SystemConfig(N=2000, rician_fraction=1.0)
    scen = simkit.build_scenario(cfg, np.random.default_rng(0))
    ch = simkit.draw_channels(scen, cfg, np.random.default_rng(1))
    assert np.mean(np.abs(ch.g) ** 2) == pytest.approx(1.0, rel=0.02)


def test_noise_free_synthesis_is_exact():
    cfg = SystemConfig(K=2, M=3, N=6, L=4, epsilon=1.0)
    geo, chan, pil, noise = rngs(0)
    scen = simkit.build_scenario(cfg, geo)
    ch = simkit.draw_channels(scen, cfg, chan)
    pilots = simkit.generate_pilots(cfg, pil)
    sig = simkit.synthesize(scen, ch, pilots, cfg, noise, noise_power=0.0)
    k, n = 1, 2
    contrib = np.sqrt(scen.effective_beta[k]) * ch.activity
    manual = sum(contrib[n] * np.outer(pilots.s[:, n], ch.g[k, n]) for n in range(cfg.N))
    np.testing.assert_allclose(sig.y[k], manual, atol=1e-12)


def test_synthesize_rejects_mismatched_dimensions():
    cfg = SystemConfig(K=2, M=3, N=6, L=4)
    scen, ch, pilots, _ = realize(cfg)
    with pytest.raises(ValueError):
        simkit.synthesize(scen, ch, pilots, cfg.replace(M=2), np.random.default_rng(0))


def test_knowledge_perturbation_support_and_isolation():
    cfg = SystemConfig(N=500)
    scen = simkit.build_scenario(cfg, np.random.default_rng(0))
    original = scen.effective_beta.copy()
    told = simkit.perturb_knowledge(scen, Perturbation(pathloss_error_db=3.0), np.random.default_rng(1))
    err_db = 10 * np.log10(told.effective_beta / scen.effective_beta)
    assert err_db.min() >= 0.0 and err_db.max() <= 3.0
    assert err_db.mean() == pytest.approx(1.5, abs=0.05)
    np.testing.assert_array_equal(scen.effective_beta, original)
    assert told.noise_power == scen.noise_power


def test_noise_knowledge_error_is_lognormal():
    scen = simkit.build_scenario(SystemConfig(), np.random.default_rng(0))
    draws = [10 * np.log10(simkit.perturb_knowledge(scen, Perturbation(noise_error_std_db=2.0),
                                                    np.random.default_rng(i)).noise_power)
             for i in range(3000)]
    assert np.std(draws) == pytest.approx(2.0, rel=0.05)
    assert np.mean(draws) == pytest.approx(0.0, abs=0.15)


@pytest.mark.parametrize("bad", [dict(K=0), dict(L=2.5), dict(epsilon=1.5), dict(area_km=0.0),
                                 dict(rician_fraction=-0.1), dict(seed=-1)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SystemConfig(**bad)


@pytest.mark.parametrize("bad", [dict(pathloss_error_db=-1.0), dict(rician_fraction=2.0),
                                 dict(epsilon_range=(0.3, 0.1))])
def test_perturbation_validation(bad):
    with pytest.raises(ValueError):
        Perturbation(**bad)


def test_users_keep_minimum_distance():
    cfg = SystemConfig(N=3000, area_km=0.05)
    scen = simkit.build_scenario(cfg, np.random.default_rng(2))
    assert scen.distances.min() >= simkit.MIN_DISTANCE_KM
