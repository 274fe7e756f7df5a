import numpy as np
import pytest

from fasdm.channel import FasGeometry, generate_channel
from fasdm.ddrm import (DdrmHyper, SpectralState, Trajectory, estimate, estimate_batch,
                        init_latent, make_trajectory, posterior_step, predict_x0)
from fasdm.diffusion import forward_sample, make_schedule
from fasdm.measurement import (build_schedule, build_spectral_maps, from_spectral, observe,
                               pad_observation, to_spectral)

GEOM = FasGeometry(8, 8, 1.0, 1.0)
SCHED = make_schedule(t_max=200, beta_1=1e-4, beta_t=0.05)


def _setup(seed, sigma, m=2, l=8, geom=GEOM):
    rng = np.random.default_rng(seed)
    sample = generate_channel(geom, 6, rng)
    sw = build_schedule(geom, m, l, rng)
    obs = observe(sample, sw, sigma, rng if sigma > 0 else None)
    maps = build_spectral_maps(sw, geom)
    return sample, obs, maps


def _oracle_denoiser(h0):
    """Perfect noise predictor for one fixed realization."""
    def f(h, t):
        abar = SCHED.alpha_bar_at(int(np.max(t)))
        return (h - np.sqrt(abar) * h0) / np.sqrt(1 - abar)
    return f


def test_make_trajectory_uniform_quantization():
    traj = make_trajectory(500, 25)
    assert traj.steps == tuple(range(20, 501, 20))
    assert make_trajectory(10, 10).steps == tuple(range(1, 11))
    assert make_trajectory(200, 1).steps == (200,)
    with pytest.raises(ValueError):
        make_trajectory(100, 101)
    with pytest.raises(ValueError):
        Trajectory(steps=(5, 3), t_max=5)
    with pytest.raises(ValueError):
        Trajectory(steps=(3, 4), t_max=5)


def test_predict_x0_exact_noise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        h0 = rng.standard_normal(64)
        t = int(rng.integers(1, 201))
        eps = rng.standard_normal(64)
        h_t = forward_sample(h0, t, eps, SCHED)
        rec = predict_x0(h_t, t, lambda h, tt: eps, SCHED)
        assert np.max(np.abs(rec - h0)) / np.max(np.abs(h0)) < 1e-10


def test_predict_x0_zero_denoiser_and_amplification():
    rng = np.random.default_rng(1)
    h = rng.standard_normal(32)
    out = predict_x0(h, 200, lambda x, t: np.zeros_like(x), SCHED)
    abar = SCHED.alpha_bar_at(200)
    assert np.allclose(out, h / np.sqrt(abar))
    # terminal amplification is tied to the terminal noise level
    assert 1 / np.sqrt(abar) == pytest.approx(np.sqrt(1 + SCHED.sigma_at(200) ** 2))
    assert np.all(np.isfinite(out))


def test_init_latent_deterministic_equals_padded_observation():
    _, obs, maps = _setup(2, sigma=0.05)
    y_bar = pad_observation(obs.y, maps)
    state = init_latent(y_bar, obs.sigma, SCHED, maps)
    assert state.t == 200
    assert np.array_equal(state.h_bar, y_bar)


def test_init_latent_stochastic_variances():
    _, obs, maps = _setup(3, sigma=0.5)
    y_bar = pad_observation(obs.y, maps)
    rng = np.random.default_rng(4)
    hyper = DdrmHyper(deterministic=False)
    draws = np.stack([init_latent(y_bar, obs.sigma, SCHED, maps, rng, hyper).h_bar
                      for _ in range(10_000)])
    sig_t = SCHED.sigma_at(200)
    var_unobs = draws[:, maps.m_bar:].var(axis=0).mean()
    var_obs = draws[:, :maps.m_bar].var(axis=0).mean()
    assert abs(var_unobs - sig_t**2) < 0.02 * sig_t**2
    assert abs(var_obs - (sig_t**2 - 0.25)) < 0.02 * sig_t**2


def test_init_latent_sigma_zero_observed_variance():
    _, obs, maps = _setup(5, sigma=0.0)
    y_bar = pad_observation(obs.y, maps)
    rng = np.random.default_rng(6)
    hyper = DdrmHyper(deterministic=False)
    draws = np.stack([init_latent(y_bar, 0.0, SCHED, maps, rng, hyper).h_bar
                      for _ in range(10_000)])
    sig_t = SCHED.sigma_at(200)
    var_obs = draws[:, :maps.m_bar].var(axis=0).mean()
    assert abs(var_obs - sig_t**2) < 0.02 * sig_t**2


def test_init_latent_schedule_too_short():
    _, obs, maps = _setup(7, sigma=0.0)
    y_bar = pad_observation(obs.y, maps)
    short = make_schedule(t_max=5, beta_1=1e-5, beta_t=2e-5)
    with pytest.raises(ValueError):
        init_latent(y_bar, 1.0, short, maps)


def _step_inputs(seed, sigma):
    rng = np.random.default_rng(seed)
    _, obs, maps = _setup(seed, sigma=sigma)
    y_bar = pad_observation(obs.y, maps)
    h0_bar = rng.standard_normal(maps.n_bar)
    state = SpectralState(h_bar=rng.standard_normal(maps.n_bar), t=50)
    return state, h0_bar, y_bar, maps


def test_posterior_step_data_anchored_branch():
    state, h0_bar, y_bar, maps = _step_inputs(8, sigma=0.01)
    out = posterior_step(state, 20, h0_bar, y_bar, 0.01, DdrmHyper(), SCHED, maps)
    assert out.t == 20
    assert np.array_equal(out.h_bar[:maps.m_bar], y_bar[:maps.m_bar])


def test_posterior_step_unobserved_jumps_to_prediction():
    state, h0_bar, y_bar, maps = _step_inputs(9, sigma=0.01)
    out = posterior_step(state, 20, h0_bar, y_bar, 0.01, DdrmHyper(), SCHED, maps)
    assert np.array_equal(out.h_bar[maps.m_bar:], h0_bar[maps.m_bar:])


def test_posterior_step_low_noise_branch_and_continuity():
    state, h0_bar, y_bar, maps = _step_inputs(10, sigma=0.0)
    sig_next = SCHED.sigma_at(1)
    # sigma just above the target diffusion level routes the low-noise branch
    sigma = sig_next * (1 + 1e-9)
    out = posterior_step(state, 1, h0_bar, y_bar, sigma, DdrmHyper(), SCHED, maps)
    expected = h0_bar[:maps.m_bar] + sig_next * (y_bar[:maps.m_bar] - h0_bar[:maps.m_bar]) / sigma
    assert np.allclose(out.h_bar[:maps.m_bar], expected, atol=1e-14)
    # continuous with the data-anchored branch at the boundary
    assert np.allclose(out.h_bar[:maps.m_bar], y_bar[:maps.m_bar], atol=1e-7)


def test_posterior_step_partial_eta_b():
    state, h0_bar, y_bar, maps = _step_inputs(11, sigma=0.01)
    hyper = DdrmHyper(eta_b=0.25)
    out = posterior_step(state, 20, h0_bar, y_bar, 0.01, hyper, SCHED, maps)
    mb = maps.m_bar
    assert np.allclose(out.h_bar[:mb], 0.75 * h0_bar[:mb] + 0.25 * y_bar[:mb])


def test_posterior_step_unobserved_eta_c_zero_keeps_direction():
    state, h0_bar, y_bar, maps = _step_inputs(12, sigma=0.01)
    hyper = DdrmHyper(eta_c=0.0)
    out = posterior_step(state, 20, h0_bar, y_bar, 0.01, hyper, SCHED, maps)
    mb = maps.m_bar
    ratio = SCHED.sigma_at(20) / SCHED.sigma_at(50)
    expected = h0_bar[mb:] + ratio * (state.h_bar[mb:] - h0_bar[mb:])
    assert np.allclose(out.h_bar[mb:], expected)


def test_posterior_step_requires_decreasing_t():
    state, h0_bar, y_bar, maps = _step_inputs(13, sigma=0.01)
    with pytest.raises(ValueError):
        posterior_step(state, 50, h0_bar, y_bar, 0.01, DdrmHyper(), SCHED, maps)


def test_estimate_oracle_denoiser_recovers_truth_exactly():
    # a perfect noise predictor turns the deterministic sampler into an
    # exact interpolator: the estimate equals the ground truth
    sample, obs, maps = _setup(14, sigma=0.1)
    f = _oracle_denoiser(sample.h_real)
    for t_prime in (200, 25, 1):
        traj = make_trajectory(200, t_prime)
        est = estimate(obs, maps, f, SCHED, traj)
        assert np.max(np.abs(est.h_real - sample.h_real)) < 1e-10


def test_estimate_noiseless_pins_observed_exactly():
    sample, obs, maps = _setup(15, sigma=0.0)
    f = _oracle_denoiser(sample.h_real)
    est = estimate(obs, maps, f, SCHED, make_trajectory(200, 25))
    idx = obs.schedule.flat_ports
    n = GEOM.num_ports
    assert np.array_equal(est.h_real[idx], obs.y[:idx.size])
    assert np.array_equal(est.h_real[n + idx], obs.y[idx.size:])


def test_estimate_observed_coords_pinned_through_chain():
    # with full data weight, every intermediate state keeps observed
    # spectral coordinates equal to the padded observations
    sample, obs, maps = _setup(16, sigma=0.05)
    f = _oracle_denoiser(sample.h_real)
    y_bar = pad_observation(obs.y, maps)
    state = init_latent(y_bar, obs.sigma, SCHED, maps)
    traj = make_trajectory(200, 25)
    steps = (0,) + traj.steps
    for i in range(len(traj), 1, -1):
        t = steps[i]
        sqrt_abar = np.sqrt(SCHED.alpha_bar_at(t))
        h_vp = sqrt_abar * from_spectral(state.h_bar, maps)
        x0 = predict_x0(h_vp, t, f, SCHED)
        state = posterior_step(state, steps[i - 1], to_spectral(x0, maps), y_bar,
                               obs.sigma, DdrmHyper(), SCHED, maps)
        if SCHED.sigma_at(steps[i - 1]) >= obs.sigma:
            assert np.array_equal(state.h_bar[:maps.m_bar], y_bar[:maps.m_bar])


def test_estimate_batch_matches_serial_exactly_with_numpy_denoiser():
    samples, obs_list, maps_list = [], [], []
    for seed in range(5):
        sample, obs, maps = _setup(100 + seed, sigma=0.1)
        samples.append(sample)
        obs_list.append(obs)
        maps_list.append(maps)

    def f(h, t):
        # deterministic numpy transform independent of the truth
        return np.tanh(h) * 0.1

    traj = make_trajectory(200, 25)
    batch = estimate_batch(obs_list, maps_list, f, SCHED, traj)
    for i in range(5):
        single = estimate(obs_list[i], maps_list[i], f, SCHED, traj)
        assert np.allclose(single.h_real, batch[i].h_real, atol=1e-12)


def test_estimate_batch_validation():
    sample, obs, maps = _setup(17, sigma=0.1)
    _, obs2, maps2 = _setup(18, sigma=0.2)
    with pytest.raises(ValueError):
        estimate_batch([], [], lambda h, t: h, SCHED, make_trajectory(200, 5))
    with pytest.raises(ValueError):
        estimate_batch([obs, obs2], [maps, maps2], lambda h, t: h, SCHED,
                       make_trajectory(200, 5))


def test_estimate_aborts_on_non_finite():
    _, obs, maps = _setup(19, sigma=0.1)
    with pytest.raises(RuntimeError):
        estimate(obs, maps, lambda h, t: np.full_like(h, np.nan), SCHED,
                 make_trajectory(200, 5))


def test_estimate_stochastic_mode_and_posterior_mean():
    sample, obs, maps = _setup(20, sigma=0.1)
    f = _oracle_denoiser(sample.h_real)
    hyper = DdrmHyper(eta_a=0.5, eta_b=0.8, eta_c=0.9, deterministic=False)
    rng = np.random.default_rng(21)
    est = estimate(obs, maps, f, SCHED, make_trajectory(200, 25), hyper, rng=rng,
                   num_samples=3)
    assert np.all(np.isfinite(est.h_real))
    with pytest.raises(ValueError):
        estimate(obs, maps, f, SCHED, make_trajectory(200, 25), DdrmHyper(), num_samples=2)


def test_estimate_never_reads_unobserved_truth():
    # estimator input is only (y, schedule); corrupting unobserved truth
    # entries before observation must not change anything downstream
    rng = np.random.default_rng(22)
    sample = generate_channel(GEOM, 6, rng)
    sw = build_schedule(GEOM, 2, 8, rng)
    maps = build_spectral_maps(sw, GEOM)
    n = GEOM.num_ports
    mask = np.ones(n, bool)
    mask[sw.flat_ports] = False
    corrupted = sample.h_real.copy()
    corrupted[np.nonzero(mask)[0]] = 1e30
    corrupted[n + np.nonzero(mask)[0]] = 1e30

    class Double:
        h_real = corrupted
        h_flat_complex = np.zeros(n)

    obs = observe(Double(), sw, sigma=0.0)
    est = estimate(obs, maps, lambda h, t: np.zeros_like(h), SCHED, make_trajectory(200, 10))
    assert np.all(np.isfinite(est.h_real))
    assert np.max(np.abs(est.h_real)) < 1e6
