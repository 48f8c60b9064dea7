"""Time averages, two-start gaps, projected histograms, gradient identity."""

import numpy as np
import pytest
from scipy import stats

from fewmode.errors import UncertifiedModeError
from fewmode.lattice import ForcingSpec, ModeSet
from fewmode.spectral import SpectralField, Truncation
from fewmode.dynamics import ModelParams, SeedRecord, Trajectory, simulate
from fewmode.ergodic import (
    Observable,
    batch_means_stderr,
    certified_reachable_modes,
    gradient_semigroup,
    projected_density,
    time_average,
    two_start_convergence,
)

from conftest import EQUAL_NORMS, FOUR_MODES, random_field


def four_mode_params(radius=3, nu=0.5, dt=1e-3, **kw):
    return ModelParams(
        nu=nu, forcing=ForcingSpec.uniform(FOUR_MODES), trunc=Truncation(radius), dt=dt, **kw
    )


def ou_params(nu=1.0, dt=2e-3, sigma=1.0):
    return ModelParams(
        nu=nu,
        forcing=ForcingSpec.uniform([(0, 1), (0, -1)], sigma),
        trunc=Truncation(1),
        dt=dt,
        linear=True,
    )


def constant_trajectory(params, w0, n=100):
    states = np.tile(w0.coeff, (n + 1, 1))
    times = np.arange(n + 1) * params.dt
    noise = np.zeros((n, len(params.forcing.modes)))
    return Trajectory(params, times, states, noise, SeedRecord(0))


# ---------------------------------------------------------------------------
# observables


def test_observable_values(trunc3):
    w = SpectralField.from_coefficients(trunc3, {(0, 1): 3.0, (1, 1): 4.0})
    assert Observable.energy().value(w) == pytest.approx(25.0)
    assert Observable.enstrophy().value(w) == pytest.approx(9.0 + 2.0 * 16.0)
    assert Observable.mode_coeff((1, 1)).value(w) == pytest.approx(4.0)
    assert Observable.pair_product((0, 1), (1, 1)).value(w) == pytest.approx(12.0)
    assert Observable.bounded_exp().value(w) == pytest.approx(1.0 - np.exp(-25.0))


def test_observable_validation():
    with pytest.raises(ValueError):
        Observable("nonsense")
    with pytest.raises(ValueError):
        Observable("mode_coeff")
    with pytest.raises(ValueError):
        Observable("mode_pair_product", mode=(0, 1))


def test_bounded_exp_stays_in_unit_interval(trunc3):
    rng = np.random.default_rng(3)
    obs = Observable.bounded_exp()
    states = rng.standard_normal((200, trunc3.dim)) * 3.0
    values = obs.value_path(states, trunc3)
    assert ((values >= 0.0) & (values <= 1.0)).all()


def test_observable_gradients(trunc3):
    rng = np.random.default_rng(5)
    w = random_field(trunc3, rng)
    assert np.array_equal(Observable.energy().gradient(w).coeff, 2.0 * w.coeff)
    g = Observable.mode_coeff((1, 0)).gradient(w)
    assert g.coeff[trunc3.index_of((1, 0))] == 1.0 and np.abs(g.coeff).sum() == 1.0
    gb = Observable.bounded_exp().gradient(w)
    scale = 2.0 * np.exp(-w.norm_l2() ** 2)
    assert np.allclose(gb.coeff, scale * w.coeff)
    for obs in (Observable.enstrophy(), Observable.pair_product((0, 1), (1, 0))):
        with pytest.raises(ValueError):
            obs.gradient(w)


def test_gradient_finite_difference(trunc3):
    rng = np.random.default_rng(7)
    w = random_field(trunc3, rng, 0.5)
    xi = random_field(trunc3, rng)
    eps = 1e-7
    for obs in (Observable.energy(), Observable.bounded_exp(), Observable.mode_coeff((1, 1))):
        bumped = SpectralField(trunc3, w.coeff + eps * xi.coeff)
        fd = (obs.value(bumped) - obs.value(w)) / eps
        assert fd == pytest.approx(obs.gradient(w).inner(xi), rel=1e-5, abs=1e-7)


# ---------------------------------------------------------------------------
# time averages


def test_time_average_constant_path():
    params = four_mode_params(radius=2)
    w0 = SpectralField.from_coefficients(params.trunc, {(1, 1): 2.0})
    traj = constant_trajectory(params, w0)
    avg = time_average(traj, Observable.energy())
    assert np.allclose(avg.averages, 4.0)


def test_time_average_zero_path():
    params = four_mode_params(radius=2)
    traj = constant_trajectory(params, SpectralField.zero(params.trunc))
    assert not time_average(traj, Observable.energy()).averages.any()


def test_time_average_ou_second_moment():
    # forced-mode squared coefficient averages to sigma^2 / (2 nu |k|^2)
    params = ou_params(dt=5e-3)
    obs = Observable.pair_product((0, 1), (0, 1))
    traj = simulate(params, SpectralField.zero(params.trunc), 200.0, 101)
    avg = time_average(traj, obs)
    values = obs.value_path(traj.states, params.trunc)
    se = batch_means_stderr(values)
    assert abs(avg.averages[-1] - 0.5) <= 3.0 * se


def test_batch_means_sanity():
    rng = np.random.default_rng(11)
    values = rng.standard_normal(30_000)
    se = batch_means_stderr(values)
    assert se == pytest.approx(1.0 / np.sqrt(30_000), rel=0.5)
    with pytest.raises(ValueError):
        batch_means_stderr(np.arange(10))


# ---------------------------------------------------------------------------
# two-start diagnostics


def test_two_start_matched_seed_gap_zero():
    params = four_mode_params(radius=2, dt=2e-3)
    w0 = SpectralField.zero(params.trunc)
    res = two_start_convergence(
        params, w0, w0, Observable.bounded_exp(), 1.0, (SeedRecord(5), SeedRecord(5))
    )
    assert res.final_gap == 0.0
    assert not res.gap.any()


def test_two_start_reports_stderr():
    params = four_mode_params(radius=2, dt=2e-3)
    w0a = SpectralField.zero(params.trunc)
    w0b = SpectralField.from_coefficients(params.trunc, {(1, 1): 2.0})
    res = two_start_convergence(
        params, w0a, w0b, Observable.bounded_exp(), 2.0, (SeedRecord(5, 0), SeedRecord(5, 1))
    )
    assert res.stderr_a > 0 and res.stderr_b > 0
    assert res.combined_stderr == res.stderr_a + res.stderr_b
    assert len(res.gap) == len(res.times)
    # running averages of a [0, 1]-bounded observable stay in [0, 1]
    for series in (res.averages_a, res.averages_b):
        assert ((series >= 0.0) & (series <= 1.0)).all()


def test_viscous_decay_averages_agree_without_noise():
    # deterministic dissipation: distinct starts both average toward zero energy
    from fewmode.dynamics import simulate_with_noise

    params = four_mode_params(radius=2, nu=1.0, dt=2e-3)
    obs = Observable.energy()
    finals = []
    for amp in (1.0, 2.5):
        w0 = SpectralField.from_coefficients(params.trunc, {(0, 1): amp})
        states = simulate_with_noise(params, w0, np.zeros((2500, 4)))
        traj = Trajectory(
            params,
            np.arange(2501) * params.dt,
            states,
            np.zeros((2500, 4)),
            SeedRecord(0),
        )
        finals.append(time_average(traj, obs).averages[-1])
    assert finals[0] < 0.12 and finals[1] < 0.7
    for amp, final in zip((1.0, 2.5), finals):
        assert final < amp**2 * 0.11  # time average of exp decay ~ 1/(2 nu |k|^2 T)


# ---------------------------------------------------------------------------
# projected histograms


def test_density_requires_certified_modes():
    params = ModelParams(
        nu=0.5, forcing=ForcingSpec.uniform(EQUAL_NORMS), trunc=Truncation(3), dt=1e-3
    )
    certified = certified_reachable_modes(params)
    assert ModeSet(EQUAL_NORMS).issubset(certified)
    assert (2, 2) not in certified
    with pytest.raises(UncertifiedModeError) as info:
        projected_density(params, SpectralField.zero(params.trunc), [(2, 2)], 0.1, 10, 5, 1)
    assert "(2,2)" in str(info.value)


def test_density_four_mode_everything_certified(trunc4):
    params = four_mode_params(radius=4)
    certified = certified_reachable_modes(params)
    assert len(certified) == trunc4.dim


def test_density_validation():
    params = four_mode_params(radius=2)
    w0 = SpectralField.zero(params.trunc)
    with pytest.raises(ValueError):
        projected_density(params, w0, [(0, 1)], 0.1, 0, 5, 1)
    with pytest.raises(ValueError):
        projected_density(
            params, w0, [(0, 1), (0, -1), (1, 1), (-1, -1)], 0.1, 10, 5, 1
        )


def test_density_linear_matches_ou_law():
    params = ou_params()
    w0 = SpectralField.from_coefficients(params.trunc, {(0, 1): 0.5})
    n = 4000
    hist = projected_density(params, w0, [(0, 1)], 1.0, n, 24, 7)
    assert hist.counts.sum() == n
    mean_exact = 0.5 * np.exp(-1.0)
    var_exact = (1.0 - np.exp(-2.0)) / 2.0
    centers = 0.5 * (hist.edges[0][1:] + hist.edges[0][:-1])
    mean_emp = float((centers * hist.counts).sum() / n)
    var_emp = float((centers**2 * hist.counts).sum() / n - mean_emp**2)
    assert abs(mean_emp - mean_exact) <= 4.0 * np.sqrt(var_exact / n)
    assert abs(var_emp - var_exact) <= 4.0 * var_exact * np.sqrt(2.0 / n) + 0.01
    # chi-square against the exact Gaussian on merged bins
    edges = hist.edges[0]
    probs = np.diff(stats.norm.cdf(edges, loc=mean_exact, scale=np.sqrt(var_exact)))
    probs[0] += stats.norm.cdf(edges[0], loc=mean_exact, scale=np.sqrt(var_exact))
    probs[-1] += stats.norm.sf(edges[-1], loc=mean_exact, scale=np.sqrt(var_exact))
    keep = probs * n >= 5
    merged_counts = np.append(hist.counts[keep], hist.counts[~keep].sum())
    merged_probs = np.append(probs[keep], probs[~keep].sum())
    result = stats.chisquare(merged_counts, merged_probs * n)
    assert result.pvalue > 0.01


def test_density_two_mode_histogram_shape():
    params = four_mode_params(radius=2, dt=2e-3)
    hist = projected_density(
        params, SpectralField.zero(params.trunc), [(0, 1), (1, 1)], 0.1, 200, 6, 3
    )
    assert hist.counts.shape == (6, 6)
    assert hist.counts.sum() == 200
    with pytest.raises(ValueError):
        hist.central_mass_bins()


def test_density_worker_invariance():
    params = four_mode_params(radius=2, dt=2e-3)
    a = projected_density(params, SpectralField.zero(params.trunc), [(0, 1)], 0.1, 60, 8, 11, workers=1)
    b = projected_density(params, SpectralField.zero(params.trunc), [(0, 1)], 0.1, 60, 8, 11, workers=3)
    assert np.array_equal(a.counts, b.counts)
    assert np.array_equal(a.edges[0], b.edges[0])


def test_central_mass_bins():
    params = four_mode_params(radius=2, dt=2e-3)
    hist = projected_density(
        params, SpectralField.zero(params.trunc), [(0, 1)], 0.2, 500, 12, 13
    )
    band = hist.central_mass_bins()
    assert band.sum() >= 0.5 * hist.sample_count
    assert len(band) < len(hist.counts)


# ---------------------------------------------------------------------------
# semigroup gradient


def test_gradient_linear_exact_zero_variance():
    params = ou_params(nu=0.7, dt=1e-3)
    w0 = SpectralField.from_coefficients(params.trunc, {(0, 1): 0.4})
    xi = SpectralField.from_coefficients(params.trunc, {(0, 1): 2.0, (1, 0): 1.0})
    obs = Observable.mode_coeff((0, 1))
    estimate, stderr = gradient_semigroup(params, w0, obs, xi, 0.5, 8, 3)
    assert stderr <= 1e-14
    assert estimate == pytest.approx(2.0 * np.exp(-0.7 * 0.5), rel=1e-12)


def test_gradient_zero_direction():
    params = four_mode_params(radius=2, dt=2e-3)
    estimate, stderr = gradient_semigroup(
        params,
        SpectralField.zero(params.trunc),
        Observable.energy(),
        SpectralField.zero(params.trunc),
        0.1,
        4,
        9,
    )
    assert estimate == 0.0 and stderr == 0.0


def test_gradient_linearity_in_direction():
    params = four_mode_params(radius=2, dt=2e-3)
    rng = np.random.default_rng(17)
    w0 = random_field(params.trunc, rng, 0.3)
    xi = random_field(params.trunc, rng)
    double = SpectralField(params.trunc, 2.0 * xi.coeff)
    obs = Observable.bounded_exp()
    a, _ = gradient_semigroup(params, w0, obs, xi, 0.1, 6, 21)
    b, _ = gradient_semigroup(params, w0, obs, double, 0.1, 6, 21)
    assert b == pytest.approx(2.0 * a, rel=1e-12)


def test_gradient_rejects_unsupported_observable():
    params = four_mode_params(radius=2)
    w0 = SpectralField.zero(params.trunc)
    with pytest.raises(ValueError):
        gradient_semigroup(params, w0, Observable.enstrophy(), w0, 0.1, 4, 1)


def test_gradient_matches_bumped_semigroup():
    # independent check: finite difference of E[f(w_t)] in the start, common noise
    params = four_mode_params(radius=2, dt=1e-3)
    rng = np.random.default_rng(23)
    w0 = random_field(params.trunc, rng, 0.4)
    xi = random_field(params.trunc, rng)
    obs = Observable.energy()
    n, t, eps = 40, 0.2, 1e-6
    estimate, _ = gradient_semigroup(params, w0, obs, xi, t, n, 31)
    bumped = SpectralField(params.trunc, w0.coeff + eps * xi.coeff)
    from fewmode.dynamics import draw_noise, simulate_with_noise

    fd_values = []
    for i in range(n):
        noise = draw_noise(params, 200, SeedRecord(31, i))
        base_end = simulate_with_noise(params, w0, noise)[-1]
        bump_end = simulate_with_noise(params, bumped, noise)[-1]
        fd_values.append(
            (obs.value(SpectralField(params.trunc, bump_end)) - obs.value(SpectralField(params.trunc, base_end))) / eps
        )
    assert estimate == pytest.approx(np.mean(fd_values), rel=1e-3, abs=1e-4)
