"""Ergodicity and density diagnostics from simulated trajectories.

Uniqueness of the invariant law cannot be certified by a finite run, so
everything here is a consistency diagnostic: running time averages with
batch-means error bars, the gap between averages started from two
different states, histograms of low-dimensional projections of the
time-t law, and the Monte-Carlo gradient identity

    <grad (P_t f)(w), xi> = E[ (grad f)(w_t) . J_{0,t} xi ],

which is exact for the discrete scheme because the tangent flow is the
exact derivative of the step map.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from fewmode.errors import UncertifiedModeError
from fewmode.lattice import Mode, ModeSet, as_mode, cascade_closure, symmetric_part
from fewmode.spectral import SpectralField, Truncation
from fewmode.dynamics import (
    ModelParams,
    SeedRecord,
    Trajectory,
    linear_endpoint_ensemble,
    simulate,
    tangent_flow,
)

OBSERVABLE_KINDS = (
    "energy_l2",
    "enstrophy_h1",
    "mode_coeff",
    "mode_pair_product",
    "bounded_exp",
)

_GRADIENT_KINDS = ("energy_l2", "mode_coeff", "bounded_exp")


@dataclass(frozen=True)
class Observable:
    """Scalar function of the vorticity state.

    Kinds: energy_l2 (|w|^2), enstrophy_h1 (|w|_1^2), mode_coeff (one
    coefficient), mode_pair_product (product of two coefficients) and
    bounded_exp (1 - exp(-|w|^2), bounded by 1).
    """

    kind: str
    mode: Mode | None = None
    mode2: Mode | None = None

    def __post_init__(self):
        if self.kind not in OBSERVABLE_KINDS:
            raise ValueError(f"unknown observable kind {self.kind!r}")
        if self.kind in ("mode_coeff", "mode_pair_product") and self.mode is None:
            raise ValueError(f"observable {self.kind} needs a mode")
        if self.kind == "mode_pair_product" and self.mode2 is None:
            raise ValueError("mode_pair_product needs a second mode")

    @classmethod
    def energy(cls) -> "Observable":
        return cls("energy_l2")

    @classmethod
    def enstrophy(cls) -> "Observable":
        return cls("enstrophy_h1")

    @classmethod
    def mode_coeff(cls, mode) -> "Observable":
        return cls("mode_coeff", as_mode(mode))

    @classmethod
    def pair_product(cls, mode, mode2) -> "Observable":
        return cls("mode_pair_product", as_mode(mode), as_mode(mode2))

    @classmethod
    def bounded_exp(cls) -> "Observable":
        return cls("bounded_exp")

    @property
    def is_bounded(self) -> bool:
        return self.kind == "bounded_exp"

    @property
    def has_gradient(self) -> bool:
        return self.kind in _GRADIENT_KINDS

    def value_path(self, states: np.ndarray, trunc: Truncation) -> np.ndarray:
        """Evaluate along a (n, d) array of states."""
        states = np.atleast_2d(states)
        if self.kind == "energy_l2":
            return (states**2).sum(axis=1)
        if self.kind == "enstrophy_h1":
            return states**2 @ trunc.norm_sq
        if self.kind == "mode_coeff":
            return states[:, trunc.index_of(self.mode)].copy()
        if self.kind == "mode_pair_product":
            return states[:, trunc.index_of(self.mode)] * states[:, trunc.index_of(self.mode2)]
        return 1.0 - np.exp(-((states**2).sum(axis=1)))

    def value(self, w: SpectralField) -> float:
        return float(self.value_path(w.coeff[None, :], w.trunc)[0])

    def gradient(self, w: SpectralField) -> SpectralField:
        if self.kind == "energy_l2":
            return SpectralField(w.trunc, 2.0 * w.coeff)
        if self.kind == "mode_coeff":
            return SpectralField.basis(w.trunc, self.mode)
        if self.kind == "bounded_exp":
            scale = 2.0 * np.exp(-float(np.dot(w.coeff, w.coeff)))
            return SpectralField(w.trunc, scale * w.coeff)
        raise ValueError(f"observable kind {self.kind!r} has no implemented gradient")

    def label(self) -> str:
        if self.kind == "mode_coeff":
            return f"mode_coeff[{self.mode.k1},{self.mode.k2}]"
        if self.kind == "mode_pair_product":
            return (
                f"mode_pair_product[{self.mode.k1},{self.mode.k2};"
                f"{self.mode2.k1},{self.mode2.k2}]"
            )
        return self.kind


@dataclass
class RunningAverage:
    """Trapezoidal time average A_T = (1/T) int_0^T f(w_t) dt at each grid time."""

    times: np.ndarray
    averages: np.ndarray
    observable: Observable
    seed: SeedRecord


def time_average(traj: Trajectory, obs: Observable) -> RunningAverage:
    if traj.end_index < 1:
        raise ValueError("trajectory must contain at least one step")
    values = obs.value_path(traj.states, traj.params.trunc)
    steps = np.diff(traj.times)
    cumulative = np.concatenate(
        [[0.0], np.cumsum(0.5 * (values[1:] + values[:-1]) * steps)]
    )
    averages = np.empty_like(values)
    averages[0] = values[0]  # limit convention at T = 0
    averages[1:] = cumulative[1:] / traj.times[1:]
    return RunningAverage(traj.times.copy(), averages, obs, traj.seed)


def batch_means_stderr(values: np.ndarray, n_batches: int = 30) -> float:
    """Standard error of the mean from contiguous batch means."""
    values = np.asarray(values)
    if len(values) < n_batches:
        raise ValueError(f"need at least {n_batches} samples for batch means")
    usable = len(values) - (len(values) % n_batches)
    batches = values[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(batches.std(ddof=1) / np.sqrt(n_batches))


@dataclass
class TwoStartResult:
    """Paired running averages from two starts and their gap series."""

    times: np.ndarray
    averages_a: np.ndarray
    averages_b: np.ndarray
    gap: np.ndarray
    stderr_a: float
    stderr_b: float
    seeds: tuple[SeedRecord, SeedRecord]

    @property
    def final_gap(self) -> float:
        return float(self.gap[-1])

    @property
    def combined_stderr(self) -> float:
        return self.stderr_a + self.stderr_b


def two_start_convergence(
    params: ModelParams,
    w0a: SpectralField,
    w0b: SpectralField,
    obs: Observable,
    T: float,
    seeds,
    n_batches: int = 30,
) -> TwoStartResult:
    """Independent-noise runs from two starts; report |A_T(a) - A_T(b)|.

    When the invariant law is unique both averages estimate the same
    number, so the gap should shrink below the combined batch-means
    error; nothing stronger than that consistency is claimed.
    """
    seed_a, seed_b = (
        s if isinstance(s, SeedRecord) else SeedRecord(int(s)) for s in seeds
    )
    traj_a = simulate(params, w0a, T, seed_a)
    traj_b = simulate(params, w0b, T, seed_b)
    avg_a = time_average(traj_a, obs)
    avg_b = time_average(traj_b, obs)
    values_a = obs.value_path(traj_a.states, params.trunc)
    values_b = obs.value_path(traj_b.states, params.trunc)
    return TwoStartResult(
        avg_a.times,
        avg_a.averages,
        avg_b.averages,
        np.abs(avg_a.averages - avg_b.averages),
        batch_means_stderr(values_a, n_batches),
        batch_means_stderr(values_b, n_batches),
        (seed_a, seed_b),
    )


def certified_reachable_modes(params: ModelParams) -> ModeSet:
    """Forced modes plus the boxed cascade closure of their symmetric part."""
    closure, _ = cascade_closure(
        symmetric_part(params.forcing.modes), params.trunc.radius
    )
    return closure.union(params.forcing.modes)


@dataclass
class ProjectedHistogram:
    """Histogram of projected coefficients at a fixed time.

    Axes follow the lexicographic order of `modes`; bin edges cover the
    sampled range per axis and counts sum to `sample_count`.
    """

    modes: ModeSet
    edges: list[np.ndarray]
    counts: np.ndarray
    sample_count: int

    def central_mass_bins(self) -> np.ndarray:
        """1D only: counts of the bins holding the central 50% of the mass."""
        if self.counts.ndim != 1:
            raise ValueError("central mass band is defined for one-mode histograms")
        cum = np.cumsum(self.counts)
        lo, hi = 0.25 * self.sample_count, 0.75 * self.sample_count
        keep = (cum >= lo) & ((cum - self.counts) <= hi)
        return self.counts[keep]


def _endpoint_states(
    params: ModelParams,
    w0: SpectralField,
    T: float,
    n_samples: int,
    seed: SeedRecord,
    workers: int = 1,
) -> np.ndarray:
    """(n_samples, d) endpoint states from independent streams."""
    if params.linear:
        return linear_endpoint_ensemble(params, w0, T, n_samples, seed)

    def one(i: int) -> np.ndarray:
        traj = simulate(params, w0, T, SeedRecord(seed.master, seed.stream + i))
        return traj.states[-1]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(n_samples)))
    else:
        rows = [one(i) for i in range(n_samples)]
    return np.array(rows)


def projected_density(
    params: ModelParams,
    w0: SpectralField,
    modes,
    t_snapshot: float,
    n_samples: int,
    bins: int,
    seed,
    workers: int = 1,
) -> ProjectedHistogram:
    """Empirical histogram of up to three projected coefficients at time t.

    Refuses modes outside the noise-reachable set (forced modes plus
    cascade closure): off that set the time-t law has no reason to admit
    a density and the histogram would be misleading.
    """
    mode_set = ModeSet(modes)
    if not 1 <= len(mode_set) <= 3:
        raise ValueError("projected densities support one to three modes")
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    certified = certified_reachable_modes(params)
    uncertified = [m for m in mode_set if m not in certified]
    if uncertified:
        raise UncertifiedModeError(
            f"modes {uncertified} are outside the noise-reachable set "
            "(forced modes plus cascade closure); projected laws are only "
            "certified to have densities on reachable directions"
        )
    master = seed if isinstance(seed, SeedRecord) else SeedRecord(int(seed))
    states = _endpoint_states(params, w0, t_snapshot, n_samples, master, workers)
    columns = states[:, [params.trunc.index_of(m) for m in mode_set]]
    counts, edges = np.histogramdd(columns, bins=bins)
    counts = counts.astype(np.int64)
    if len(mode_set) == 1:
        counts = counts.reshape(-1)
    return ProjectedHistogram(mode_set, [np.asarray(e) for e in edges], counts, n_samples)


def gradient_semigroup(
    params: ModelParams,
    w0: SpectralField,
    obs: Observable,
    xi: SpectralField,
    t: float,
    n_samples: int,
    seed,
) -> tuple[float, float]:
    """Monte-Carlo estimate of <grad (P_t f)(w0), xi> with its standard error.

    Each sample couples one trajectory with one tangent solve along it;
    the identity is exact per sample for the discrete scheme, so the
    only error is statistical.
    """
    if not obs.has_gradient:
        raise ValueError(
            f"observable kind {obs.kind!r} has no implemented gradient; "
            f"supported: {', '.join(_GRADIENT_KINDS)}"
        )
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    master = seed if isinstance(seed, SeedRecord) else SeedRecord(int(seed))
    values = np.empty(n_samples)
    for i in range(n_samples):
        traj = simulate(params, w0, t, SeedRecord(master.master, master.stream + i))
        moved = tangent_flow(traj, xi, 0, traj.end_index)
        values[i] = obs.gradient(traj.state_field(traj.end_index)).inner(moved)
    estimate = float(values.mean())
    stderr = float(values.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    return estimate, stderr
