"""Malliavin covariance matrices of the stochastic flow, two ways.

For a frozen trajectory on [0, t] the covariance quadratic form is

    <M_t phi, phi> = sum_k sigma_k^2 int_0^t <J_{s,t} e_k, phi>^2 ds
                   = sum_k sigma_k^2 int_0^t <e_k, J*_{s,t} phi>^2 ds,

summing over the forced modes.  The adjoint representation is the
production path: one backward solve per basis vector records the traces
<e_k, J*_{s,t} phi_a> at every grid time, and a trapezoidal quadrature
assembles all matrix entries from them.  The forward representation
propagates J_{s,t} e_k from every grid time instead; it scales
quadratically in the step count and is kept, behind a size guard, as a
cross-validation of the adjoint assembly.

The smallest eigenvalue of the basis-projected matrix serves as the
degeneracy statistic: `tail_statistics` estimates its small-value
exceedance probabilities over an ensemble of independent trajectories.
That statistic is a computable surrogate (a projection-restricted
minimum) for the constrained small-ball infimum over unit fields, and
every report carries a label saying so.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from fewmode.errors import CostGuardError, NumericalError
from fewmode.lattice import ModeSet
from fewmode.spectral import SpectralField, Truncation
from fewmode.dynamics import (
    ModelParams,
    SeedRecord,
    Stepper,
    Trajectory,
    simulate,
)

FORWARD_MAX_DIM = 50
FORWARD_MAX_STEPS = 2000

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

SURROGATE_LABEL = (
    "min-eigenvalue surrogate: smallest eigenvalue of the covariance matrix "
    "projected on the basis span, in place of the constrained infimum over "
    "unit fields with bounded gradient norm"
)


@dataclass(frozen=True)
class ProjectionBasis:
    """Orthonormal mode basis spanning the projection subspace."""

    trunc: Truncation
    modes: ModeSet

    def __post_init__(self):
        if len(self.modes) == 0:
            raise ValueError("projection basis must contain at least one mode")
        outside = [m for m in self.modes if m not in self.trunc]
        if outside:
            raise ValueError(f"basis modes outside the truncation: {outside}")
        indices = np.array([self.trunc.index_of(m) for m in self.modes], dtype=np.intp)
        object.__setattr__(self, "indices", indices)

    indices: np.ndarray = field(init=False, repr=False)

    @property
    def size(self) -> int:
        return len(self.modes)

    def vector(self, position: int) -> SpectralField:
        coeff = np.zeros(self.trunc.dim)
        coeff[self.indices[position]] = 1.0
        return SpectralField(self.trunc, coeff)

    def matrix(self) -> np.ndarray:
        """(d, b) matrix whose columns are the unit basis vectors."""
        out = np.zeros((self.trunc.dim, self.size))
        out[self.indices, np.arange(self.size)] = 1.0
        return out


@dataclass
class MalliavinMatrix:
    """Symmetric PSD quadratic form over a projection basis at time t."""

    basis: ProjectionBasis
    entries: np.ndarray
    t: float

    def symmetry_defect(self) -> float:
        return float(np.abs(self.entries - self.entries.T).max())

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.entries + self.entries.T))

    def psd_ok(self, tol: float = 1e-10) -> bool:
        """All eigenvalues above -tol * trace (numerical PSD)."""
        trace = float(np.trace(self.entries))
        return bool(self.eigenvalues().min() >= -tol * max(trace, 1.0))

    def trace(self) -> float:
        return float(np.trace(self.entries))


def _sigma_vector(params: ModelParams) -> np.ndarray:
    return np.array(params.forcing.amplitudes())


def adjoint_noise_traces(
    traj: Trajectory, basis: ProjectionBasis, end_index: int | None = None
) -> np.ndarray:
    """Backward traces <e_k, J*_{s_i, t} phi_a> for all grid times s_i <= t.

    Shape (end_index + 1, m, b): axis 0 is the grid time, axis 1 the
    forced mode, axis 2 the basis vector.  One backward sweep serves
    every basis vector simultaneously.
    """
    if basis.trunc != traj.params.trunc:
        raise ValueError("basis and trajectory use different truncations")
    end = traj.end_index if end_index is None else end_index
    if not (0 <= end <= traj.end_index):
        raise IndexError(f"end_index {end} outside trajectory range")
    stepper = Stepper(traj.params)
    forced = stepper.forced_idx
    block = basis.matrix()
    traces = np.empty((end + 1, len(forced), basis.size))
    traces[end] = block[forced, :]
    for i in range(end - 1, -1, -1):
        block = stepper.adjoint_matrix_step(traj.states[i], block)
        traces[i] = block[forced, :]
    return traces


def _assemble(traces: np.ndarray, sigma: np.ndarray, dt: float) -> np.ndarray:
    weighted = traces * sigma[None, :, None]
    integrand = np.einsum("ska,skb->sab", weighted, weighted)
    return _trapezoid(integrand, dx=dt, axis=0)


def malliavin_adjoint(
    traj: Trajectory, basis: ProjectionBasis, end_index: int | None = None
) -> MalliavinMatrix:
    """Covariance matrix via one backward adjoint solve per basis vector."""
    end = traj.end_index if end_index is None else end_index
    traces = adjoint_noise_traces(traj, basis, end)
    entries = _assemble(traces, _sigma_vector(traj.params), traj.params.dt)
    return MalliavinMatrix(basis, entries, float(traj.times[end]))


def adjoint_diagonal_cumulative(
    traj: Trajectory, basis: ProjectionBasis, end_index: int | None = None
) -> np.ndarray:
    """Diagonal entries as a function of the quadrature upper limit.

    Returns (end_index + 1, b): row u is the trapezoidal integral over
    s in [0, s_u] with the endpoint t fixed.  The integrand is a sum of
    squares, so every column is non-decreasing.
    """
    end = traj.end_index if end_index is None else end_index
    traces = adjoint_noise_traces(traj, basis, end)
    weighted = traces * _sigma_vector(traj.params)[None, :, None]
    diag = (weighted**2).sum(axis=1)  # (end+1, b)
    dt = traj.params.dt
    cum = np.zeros_like(diag)
    cum[1:] = np.cumsum(0.5 * (diag[1:] + diag[:-1]) * dt, axis=0)
    return cum


def malliavin_forward(
    traj: Trajectory, basis: ProjectionBasis, end_index: int | None = None
) -> MalliavinMatrix:
    """Covariance matrix via forward propagation of every injection time.

    Cost grows with (step count)^2; refuses instances beyond d <= 50 or
    2000 steps.  Up to quadrature roundoff this equals the adjoint
    representation and is used to cross-validate it.
    """
    end = traj.end_index if end_index is None else end_index
    if not (0 <= end <= traj.end_index):
        raise IndexError(f"end_index {end} outside trajectory range")
    if basis.trunc != traj.params.trunc:
        raise ValueError("basis and trajectory use different truncations")
    d = traj.params.trunc.dim
    if d > FORWARD_MAX_DIM or end > FORWARD_MAX_STEPS:
        raise CostGuardError(
            "forward representation refused: "
            f"dimension {d} (max {FORWARD_MAX_DIM}) with {end} steps "
            f"(max {FORWARD_MAX_STEPS}); use the adjoint representation"
        )
    stepper = Stepper(traj.params)
    forced = stepper.forced_idx
    m = len(forced)
    bundle = np.zeros((d, (end + 1) * m))
    inject = np.zeros((d, m))
    inject[forced, np.arange(m)] = 1.0
    for i in range(end + 1):
        bundle[:, i * m : (i + 1) * m] = inject
        if i < end:
            bundle[:, : (i + 1) * m] = stepper.tangent_matrix_step(
                traj.states[i], bundle[:, : (i + 1) * m]
            )
    projected = basis.matrix().T @ bundle  # (b, (end+1) m)
    traces = projected.reshape(basis.size, end + 1, m).transpose(1, 2, 0)
    entries = _assemble(traces, _sigma_vector(traj.params), traj.params.dt)
    return MalliavinMatrix(basis, entries, float(traj.times[end]))


def min_eigen(matrix: MalliavinMatrix) -> tuple[float, SpectralField]:
    """Smallest eigenvalue and its unit eigenvector, returned in field form."""
    if not np.isfinite(matrix.entries).all():
        raise NumericalError("covariance matrix contains non-finite entries")
    sym = 0.5 * (matrix.entries + matrix.entries.T)
    values, vectors = np.linalg.eigh(sym)
    coeff = np.zeros(matrix.basis.trunc.dim)
    coeff[matrix.basis.indices] = vectors[:, 0]
    return float(values[0]), SpectralField(matrix.basis.trunc, coeff)


@dataclass
class TailEstimate:
    """Empirical exceedance curve of the degeneracy statistic.

    probabilities[i] estimates P(lambda_min < epsilons[i]) over the
    sampled trajectories; `samples` keeps the raw per-trajectory values
    for diagnostic plots and slope fits.
    """

    epsilons: np.ndarray
    probabilities: np.ndarray
    stderr: np.ndarray
    sample_count: int
    initial_norm: float
    samples: np.ndarray
    surrogate: str = SURROGATE_LABEL


def _lambda_min_one(
    params: ModelParams, w0: SpectralField, t: float, basis: ProjectionBasis, seed: SeedRecord
) -> float:
    traj = simulate(params, w0, t, seed)
    matrix = malliavin_adjoint(traj, basis)
    return min_eigen(matrix)[0]


def tail_statistics(
    params: ModelParams,
    w0: SpectralField,
    basis: ProjectionBasis,
    t: float,
    epsilons,
    n_samples: int,
    seed,
    workers: int = 1,
) -> TailEstimate:
    """Estimate P(lambda_min < eps) on a decreasing epsilon grid.

    Each trajectory uses its own counter-based stream, so the estimate
    is independent of the worker count.
    """
    if n_samples < 100:
        raise ValueError("tail statistics need at least 100 samples")
    eps = np.asarray(list(epsilons), dtype=np.float64)
    if len(eps) < 1 or not (eps > 0).all() or not (np.diff(eps) < 0).all():
        raise ValueError("epsilons must be positive and strictly decreasing")
    master = seed if isinstance(seed, SeedRecord) else SeedRecord(int(seed))

    def one(i: int) -> float:
        return _lambda_min_one(
            params, w0, t, basis, SeedRecord(master.master, master.stream + i)
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = np.array(list(pool.map(one, range(n_samples))))
    else:
        samples = np.array([one(i) for i in range(n_samples)])
    probabilities = (samples[None, :] < eps[:, None]).mean(axis=1)
    stderr = np.sqrt(probabilities * (1.0 - probabilities) / n_samples)
    return TailEstimate(
        eps, probabilities, stderr, n_samples, w0.norm_l2(), samples
    )
