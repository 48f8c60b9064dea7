"""Time integration of the truncated stochastic vorticity equation.

Each Fourier coefficient obeys

    d alpha_k = (-nu |k|^2 alpha_k - B(w, w)_k) dt + sigma_k dW_k,

with noise only on the forced modes.  The default scheme treats the
stiff diagonal part exactly (exponential Euler):

    alpha <- e^z alpha + phi1(z) dt (-B(w, w)) + e^z sigma dW,

with z = -nu |k|^2 dt and phi1(z) = (e^z - 1)/z; the noise enters
multiplied by the decay factor (end-of-step convention, fixed so runs
are reproducible).  A plain Euler-Maruyama scheme is kept as a
cross-check and carries an explicit stability guard.

The linearized (tangent) flow propagates perturbations along a stored
trajectory; the adjoint flow applies the exact transpose of each
discrete tangent step backward in time, so the duality
<J xi, phi> = <xi, J* phi> holds to roundoff rather than to O(dt).

Randomness is counter-based: every trajectory draws its increments from
a Philox stream keyed by (master seed, stream index), which makes
ensembles reproducible independently of evaluation order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from fewmode.errors import BlowupError
from fewmode.lattice import ForcingSpec, Mode
from fewmode.spectral import (
    SpectralField,
    TriadTable,
    Truncation,
    advection_jacobian_apply,
    advection_jacobian_apply_t,
    advection_jacobian_dense,
    bilinear_coeff,
    get_triad_table,
)


class Scheme(str, Enum):
    EXPONENTIAL_EULER = "exponential_euler"
    EULER_MARUYAMA = "euler_maruyama"


@dataclass(frozen=True)
class SeedRecord:
    """Master seed plus stream index; one stream per trajectory."""

    master: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= self.master < 2**64):
            raise ValueError("master seed must fit in 64 unsigned bits")
        if self.stream < 0:
            raise ValueError("stream index must be non-negative")


def philox_generator(seed: SeedRecord) -> np.random.Generator:
    """Counter-based generator keyed by (master, stream)."""
    key = np.array([seed.master, seed.stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _as_seed(seed) -> SeedRecord:
    if isinstance(seed, SeedRecord):
        return seed
    return SeedRecord(int(seed))


@dataclass(frozen=True)
class ModelParams:
    """Viscosity, forcing, truncation and scheme for one model instance."""

    nu: float
    forcing: ForcingSpec
    trunc: Truncation
    dt: float
    scheme: Scheme = Scheme.EXPONENTIAL_EULER
    linear: bool = False  # drop the advection term (diagnostic mode)

    def __post_init__(self):
        if not (self.nu > 0.0 and np.isfinite(self.nu)):
            raise ValueError("viscosity nu must be positive and finite")
        if not (self.dt > 0.0 and np.isfinite(self.dt)):
            raise ValueError("step size dt must be positive and finite")
        outside = [m for m in self.forcing.modes if m not in self.trunc]
        if outside:
            raise ValueError(f"forcing modes outside the truncation: {outside}")
        if self.scheme == Scheme.EULER_MARUYAMA:
            max_norm_sq = 2.0 * self.trunc.radius**2
            if self.dt * self.nu * max_norm_sq >= 1.0:
                raise ValueError(
                    "Euler-Maruyama stability guard violated: "
                    f"dt * nu * |k_max|^2 = {self.dt * self.nu * max_norm_sq:.3g} >= 1"
                )


@dataclass
class Trajectory:
    """Full sample path with the driving noise, replayable bitwise."""

    params: ModelParams
    times: np.ndarray  # (n+1,)
    states: np.ndarray  # (n+1, d)
    noise: np.ndarray  # (n, m) raw N(0, dt) increments, scaled at injection
    seed: SeedRecord

    @property
    def n_steps(self) -> int:
        return len(self.noise)

    @property
    def end_index(self) -> int:
        return len(self.times) - 1

    def state_field(self, index: int) -> SpectralField:
        return SpectralField(self.params.trunc, self.states[index].copy())


class Stepper:
    """Precomputed one-step update rule for a fixed ModelParams.

    Pure given immutable inputs; one shared instance may serve any
    number of concurrent trajectory, tangent and adjoint passes.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        trunc = params.trunc
        self._nu_k2 = params.nu * trunc.norm_sq
        z = -self._nu_k2 * params.dt
        self.decay = np.exp(z)
        self.phi1_dt = np.expm1(z) / z * params.dt
        self.forced_idx = np.array(
            [trunc.index_of(m) for m in params.forcing.modes], dtype=np.intp
        )
        sigma = np.array(params.forcing.amplitudes())
        if params.scheme == Scheme.EXPONENTIAL_EULER:
            self.noise_gain = self.decay[self.forced_idx] * sigma
        else:
            self.noise_gain = sigma
        self.table: TriadTable | None = None if params.linear else get_triad_table(trunc)

    @property
    def n_noise(self) -> int:
        return len(self.forced_idx)

    def _advance(self, state: np.ndarray, dw: np.ndarray) -> np.ndarray:
        if self.params.scheme == Scheme.EXPONENTIAL_EULER:
            if self.table is None:
                new = self.decay * state
            else:
                new = self.decay * state + self.phi1_dt * (
                    -bilinear_coeff(self.table, state, state)
                )
        else:
            drift = -self._nu_k2 * state
            if self.table is not None:
                drift = drift - bilinear_coeff(self.table, state, state)
            new = state + self.params.dt * drift
        new[self.forced_idx] += self.noise_gain * dw
        return new

    def step(self, state: np.ndarray, dw: np.ndarray) -> np.ndarray:
        """One step; dw holds one N(0, dt) sample per forced mode."""
        state = np.asarray(state, dtype=np.float64)
        dw = np.asarray(dw, dtype=np.float64)
        if dw.shape != (self.n_noise,):
            raise ValueError(f"expected {self.n_noise} noise increments, got {dw.shape}")
        if not np.isfinite(state).all() or not np.isfinite(dw).all():
            raise ValueError("non-finite state or noise increment")
        return self._advance(state, dw)

    def tangent_step(self, base: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Derivative of the step map at `base`, applied to xi (noise drops out)."""
        if self.table is None:
            jac = None
        else:
            jac = advection_jacobian_apply(self.table, base, xi)
        if self.params.scheme == Scheme.EXPONENTIAL_EULER:
            if jac is None:
                return self.decay * xi
            return self.decay * xi + self.phi1_dt * (-jac)
        drift = -self._nu_k2 * xi
        if jac is not None:
            drift = drift - jac
        return xi + self.params.dt * drift

    def adjoint_step(self, base: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """Exact transpose of `tangent_step` at the same base state."""
        if self.params.scheme == Scheme.EXPONENTIAL_EULER:
            out = self.decay * phi
            if self.table is not None:
                out = out - advection_jacobian_apply_t(
                    self.table, base, self.phi1_dt * phi
                )
            return out
        out = phi + self.params.dt * (-self._nu_k2 * phi)
        if self.table is not None:
            out = out - self.params.dt * advection_jacobian_apply_t(self.table, base, phi)
        return out

    def tangent_matrix_step(self, base: np.ndarray, block: np.ndarray) -> np.ndarray:
        """Tangent step applied to the columns of a (d, b) block."""
        if self.table is None:
            jac = None
        else:
            jac = advection_jacobian_dense(self.table, base) @ block
        if self.params.scheme == Scheme.EXPONENTIAL_EULER:
            out = self.decay[:, None] * block
            if jac is not None:
                out -= self.phi1_dt[:, None] * jac
            return out
        out = block - self.params.dt * (self._nu_k2[:, None] * block)
        if jac is not None:
            out -= self.params.dt * jac
        return out

    def adjoint_matrix_step(self, base: np.ndarray, block: np.ndarray) -> np.ndarray:
        """Adjoint step applied to the columns of a (d, b) block."""
        jac_t = None if self.table is None else advection_jacobian_dense(self.table, base).T
        if self.params.scheme == Scheme.EXPONENTIAL_EULER:
            out = self.decay[:, None] * block
            if jac_t is not None:
                out -= jac_t @ (self.phi1_dt[:, None] * block)
            return out
        out = block - self.params.dt * (self._nu_k2[:, None] * block)
        if jac_t is not None:
            out -= self.params.dt * (jac_t @ block)
        return out


def _n_steps(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ValueError(f"horizon T={T} is not an integral number of steps of dt={dt}")
    return n


def draw_noise(params: ModelParams, n_steps: int, seed: SeedRecord) -> np.ndarray:
    """All increments of one trajectory in a single counter-based block."""
    gen = philox_generator(seed)
    m = len(params.forcing.modes)
    return gen.standard_normal((n_steps, m)) * np.sqrt(params.dt)


def simulate_with_noise(
    params: ModelParams, w0: SpectralField, noise: np.ndarray, stepper: Stepper | None = None
) -> np.ndarray:
    """Deterministic replay: states array driven by the given increments."""
    stepper = stepper or Stepper(params)
    if w0.trunc != params.trunc:
        raise ValueError("initial state and params use different truncations")
    n = len(noise)
    states = np.empty((n + 1, params.trunc.dim))
    states[0] = w0.coeff
    # overflow surfaces as a BlowupError with the offending index, not a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            states[i + 1] = stepper._advance(states[i], noise[i])
            if not np.isfinite(states[i + 1]).all():
                raise BlowupError(i + 1)
    return states


def simulate(params: ModelParams, w0: SpectralField, T: float, seed) -> Trajectory:
    """Integrate to time T; a pure function of (params, w0, T, seed)."""
    seed = _as_seed(seed)
    n = _n_steps(T, params.dt)
    noise = draw_noise(params, n, seed)
    states = simulate_with_noise(params, w0, noise)
    times = np.arange(n + 1) * params.dt
    return Trajectory(params, times, states, noise, seed)


def _check_indices(traj: Trajectory, s_index: int, t_index: int) -> None:
    if not (0 <= s_index <= t_index <= traj.end_index):
        raise IndexError(
            f"need 0 <= s_index <= t_index <= {traj.end_index}, got ({s_index}, {t_index})"
        )


@dataclass
class TangentPath:
    """Perturbation propagated forward along a base trajectory.

    xi[i] is the linearized state at grid time i, with xi[0] the seed;
    each step applies the derivative of the scheme at the stored base
    state (noise does not enter the linearization).
    """

    base: Trajectory
    xi0: SpectralField
    xi: np.ndarray  # (n+1, d)


@dataclass
class AdjointPath:
    """Costate propagated backward along a base trajectory.

    phi[i] holds the transpose flow from the terminal index down to i;
    phi[-1] is the terminal condition and each backward step applies the
    exact transpose of the corresponding forward tangent step.
    """

    base: Trajectory
    phi_t: SpectralField
    phi: np.ndarray  # (n+1, d)


def tangent_path(traj: Trajectory, xi0: SpectralField) -> TangentPath:
    """Record the linearized flow at every grid time of the trajectory."""
    if xi0.trunc != traj.params.trunc:
        raise ValueError("perturbation and trajectory use different truncations")
    stepper = Stepper(traj.params)
    out = np.empty_like(traj.states)
    out[0] = xi0.coeff
    for i in range(traj.end_index):
        out[i + 1] = stepper.tangent_step(traj.states[i], out[i])
    return TangentPath(traj, xi0, out)


def adjoint_path(traj: Trajectory, phi_t: SpectralField) -> AdjointPath:
    """Record the transpose flow from the trajectory end at every grid time."""
    if phi_t.trunc != traj.params.trunc:
        raise ValueError("costate and trajectory use different truncations")
    stepper = Stepper(traj.params)
    out = np.empty_like(traj.states)
    out[-1] = phi_t.coeff
    for i in range(traj.end_index - 1, -1, -1):
        out[i] = stepper.adjoint_step(traj.states[i], out[i + 1])
    return AdjointPath(traj, phi_t, out)


def tangent_flow(
    traj: Trajectory, xi0: SpectralField, s_index: int, t_index: int
) -> SpectralField:
    """Propagate a perturbation through the linearized scheme along traj."""
    _check_indices(traj, s_index, t_index)
    if xi0.trunc != traj.params.trunc:
        raise ValueError("perturbation and trajectory use different truncations")
    stepper = Stepper(traj.params)
    xi = xi0.coeff.copy()
    for i in range(s_index, t_index):
        xi = stepper.tangent_step(traj.states[i], xi)
    return SpectralField(traj.params.trunc, xi)


def adjoint_flow(
    traj: Trajectory, phi_t: SpectralField, s_index: int, t_index: int
) -> SpectralField:
    """Transpose propagation, backward from t_index to s_index."""
    _check_indices(traj, s_index, t_index)
    if phi_t.trunc != traj.params.trunc:
        raise ValueError("costate and trajectory use different truncations")
    stepper = Stepper(traj.params)
    phi = phi_t.coeff.copy()
    for i in range(t_index - 1, s_index - 1, -1):
        phi = stepper.adjoint_step(traj.states[i], phi)
    return SpectralField(traj.params.trunc, phi)


def linear_endpoint_ensemble(
    params: ModelParams,
    w0: SpectralField,
    T: float,
    n_samples: int,
    seed,
    first_stream: int = 0,
    chunk: int = 1024,
) -> np.ndarray:
    """Endpoint states of many noise-independent linear trajectories.

    Only valid with the advection term disabled, where the update is
    diagonal and vectorizes across the ensemble.  Sample i consumes the
    same Philox stream (master, first_stream + i) and the same
    arithmetic as a scalar `simulate` call, so results agree bitwise
    with the one-path code.
    """
    if not params.linear:
        raise ValueError("the vectorized ensemble requires the linear diagnostic mode")
    seed = _as_seed(seed)
    stepper = Stepper(params)
    n = _n_steps(T, params.dt)
    out = np.empty((n_samples, params.trunc.dim))
    for start in range(0, n_samples, chunk):
        stop = min(start + chunk, n_samples)
        block = np.stack(
            [
                draw_noise(
                    params, n, SeedRecord(seed.master, seed.stream + first_stream + i)
                )
                for i in range(start, stop)
            ]
        )  # (b, n, m)
        states = np.tile(w0.coeff, (stop - start, 1))
        for i in range(n):
            states = stepper.decay * states
            states[:, stepper.forced_idx] += stepper.noise_gain * block[:, i, :]
        if not np.isfinite(states).all():
            raise BlowupError(n)
        out[start:stop] = states
    return out


def trajectory_to_csv(traj: Trajectory, record_modes: list[Mode] | None = None) -> str:
    """Time series of selected coefficients and both norms, 17 digits."""
    trunc = traj.params.trunc
    if record_modes is None:
        record_modes = list(traj.params.forcing.modes)
    cols = [(m, trunc.index_of(m)) for m in record_modes]
    lines = [
        ",".join(
            ["t"]
            + [f"coeff_{m.k1}_{m.k2}" for m, _ in cols]
            + ["norm_l2", "norm_h1"]
        )
    ]
    h1_weight = trunc.norm_sq
    for i, t in enumerate(traj.times):
        row = traj.states[i]
        values = [format(t, ".17g")]
        values += [format(row[idx], ".17g") for _, idx in cols]
        values.append(format(float(np.sqrt(np.dot(row, row))), ".17g"))
        values.append(format(float(np.sqrt(np.dot(h1_weight * row, row))), ".17g"))
        lines.append(",".join(values))
    return "\n".join(lines) + "\n"


_BINARY_MAGIC = b"FMSTATE\x00"
_BINARY_VERSION = 1


def save_states_binary(traj: Trajectory, path) -> None:
    """Little-endian dump: magic, version, d, n_times, times, states."""
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(struct.pack("<II", _BINARY_VERSION, traj.params.trunc.dim))
        fh.write(struct.pack("<Q", len(traj.times)))
        fh.write(traj.times.astype("<f8").tobytes())
        fh.write(traj.states.astype("<f8").tobytes())


def load_states_binary(path) -> tuple[np.ndarray, np.ndarray]:
    """Read back (times, states) from the binary dump."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _BINARY_MAGIC:
            raise ValueError("not a state dump (bad magic)")
        version, dim = struct.unpack("<II", fh.read(8))
        if version != _BINARY_VERSION:
            raise ValueError(f"unsupported state dump version {version}")
        (n_times,) = struct.unpack("<Q", fh.read(8))
        times = np.frombuffer(fh.read(8 * n_times), dtype="<f8").copy()
        states = np.frombuffer(fh.read(8 * n_times * dim), dtype="<f8").copy()
    return times, states.reshape(n_times, dim)
