"""Real Fourier vorticity fields and the truncated advection operator.

Fields are expanded over the zero-mean real basis e_k, k a nonzero
integer wavevector inside a max-norm box: e_k(x) = sin(k.x) on the
upper half-lattice and cos(k.x) on its negation.  In this basis the
two operations driving everything else take closed forms,

    grad e_j       = j e_{-j},
    biot_savart e_l = (l-perp / |l|^2) e_{-l},

so the advection term (Kw).grad(v) expands over triads of modes via
sine/cosine product-to-sum identities.  The triad coefficients are
stored symmetrized in (l, j): contracting the table reproduces the
quadratic term B(w, w) and the linearization B(w, xi) + B(xi, w)
exactly, while for two unrelated arguments it yields the symmetrized
average (B(w, v) + B(v, w)) / 2.  Pairs of equal Euclidean length
cancel under symmetrization, which is why they never appear in the
table.  An independent pointwise-grid oracle (`pseudospectral_oracle`)
validates the table on alias-free grids.

Sign observation, recorded rather than "fixed": with the Biot-Savart
convention above, curl(K e_k) evaluates to -e_k; all diagnostics in
this package are insensitive to that overall sign.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from fewmode.lattice import Mode, ModeSet, as_mode, in_sine_class, norm_sq, perp_dot


class Truncation:
    """Max-norm box of modes with a stable lexicographic coefficient index."""

    def __init__(self, radius: int):
        radius = int(radius)
        if radius < 1:
            raise ValueError("truncation radius must be a positive integer")
        self.radius = radius
        self.modes: tuple[Mode, ...] = tuple(
            sorted(
                Mode(a, b)
                for a in range(-radius, radius + 1)
                for b in range(-radius, radius + 1)
                if (a, b) != (0, 0)
            )
        )
        self.dim = len(self.modes)  # (2R+1)^2 - 1
        self._index = {m: i for i, m in enumerate(self.modes)}
        self.wavevectors = np.array(self.modes, dtype=np.int64)  # (d, 2)
        self.norm_sq = (self.wavevectors.astype(np.float64) ** 2).sum(axis=1)
        self.neg_index = np.array([self._index[-m] for m in self.modes], dtype=np.intp)
        self.sine_class = np.array([in_sine_class(m) for m in self.modes], dtype=bool)

    def __eq__(self, other) -> bool:
        return isinstance(other, Truncation) and other.radius == self.radius

    def __hash__(self) -> int:
        return hash(("Truncation", self.radius))

    def __repr__(self) -> str:
        return f"Truncation(radius={self.radius}, dim={self.dim})"

    def __contains__(self, mode) -> bool:
        try:
            return as_mode(mode) in self._index
        except (TypeError, ValueError):
            return False

    def index_of(self, mode) -> int:
        return self._index[as_mode(mode)]

    def mode_set(self) -> ModeSet:
        return ModeSet(self.modes)


@dataclass
class SpectralField:
    """Real coefficient vector over a truncation (the vorticity state)."""

    trunc: Truncation
    coeff: np.ndarray

    def __post_init__(self):
        self.coeff = np.asarray(self.coeff, dtype=np.float64)
        if self.coeff.shape != (self.trunc.dim,):
            raise ValueError(
                f"coefficient vector has shape {self.coeff.shape}, expected ({self.trunc.dim},)"
            )
        if not np.isfinite(self.coeff).all():
            raise ValueError("coefficient vector contains non-finite entries")

    @classmethod
    def zero(cls, trunc: Truncation) -> "SpectralField":
        return cls(trunc, np.zeros(trunc.dim))

    @classmethod
    def basis(cls, trunc: Truncation, mode, amplitude: float = 1.0) -> "SpectralField":
        coeff = np.zeros(trunc.dim)
        coeff[trunc.index_of(mode)] = amplitude
        return cls(trunc, coeff)

    @classmethod
    def from_coefficients(cls, trunc: Truncation, values) -> "SpectralField":
        """Build from {mode: value}; unlisted modes are zero."""
        coeff = np.zeros(trunc.dim)
        for mode, value in dict(values).items():
            coeff[trunc.index_of(mode)] = float(value)
        return cls(trunc, coeff)

    def copy(self) -> "SpectralField":
        return SpectralField(self.trunc, self.coeff.copy())

    def norm_l2(self) -> float:
        return float(np.sqrt(np.dot(self.coeff, self.coeff)))

    def norm_h1(self) -> float:
        return float(np.sqrt(np.dot(self.trunc.norm_sq * self.coeff, self.coeff)))

    def inner(self, other: "SpectralField") -> float:
        if other.trunc != self.trunc:
            raise ValueError("inner product requires a shared truncation")
        return float(np.dot(self.coeff, other.coeff))


@dataclass
class VelocityField:
    """Velocity components sampled on a uniform M x M torus grid."""

    u1: np.ndarray
    u2: np.ndarray
    grid_size: int


@dataclass
class TriadTable:
    """Sparse symmetrized advection coefficients over one truncation.

    Flat parallel arrays: entry i contributes coeff[i] * w[l_idx[i]] *
    v[j_idx[i]] to output mode k_idx[i].  Entries come in (j, l) /
    (l, j) pairs carrying the same coefficient; only triads with
    l-perp . j != 0 and |j| != |l| are present, and every target k
    satisfies k in {j+l, j-l, -j+l, -j-l} up to sign-class reduction.
    """

    trunc: Truncation
    k_idx: np.ndarray
    j_idx: np.ndarray
    l_idx: np.ndarray
    coeff: np.ndarray

    def __len__(self) -> int:
        return len(self.coeff)


_TABLE_CACHE: dict[int, TriadTable] = {}
_GRID_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _product_expansion(a: Mode, b: Mode) -> list[tuple[Mode, float]]:
    """Expand e_a(x) e_b(x) over the basis; constant terms are dropped."""
    out: list[tuple[Mode, float]] = []
    total = (a.k1 + b.k1, a.k2 + b.k2)
    diff = (a.k1 - b.k1, a.k2 - b.k2)

    def add_cos(c: tuple[int, int], factor: float) -> None:
        if c == (0, 0):
            return  # cos(0) is the mean mode, absent from the basis
        m = Mode(*c)
        out.append((m if not in_sine_class(m) else -m, factor))

    def add_sin(c: tuple[int, int], factor: float) -> None:
        if c == (0, 0):
            return
        m = Mode(*c)
        if in_sine_class(m):
            out.append((m, factor))
        else:
            out.append((-m, -factor))

    sa, sb = in_sine_class(a), in_sine_class(b)
    if sa and sb:  # sin sin
        add_cos(diff, 0.5)
        add_cos(total, -0.5)
    elif not sa and not sb:  # cos cos
        add_cos(diff, 0.5)
        add_cos(total, 0.5)
    elif sa:  # sin(a) cos(b)
        add_sin(total, 0.5)
        add_sin(diff, 0.5)
    else:  # cos(a) sin(b)
        add_sin(total, 0.5)
        add_sin(diff, -0.5)
    return out


def build_triad_table(trunc: Truncation) -> TriadTable:
    """Enumerate all admissible mode pairs and their target coefficients.

    For each unordered pair {l, j} with l-perp . j != 0 and unequal
    squared norms, the symmetrized weight is

        c = (l-perp . j) (1/|l|^2 - 1/|j|^2) / 2,

    multiplied by the product-to-sum factor of e_{-l} e_{-j} on each
    target mode.  Targets outside the truncation are discarded (Galerkin
    projection).  Entries are emitted for both argument orders.
    """
    modes = trunc.modes
    k_list: list[int] = []
    j_list: list[int] = []
    l_list: list[int] = []
    c_list: list[float] = []
    for i_l in range(len(modes)):
        l = modes[i_l]
        nl = norm_sq(l)
        for i_j in range(i_l + 1, len(modes)):
            j = modes[i_j]
            pd = perp_dot(l, j)
            if pd == 0:
                continue
            nj = norm_sq(j)
            if nl == nj:
                continue
            weight = pd * (1.0 / nl - 1.0 / nj) / 2.0
            for target, factor in _product_expansion(-l, -j):
                if target not in trunc:
                    continue
                value = weight * factor
                if value == 0.0:
                    continue
                k = trunc.index_of(target)
                k_list.extend((k, k))
                j_list.extend((i_j, i_l))
                l_list.extend((i_l, i_j))
                c_list.extend((value, value))
    order = np.lexsort(
        (np.array(l_list), np.array(j_list), np.array(k_list))
    )
    return TriadTable(
        trunc,
        np.array(k_list, dtype=np.intp)[order],
        np.array(j_list, dtype=np.intp)[order],
        np.array(l_list, dtype=np.intp)[order],
        np.array(c_list, dtype=np.float64)[order],
    )


def get_triad_table(trunc: Truncation) -> TriadTable:
    """Shared read-only table per truncation radius (built once)."""
    table = _TABLE_CACHE.get(trunc.radius)
    if table is None:
        table = build_triad_table(trunc)
        _TABLE_CACHE[trunc.radius] = table
    return table


def bilinear_coeff(table: TriadTable, w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Contract the table on raw coefficient vectors."""
    return np.bincount(
        table.k_idx,
        weights=table.coeff * w[table.l_idx] * v[table.j_idx],
        minlength=table.trunc.dim,
    )


def bilinear(w: SpectralField, v: SpectralField, table: TriadTable) -> SpectralField:
    """Galerkin advection via the triad table.

    Exactly (Kw).grad(w) when v is w; for distinct arguments the
    symmetrization in the table makes this (B(w,v) + B(v,w)) / 2, which
    is the combination every consumer in this package needs.
    """
    if w.trunc != table.trunc or v.trunc != table.trunc:
        raise ValueError("fields and triad table must share one truncation")
    return SpectralField(table.trunc, bilinear_coeff(table, w.coeff, v.coeff))


def advection_jacobian_apply(table: TriadTable, base: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Derivative of w -> B(w, w) at `base`, applied to xi."""
    weights = table.coeff * (base[table.l_idx] * xi[table.j_idx] + xi[table.l_idx] * base[table.j_idx])
    return np.bincount(table.k_idx, weights=weights, minlength=table.trunc.dim)


def advection_jacobian_apply_t(table: TriadTable, base: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Exact transpose of `advection_jacobian_apply` in the coefficient inner product."""
    pk = phi[table.k_idx] * table.coeff
    out = np.bincount(table.j_idx, weights=pk * base[table.l_idx], minlength=table.trunc.dim)
    out += np.bincount(table.l_idx, weights=pk * base[table.j_idx], minlength=table.trunc.dim)
    return out


def advection_jacobian_dense(table: TriadTable, base: np.ndarray) -> np.ndarray:
    """Dense (d, d) Jacobian matrix of w -> B(w, w) at `base`."""
    d = table.trunc.dim
    flat = np.bincount(
        table.k_idx * d + table.j_idx,
        weights=table.coeff * base[table.l_idx],
        minlength=d * d,
    )
    flat += np.bincount(
        table.k_idx * d + table.l_idx,
        weights=table.coeff * base[table.j_idx],
        minlength=d * d,
    )
    return flat.reshape(d, d)


def biot_savart(w: SpectralField) -> tuple[SpectralField, SpectralField]:
    """Velocity components of the field, in coefficient form.

    Mode k of the vorticity contributes (k-perp / |k|^2) alpha_k to mode
    -k of each velocity component; the result is divergence free since
    k . k-perp = 0.
    """
    trunc = w.trunc
    kv = trunc.wavevectors
    inv = 1.0 / trunc.norm_sq
    u1 = np.zeros(trunc.dim)
    u2 = np.zeros(trunc.dim)
    u1[trunc.neg_index] = -kv[:, 1] * inv * w.coeff
    u2[trunc.neg_index] = kv[:, 0] * inv * w.coeff
    return SpectralField(trunc, u1), SpectralField(trunc, u2)


def gradient_coeff(w: SpectralField) -> tuple[SpectralField, SpectralField]:
    """Coefficient form of (d/dx1 w, d/dx2 w): mode j maps to j e_{-j}."""
    trunc = w.trunc
    kv = trunc.wavevectors
    g1 = np.zeros(trunc.dim)
    g2 = np.zeros(trunc.dim)
    g1[trunc.neg_index] = kv[:, 0] * w.coeff
    g2[trunc.neg_index] = kv[:, 1] * w.coeff
    return SpectralField(trunc, g1), SpectralField(trunc, g2)


def _basis_grid(trunc: Truncation, grid_size: int) -> np.ndarray:
    """(d, M, M) samples of every basis function on the uniform grid."""
    key = (trunc.radius, grid_size)
    cached = _GRID_CACHE.get(key)
    if cached is not None:
        return cached
    x = 2.0 * np.pi * np.arange(grid_size) / grid_size
    x1, x2 = np.meshgrid(x, x, indexing="ij")
    grids = np.empty((trunc.dim, grid_size, grid_size))
    for i, m in enumerate(trunc.modes):
        phase = m.k1 * x1 + m.k2 * x2
        grids[i] = np.sin(phase) if trunc.sine_class[i] else np.cos(phase)
    _GRID_CACHE[key] = grids
    return grids


def evaluate_on_grid(f: SpectralField, grid_size: int) -> np.ndarray:
    """Pointwise samples of the field at x = 2 pi (i, j) / M."""
    if grid_size < 2 * f.trunc.radius + 2:
        raise ValueError(
            f"grid size {grid_size} aliases modes of radius {f.trunc.radius}; "
            f"need at least {2 * f.trunc.radius + 2}"
        )
    return np.tensordot(f.coeff, _basis_grid(f.trunc, grid_size), axes=1)


def field_from_grid(values: np.ndarray, trunc: Truncation, grid_size: int) -> SpectralField:
    """Project grid samples back onto the truncation by discrete inner products."""
    grids = _basis_grid(trunc, grid_size)
    coeff = np.tensordot(grids.reshape(trunc.dim, -1), values.reshape(-1), axes=1)
    return SpectralField(trunc, coeff * 2.0 / grid_size**2)


def velocity_on_grid(w: SpectralField, grid_size: int | None = None) -> VelocityField:
    """Sample the reconstructed velocity on an alias-safe grid (default 4R+2)."""
    if grid_size is None:
        grid_size = 4 * w.trunc.radius + 2
    if grid_size < 4 * w.trunc.radius + 2:
        raise ValueError("velocity grids must resolve products: need M >= 4R+2")
    u1, u2 = biot_savart(w)
    return VelocityField(
        evaluate_on_grid(u1, grid_size), evaluate_on_grid(u2, grid_size), grid_size
    )


def pseudospectral_oracle(w: SpectralField, v: SpectralField) -> SpectralField:
    """Reference advection term (Kw).grad(v) via pointwise grid products.

    Evaluates velocity and gradient on a grid of size 4R+2, multiplies
    pointwise and projects back; the product of two fields of radius R
    has maximal frequency 2R < (4R+2)/2, so no aliasing occurs.  This
    path shares no code with the triad table and serves as its oracle.
    """
    if w.trunc != v.trunc:
        raise ValueError("fields must share one truncation")
    grid_size = 4 * w.trunc.radius + 2
    vel = velocity_on_grid(w, grid_size)
    g1, g2 = gradient_coeff(v)
    product = vel.u1 * evaluate_on_grid(g1, grid_size) + vel.u2 * evaluate_on_grid(
        g2, grid_size
    )
    return field_from_grid(product, w.trunc, grid_size)


def project(f: SpectralField, s: ModeSet) -> SpectralField:
    """Orthogonal projection onto the span of the listed modes."""
    outside = [m for m in s if m not in f.trunc]
    if outside:
        raise ValueError(f"projection modes outside the truncation: {outside}")
    keep = np.zeros(f.trunc.dim, dtype=bool)
    for m in s:
        keep[f.trunc.index_of(m)] = True
    coeff = np.where(keep, f.coeff, 0.0)
    return SpectralField(f.trunc, coeff)


def field_to_csv(f: SpectralField) -> str:
    """CSV serialization `k1,k2,coeff`, lexicographically sorted, 17 digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["k1", "k2", "coeff"])
    for i, m in enumerate(f.trunc.modes):
        writer.writerow([m.k1, m.k2, format(f.coeff[i], ".17g")])
    return buf.getvalue()


def field_from_csv(text: str, trunc: Truncation) -> SpectralField:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["k1", "k2", "coeff"]:
        raise ValueError("expected header k1,k2,coeff")
    coeff = np.zeros(trunc.dim)
    for k1, k2, value in rows[1:]:
        coeff[trunc.index_of((int(k1), int(k2)))] = float(value)
    return SpectralField(trunc, coeff)


def field_to_json_dict(f: SpectralField) -> dict:
    """JSON form used in manifests; zero entries are omitted."""
    return {
        "truncation_radius": f.trunc.radius,
        "coefficients": [
            {"mode": [m.k1, m.k2], "value": float(f.coeff[i])}
            for i, m in enumerate(f.trunc.modes)
            if f.coeff[i] != 0.0
        ],
    }
