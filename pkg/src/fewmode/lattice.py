"""Integer mode-lattice geometry for degenerately forced vorticity dynamics.

The zero-mean real Fourier basis on the torus is indexed by nonzero
integer wavevectors k.  A wavevector carries the sine basis function
when it lies in the upper half-lattice (k2 > 0, or k2 = 0 and k1 > 0)
and the cosine one when its negation does.  Noise injected on a finite
set of modes spreads through the quadratic advection term along triads:
the pair (l, j) feeds the mode l + j exactly when the interaction is
non-degenerate (l-perp . j != 0) and the two wavevectors have different
Euclidean length.  Iterating that step from the symmetric part of the
forced set produces the cascade of noise-reachable directions, and the
saturation criterion below decides, exactly and in integer arithmetic,
whether the cascade eventually reaches every mode:

1. integer combinations of the symmetric forced modes generate the full
   lattice (gcd of all 2x2 minors equals 1), and
2. the symmetric forced set contains two modes of unequal length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from math import gcd
from typing import Iterable, Iterator, Mapping, NamedTuple


class Mode(NamedTuple):
    """Nonzero integer wavevector on the 2D lattice."""

    k1: int
    k2: int

    def __neg__(self) -> "Mode":
        return Mode(-self.k1, -self.k2)

    def __repr__(self) -> str:
        return f"({self.k1},{self.k2})"


def as_mode(value) -> Mode:
    """Coerce a pair of integers to a validated Mode."""
    k1, k2 = value
    k1, k2 = int(k1), int(k2)
    if k1 == 0 and k2 == 0:
        raise ValueError("the zero wavevector is not a lattice mode")
    return Mode(k1, k2)


def in_sine_class(m: Mode) -> bool:
    """True for the upper half-lattice (k2 > 0, or k2 = 0 and k1 > 0)."""
    return m.k2 > 0 or (m.k2 == 0 and m.k1 > 0)


def norm_sq(m: Mode) -> int:
    """Squared Euclidean norm k1^2 + k2^2, exact."""
    return m.k1 * m.k1 + m.k2 * m.k2


def perp_dot(l: Mode, j: Mode) -> int:
    """l-perp . j with l-perp = (-l2, l1); vanishes iff l and j are parallel."""
    return -l.k2 * j.k1 + l.k1 * j.k2


class ModeSet:
    """Ordered, duplicate-free collection of modes.

    Iteration order is lexicographic by (k1, k2) regardless of insertion
    order, so reports and serializations are deterministic.
    """

    __slots__ = ("_modes", "_lookup")

    def __init__(self, modes: Iterable = ()):
        validated = {as_mode(m) for m in modes}
        self._modes = tuple(sorted(validated))
        self._lookup = frozenset(self._modes)

    @classmethod
    def from_pairs(cls, pairs: Iterable) -> "ModeSet":
        return cls(pairs)

    def __iter__(self) -> Iterator[Mode]:
        return iter(self._modes)

    def __len__(self) -> int:
        return len(self._modes)

    def __contains__(self, item) -> bool:
        try:
            return as_mode(item) in self._lookup
        except (TypeError, ValueError):
            return False

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModeSet):
            return NotImplemented
        return self._modes == other._modes

    def __hash__(self) -> int:
        return hash(self._modes)

    def __repr__(self) -> str:
        return f"ModeSet({list(self._modes)})"

    def union(self, other: "ModeSet") -> "ModeSet":
        return ModeSet(self._modes + tuple(other))

    def negated(self) -> "ModeSet":
        return ModeSet(-m for m in self._modes)

    def is_negation_closed(self) -> bool:
        return all(-m in self._lookup for m in self._modes)

    def issubset(self, other: "ModeSet") -> bool:
        return self._lookup <= other._lookup

    def to_pairs(self) -> list[list[int]]:
        """JSON form: lexicographically sorted [k1, k2] pairs."""
        return [[m.k1, m.k2] for m in self._modes]

    def to_json(self) -> str:
        return json.dumps(self.to_pairs())


@dataclass(frozen=True)
class ForcingSpec:
    """Forced mode set with one positive noise amplitude per mode."""

    modes: ModeSet
    sigma: Mapping[Mode, float]

    def __post_init__(self):
        sig = {as_mode(k): float(v) for k, v in self.sigma.items()}
        if set(sig) != set(self.modes):
            raise ValueError("sigma keys must coincide with the forced mode set")
        for m, s in sig.items():
            if not (s > 0.0) or s != s or s == float("inf"):
                raise ValueError(f"amplitude for mode {m} must be a positive finite number")
        object.__setattr__(self, "sigma", sig)

    @classmethod
    def uniform(cls, modes: Iterable, sigma: float = 1.0) -> "ForcingSpec":
        ms = ModeSet(modes)
        return cls(ms, {m: sigma for m in ms})

    def amplitudes(self) -> list[float]:
        """Amplitudes in mode iteration order."""
        return [self.sigma[m] for m in self.modes]


@dataclass(frozen=True)
class WitnessEntry:
    """First cascade arrival of a mode: generation and one decomposition.

    Seed modes carry generation 0 and no decomposition; a mode first
    reached at generation n >= 1 stores the lexicographically smallest
    pair (j, l) with mode = l + j, j in the seed set and l reached at
    generation n - 1.
    """

    generation: int
    j: Mode | None = None
    l: Mode | None = None


@dataclass(frozen=True)
class HypoReport:
    """Outcome of the saturation criterion plus boxed cascade evidence."""

    z0: ModeSet
    generates: bool
    unequal_norms: bool
    saturated: bool
    witness: Mapping[Mode, WitnessEntry]
    box_radius: int

    def covers_box(self) -> bool:
        """True when the witness map reaches every mode of the analysis box."""
        r = self.box_radius
        expected = (2 * r + 1) ** 2 - 1
        return len(self.witness) == expected

    def to_json_dict(self) -> dict:
        witness = [
            {
                "mode": [m.k1, m.k2],
                "generation": entry.generation,
                "j": [entry.j.k1, entry.j.k2] if entry.j is not None else None,
                "l": [entry.l.k1, entry.l.k2] if entry.l is not None else None,
            }
            for m, entry in sorted(self.witness.items())
        ]
        return {
            "z0": self.z0.to_pairs(),
            "generates": self.generates,
            "unequal_norms": self.unequal_norms,
            "saturated": self.saturated,
            "witness": witness,
        }


def symmetric_part(z: ModeSet) -> ModeSet:
    """Modes of z whose negation also lies in z."""
    return ModeSet(m for m in z if -m in z)


def _triad_admissible(l: Mode, j: Mode) -> bool:
    return perp_dot(l, j) != 0 and norm_sq(l) != norm_sq(j)


def cascade_step(prev: ModeSet, z0: ModeSet) -> ModeSet:
    """One cascade generation: all admissible sums l + j, l in prev, j in z0."""
    if not z0.is_negation_closed():
        raise ValueError("the seed set must be closed under negation")
    out = set()
    for l in prev:
        for j in z0:
            if (l.k1 + j.k1, l.k2 + j.k2) == (0, 0):
                continue
            if _triad_admissible(l, j):
                out.add(Mode(l.k1 + j.k1, l.k2 + j.k2))
    return ModeSet(out)


def cascade_witnesses(z0: ModeSet, box_radius: int) -> dict[Mode, WitnessEntry]:
    """Boxed cascade fixed point with first-arrival witnesses.

    Seeds the iteration with z0 at generation 0, then repeatedly applies
    the cascade step to everything reached so far, keeping only modes
    with max(|k1|, |k2|) <= box_radius.  The accumulated set grows
    monotonically inside a finite box, so the loop terminates.  New
    modes can only arise from modes of the previous generation, hence
    the recorded (j, l) decompositions satisfy the generation recursion.
    """
    if box_radius < 1:
        raise ValueError("box_radius must be a positive integer")
    if not z0.is_negation_closed():
        raise ValueError("the seed set must be closed under negation")

    def in_box(m: Mode) -> bool:
        return max(abs(m.k1), abs(m.k2)) <= box_radius

    witness: dict[Mode, WitnessEntry] = {
        m: WitnessEntry(0) for m in z0 if in_box(m)
    }
    generation = 0
    while True:
        generation += 1
        new: dict[Mode, tuple[Mode, Mode]] = {}
        for l in witness:
            for j in z0:
                target = (l.k1 + j.k1, l.k2 + j.k2)
                if target == (0, 0):
                    continue
                mode = Mode(*target)
                if mode in witness or not in_box(mode) or not _triad_admissible(l, j):
                    continue
                pair = (j, l)
                if mode not in new or pair < new[mode]:
                    new[mode] = pair
        if not new:
            return witness
        for mode, (j, l) in new.items():
            witness[mode] = WitnessEntry(generation, j, l)


def cascade_closure(z0: ModeSet, box_radius: int) -> tuple[ModeSet, dict[Mode, int]]:
    """Union of all boxed cascade generations, seeds included at index 0."""
    if len(z0) == 0:
        return ModeSet(), {}
    witness = cascade_witnesses(z0, box_radius)
    return ModeSet(witness), {m: w.generation for m, w in witness.items()}


def generates_lattice(z0: ModeSet) -> bool:
    """True iff integer combinations of z0 reach every lattice point.

    Decided exactly: the subgroup spanned by z0 is the full lattice iff
    the gcd of all 2x2 determinants over pairs from z0 equals 1 (the
    product of the elementary divisors of the generator matrix).
    """
    if len(z0) == 0:
        raise ValueError("lattice generation is undefined for an empty set")
    g = 0
    for v, w in combinations(z0, 2):
        g = gcd(g, abs(v.k1 * w.k2 - v.k2 * w.k1))
        if g == 1:
            return True
    return g == 1


def has_unequal_norms(z0: ModeSet) -> bool:
    """True iff z0 contains two modes of different squared norm."""
    lengths = {norm_sq(m) for m in z0}
    return len(lengths) >= 2


def check_hypoellipticity(forcing: ForcingSpec, box_radius: int) -> HypoReport:
    """Saturation verdict for a forcing set, with boxed cascade evidence.

    The verdict is exact (conjunction of the two integer criteria on the
    symmetric part of the forced set); the witness map illustrates the
    spread inside the finite analysis box and is reported as evidence,
    not as the decision.
    """
    z0 = symmetric_part(forcing.modes)
    if len(z0) == 0:
        return HypoReport(z0, False, False, False, {}, box_radius)
    generates = generates_lattice(z0)
    unequal = has_unequal_norms(z0)
    witness = cascade_witnesses(z0, box_radius)
    return HypoReport(z0, generates, unequal, generates and unequal, witness, box_radius)
