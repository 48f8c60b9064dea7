"""Fields, Biot-Savart reconstruction and the triad-table advection term."""

import numpy as np
import pytest

from fewmode.lattice import Mode, ModeSet, norm_sq
from fewmode.spectral import (
    SpectralField,
    Truncation,
    biot_savart,
    bilinear,
    build_triad_table,
    evaluate_on_grid,
    field_from_csv,
    field_from_grid,
    field_to_csv,
    field_to_json_dict,
    get_triad_table,
    gradient_coeff,
    project,
    pseudospectral_oracle,
    velocity_on_grid,
)

from conftest import random_field


# ---------------------------------------------------------------------------
# truncation and fields


def test_truncation_dimensions():
    for radius in (1, 2, 3, 5):
        trunc = Truncation(radius)
        assert trunc.dim == (2 * radius + 1) ** 2 - 1
        assert list(trunc.modes) == sorted(trunc.modes)
        assert all(-m in trunc for m in trunc.modes)


def test_truncation_index_bijection(trunc3):
    for i, m in enumerate(trunc3.modes):
        assert trunc3.index_of(m) == i
    assert trunc3.index_of((2, -1)) == Truncation(3).index_of((2, -1))


def test_field_validation(trunc3):
    with pytest.raises(ValueError):
        SpectralField(trunc3, np.zeros(3))
    bad = np.zeros(trunc3.dim)
    bad[0] = np.nan
    with pytest.raises(ValueError):
        SpectralField(trunc3, bad)


def test_norms(trunc3):
    f = SpectralField.basis(trunc3, (1, 2), 2.0)
    assert f.norm_l2() == pytest.approx(2.0)
    assert f.norm_h1() == pytest.approx(2.0 * np.sqrt(5.0))


def test_norm_consistency(trunc4):
    rng = np.random.default_rng(5)
    for _ in range(20):
        f = random_field(trunc4, rng)
        assert f.norm_l2() <= f.norm_h1() + 1e-15


# ---------------------------------------------------------------------------
# Biot-Savart


def test_biot_savart_single_modes(trunc3):
    u1, u2 = biot_savart(SpectralField.basis(trunc3, (1, 0)))
    assert np.abs(u1.coeff).max() == 0.0
    assert u2.coeff[trunc3.index_of((-1, 0))] == pytest.approx(1.0)
    assert np.abs(u2.coeff).sum() == pytest.approx(1.0)

    u1, u2 = biot_savart(SpectralField.basis(trunc3, (0, 2)))
    assert u1.coeff[trunc3.index_of((0, -2))] == pytest.approx(-0.5)
    assert np.abs(u2.coeff).max() == 0.0


def test_biot_savart_zero(trunc3):
    u1, u2 = biot_savart(SpectralField.zero(trunc3))
    assert not u1.coeff.any() and not u2.coeff.any()


def test_velocity_divergence_free(trunc3):
    rng = np.random.default_rng(7)
    for _ in range(10):
        w = random_field(trunc3, rng)
        u1, u2 = biot_savart(w)
        d1, _ = gradient_coeff(u1)
        _, d2 = gradient_coeff(u2)
        div = d1.coeff + d2.coeff
        assert np.abs(div).max() <= 1e-10 * max(1.0, w.norm_h1())


# ---------------------------------------------------------------------------
# grid evaluation


def test_evaluate_single_mode_grid():
    trunc = Truncation(2)
    grid = evaluate_on_grid(SpectralField.basis(trunc, (0, 1)), 8)
    x = 2 * np.pi * np.arange(8) / 8
    expected = np.tile(np.sin(x), (8, 1))
    assert np.allclose(grid, expected, atol=1e-14)


def test_evaluate_zero_field(trunc3):
    assert not evaluate_on_grid(SpectralField.zero(trunc3), 10).any()


def test_evaluate_grid_too_small(trunc3):
    with pytest.raises(ValueError):
        evaluate_on_grid(SpectralField.zero(trunc3), 7)


def test_grid_roundtrip(trunc4):
    rng = np.random.default_rng(9)
    for _ in range(5):
        f = random_field(trunc4, rng)
        back = field_from_grid(
            evaluate_on_grid(f, 4 * trunc4.radius + 2), trunc4, 4 * trunc4.radius + 2
        )
        assert np.abs(back.coeff - f.coeff).max() <= 1e-12


# ---------------------------------------------------------------------------
# triad table structure


def test_table_entries_respect_side_conditions(trunc3):
    table = get_triad_table(trunc3)
    modes = trunc3.modes
    assert len(table) > 0
    assert not (table.coeff == 0.0).any()
    for k, j, l in zip(table.k_idx[:500], table.j_idx[:500], table.l_idx[:500]):
        mk, mj, ml = modes[k], modes[j], modes[l]
        assert norm_sq(mj) != norm_sq(ml)
        assert (
            -ml.k2 * mj.k1 + ml.k1 * mj.k2 != 0
        )
        sums = {
            (mj.k1 + ml.k1, mj.k2 + ml.k2),
            (mj.k1 - ml.k1, mj.k2 - ml.k2),
            (-mj.k1 + ml.k1, -mj.k2 + ml.k2),
            (-mj.k1 - ml.k1, -mj.k2 - ml.k2),
        }
        assert (mk.k1, mk.k2) in sums or (-mk.k1, -mk.k2) in sums


def test_table_deterministic(trunc3):
    a = build_triad_table(trunc3)
    b = build_triad_table(trunc3)
    assert np.array_equal(a.k_idx, b.k_idx)
    assert np.array_equal(a.coeff, b.coeff)


# ---------------------------------------------------------------------------
# bilinear term against the oracle


def test_single_mode_self_interaction_zero(trunc3):
    table = get_triad_table(trunc3)
    for mode in [(1, 0), (0, 1), (2, 1), (-1, 2), (3, -3)]:
        e = SpectralField.basis(trunc3, mode)
        assert np.abs(bilinear(e, e, table).coeff).max() == 0.0
        assert np.abs(pseudospectral_oracle(e, e).coeff).max() <= 1e-12


def test_bilinear_zero_argument(trunc3):
    rng = np.random.default_rng(13)
    table = get_triad_table(trunc3)
    w = random_field(trunc3, rng)
    assert not bilinear(w, SpectralField.zero(trunc3), table).coeff.any()
    assert not bilinear(SpectralField.zero(trunc3), w, table).coeff.any()


@pytest.mark.parametrize("radius", [2, 3, 4])
def test_bilinear_matches_oracle_diagonal(radius):
    trunc = Truncation(radius)
    table = get_triad_table(trunc)
    rng = np.random.default_rng(radius)
    for _ in range(20):
        w = random_field(trunc, rng)
        ours = bilinear(w, w, table).coeff
        ref = pseudospectral_oracle(w, w).coeff
        scale = 1.0 + w.norm_h1() ** 2
        assert np.linalg.norm(ours - ref) <= 1e-10 * scale


def test_bilinear_symmetrization_identity(trunc3):
    # For distinct arguments the table contracts to the symmetrized term.
    table = get_triad_table(trunc3)
    rng = np.random.default_rng(17)
    for _ in range(10):
        w = random_field(trunc3, rng)
        v = random_field(trunc3, rng)
        ours = bilinear(w, v, table).coeff
        ref = 0.5 * (
            pseudospectral_oracle(w, v).coeff + pseudospectral_oracle(v, w).coeff
        )
        assert np.linalg.norm(ours - ref) <= 1e-10 * (1.0 + w.norm_h1() * v.norm_h1())


def test_enstrophy_conservation(trunc4):
    table = get_triad_table(trunc4)
    rng = np.random.default_rng(19)
    for _ in range(50):
        w = random_field(trunc4, rng)
        b = bilinear(w, w, table)
        assert abs(b.inner(w)) <= 1e-10 * (1.0 + w.norm_l2() * w.norm_h1() ** 2)


def test_support_rule_two_modes():
    trunc = Truncation(2)
    table = get_triad_table(trunc)
    w = SpectralField.from_coefficients(trunc, {(0, 1): 1.0, (1, 1): 1.0})
    out = bilinear(w, w, table)
    allowed = {trunc.index_of(m) for m in [(1, 2), (1, 0), (-1, 0), (-1, -2)]}
    support = set(np.nonzero(out.coeff)[0])
    assert support <= allowed
    assert support  # the interaction is not trivial


def test_oracle_linearity(trunc3):
    rng = np.random.default_rng(23)
    w = random_field(trunc3, rng)
    v = random_field(trunc3, rng)
    scaled = pseudospectral_oracle(SpectralField(trunc3, 3.0 * w.coeff), v).coeff
    assert np.allclose(scaled, 3.0 * pseudospectral_oracle(w, v).coeff, atol=1e-12)


def test_bilinear_dimension_mismatch(trunc3):
    table = get_triad_table(trunc3)
    other = SpectralField.zero(Truncation(2))
    with pytest.raises(ValueError):
        bilinear(other, other, table)


def test_velocity_grid_guard(trunc3):
    with pytest.raises(ValueError):
        velocity_on_grid(SpectralField.zero(trunc3), 10)


# ---------------------------------------------------------------------------
# projection


def test_project_identity_and_idempotence(trunc3):
    rng = np.random.default_rng(29)
    f = random_field(trunc3, rng)
    everything = trunc3.mode_set()
    assert np.array_equal(project(f, everything).coeff, f.coeff)
    s = ModeSet([(0, 1), (1, 1), (2, -1)])
    once = project(f, s)
    assert np.array_equal(project(once, s).coeff, once.coeff)


def test_project_self_adjoint(trunc3):
    rng = np.random.default_rng(31)
    s = ModeSet([(0, 1), (1, -2), (3, 0)])
    for _ in range(10):
        f = random_field(trunc3, rng)
        g = random_field(trunc3, rng)
        assert project(f, s).inner(g) == pytest.approx(f.inner(project(g, s)), rel=1e-12)


def test_project_outside_truncation(trunc3):
    with pytest.raises(ValueError):
        project(SpectralField.zero(trunc3), ModeSet([(4, 0)]))


# ---------------------------------------------------------------------------
# serialization


def test_field_csv_roundtrip(trunc3):
    rng = np.random.default_rng(37)
    f = random_field(trunc3, rng)
    text = field_to_csv(f)
    lines = text.splitlines()
    assert lines[0] == "k1,k2,coeff"
    assert len(lines) == trunc3.dim + 1
    back = field_from_csv(text, trunc3)
    assert np.array_equal(back.coeff, f.coeff)


def test_field_json_dict(trunc3):
    f = SpectralField.from_coefficients(trunc3, {(1, 1): 0.25})
    doc = field_to_json_dict(f)
    assert doc["truncation_radius"] == 3
    assert doc["coefficients"] == [{"mode": [1, 1], "value": 0.25}]
