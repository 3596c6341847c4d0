import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npdf.radial_dirac import (
    ALPHA,
    CRITICAL_COUPLING,
    AtomParams,
    CriticalCouplingError,
    KappaChannel,
    QuantumNumberError,
    build_coulomb_dirac,
    build_free_dirac,
    build_grid,
    compute_d,
    default_r_max,
    gap_spectrum,
    nonrelativistic_limit,
    resolved_gap_states,
    sommerfeld_energy,
    validate_gap_spectrum,
)
from npdf.spectral_core import ValidationError

# lowest kappa=-1 level of hydrogen, m = 1, alpha = 1/137.035999
H_GROUND = 0.99997337


def dirac_oracle(n, kappa, az):
    """Fine-structure formula in 40-digit arithmetic (kept independent of the package)."""
    mp.mp.dps = 40
    az = mp.mpf(az)
    g = mp.sqrt(kappa * kappa - az**2)
    return float(1 / mp.sqrt(1 + (az / (n - abs(kappa) + g)) ** 2))


class TestGrid:
    def test_strictly_increasing(self):
        g = build_grid(512, 1e-6, 100)
        assert g.r[0] > 0 and np.all(np.diff(g.r) > 0)
        assert g.r[-1] == 100.0

    def test_quadrature_probes(self):
        g = build_grid(512, 1e-6, 100)
        assert abs(g.integrate(np.exp(-2 * g.r) * g.r**2) - 0.25) <= 1e-8 * 0.25
        assert abs(g.integrate(np.exp(-g.r)) - 1.0) <= 1e-8

    @pytest.mark.parametrize("args", [(512, 0.0, 1.0), (512, 2.0, 1.0), (512, 1e-3, np.inf), (10, 1e-3, 1.0)])
    def test_bad_bounds(self, args):
        with pytest.raises(ValidationError):
            build_grid(*args)

    def test_hash_distinguishes_grids(self):
        assert build_grid(128, 1e-3, 10).hash != build_grid(128, 1e-3, 11).hash
        assert build_grid(128, 1e-3, 10).hash == build_grid(128, 1e-3, 10).hash

    def test_half_steps_interleave_nodes(self):
        g = build_grid(64, 1e-3, 10)
        s = g.sites[g.site_order]
        assert np.all(np.diff(s) > 0)
        assert np.allclose(np.diff(np.log(s)), g.dt / 2)


class TestChannels:
    @pytest.mark.parametrize("kappa, l, j, deg", [(-1, 0, 0.5, 2), (1, 1, 0.5, 2), (-2, 1, 1.5, 4)])
    def test_quantum_numbers(self, kappa, l, j, deg):
        ch = KappaChannel(kappa)
        assert (ch.l, ch.j, ch.degeneracy) == (l, j, deg)

    @pytest.mark.parametrize("kappa", [0, 2, -3])
    def test_unsupported(self, kappa):
        with pytest.raises(QuantumNumberError):
            KappaChannel(kappa)

    def test_critical_coupling(self):
        with pytest.raises(CriticalCouplingError, match="critical coupling"):
            AtomParams(Z=CRITICAL_COUPLING / ALPHA + 1)

    def test_negative_q(self):
        with pytest.raises(ValidationError):
            AtomParams(Z=1, q=-1)


class TestFreeOperator:
    @pytest.mark.parametrize("kappa", [-1, 1, -2])
    def test_massless_symmetry(self, kappa):
        op = build_free_dirac(build_grid(128, 1e-2, 1e3), KappaChannel(kappa), m=0.0)
        w = np.linalg.eigvalsh(op.H.entries)
        assert np.max(np.abs(w + w[::-1])) <= 1e-9 * max(1.0, np.abs(w).max())

    @pytest.mark.parametrize("kappa", [-1, 1, -2])
    def test_gap_is_empty(self, kappa):
        op = build_free_dirac(build_grid(128, 1e-3, 1e4), KappaChannel(kappa))
        w = np.linalg.eigvalsh(op.H.entries)
        assert np.min(np.abs(w)) >= 1 - 1e-6
        assert gap_spectrum(op).size == 0

    @pytest.mark.parametrize("kappa", [-1, 1, -2])
    def test_square_is_at_least_m_squared(self, kappa):
        op = build_free_dirac(build_grid(128, 1e-2, 1e3), KappaChannel(kappa))
        H = op.H.entries
        n = op.n
        H2 = H @ H
        # the mass term anticommutes with the kinetic part, so H^2 is block diagonal
        assert np.abs(H2[:n, n:]).max() <= 1e-9 * np.abs(H2).max()
        assert np.linalg.eigvalsh(H2)[0] >= 1 - 1e-9


class TestCoulomb:
    def test_hydrogen_ground_state(self):
        grid = build_grid(1500, 1e-6, default_r_max(1))
        op = build_coulomb_dirac(grid, KappaChannel(-1), AtomParams(Z=1))
        lam = gap_spectrum(op)[0]
        assert abs(lam - H_GROUND) <= 1e-6 * H_GROUND
        assert abs(lam - dirac_oracle(1, -1, ALPHA)) <= 1e-8

    def test_mercury_like_ground_state(self):
        grid = build_grid(1500, 1e-6, default_r_max(80))
        op = build_coulomb_dirac(grid, KappaChannel(-1), AtomParams(Z=80))
        lam = gap_spectrum(op)[0]
        oracle = dirac_oracle(1, -1, 80 * ALPHA)
        assert abs(lam - oracle) <= 1e-5 * oracle

    def test_zero_charge_is_free(self):
        grid = build_grid(96, 1e-3, 1e3)
        a = build_coulomb_dirac(grid, KappaChannel(1), AtomParams(Z=0)).H.entries
        b = build_free_dirac(grid, KappaChannel(1)).H.entries
        assert np.array_equal(a, b)

    def test_hydrogen_gap_spectrum(self):
        grid = build_grid(400, 1e-4, default_r_max(1))
        op = build_coulomb_dirac(grid, KappaChannel(-1), AtomParams(Z=1))
        w = gap_spectrum(op)
        assert w.size >= 3 and np.all(np.diff(w) > 0) and np.all(w < 1)

    def test_validation_finds_no_spurious_states(self):
        grid = build_grid(400, 1e-4, default_r_max(1))
        for kappa in (-1, 1, -2):
            op = build_coulomb_dirac(grid, KappaChannel(kappa), AtomParams(Z=1), validate=True)
            rep = validate_gap_spectrum(op, AtomParams(Z=1))
            assert rep["pass"] and len(rep["matches"]) >= 3

    def test_box_states_are_separated(self):
        grid = build_grid(200, 1e-3, 2e3)
        op = build_coulomb_dirac(grid, KappaChannel(-1), AtomParams(Z=1))
        ok, _, box = resolved_gap_states(op)
        assert ok.size + box.size == gap_spectrum(op).size
        if ok.size and box.size:
            assert ok.max() < box.min()


class TestSommerfeld:
    def test_ground_closed_form(self):
        p = AtomParams(Z=30)
        assert sommerfeld_energy(1, -1, p) == pytest.approx(np.sqrt(1 - (30 * ALPHA) ** 2), rel=1e-15)

    def test_nonrelativistic_limit(self):
        p = AtomParams(Z=1e-3 / ALPHA)
        for n in (1, 2, 3):
            val = sommerfeld_energy(n, -1, p)
            ratio = (val - 1) / (-(1e-3**2) / (2 * n * n))
            assert abs(ratio - 1) <= 1e-4
            assert abs(nonrelativistic_limit(n, p) - 1 - (-(1e-3**2) / (2 * n * n))) <= 1e-16

    def test_two_s_two_p_half_degenerate(self):
        p = AtomParams(Z=50)
        assert sommerfeld_energy(2, -1, p) == pytest.approx(sommerfeld_energy(2, 1, p), rel=1e-15)

    @pytest.mark.parametrize("n, kappa", [(1, 1), (1, -2), (0, -1), (2, 0)])
    def test_quantum_number_errors(self, n, kappa):
        with pytest.raises(QuantumNumberError):
            sommerfeld_energy(n, kappa, AtomParams(Z=1))


class TestComputeD:
    def test_endpoints(self):
        assert compute_d(0.0) == 1.0
        assert abs(compute_d(CRITICAL_COUPLING)) <= 1e-15

    def test_half(self):
        mp.mp.dps = 30
        a = mp.mpf("0.5")
        ref = mp.sqrt(1 - a**2) * (mp.sqrt(4 * a**2 + 9) - 4 * a) / 3
        assert compute_d(0.5) == pytest.approx(0.33552066, abs=1e-8)
        assert compute_d(0.5) == pytest.approx(float(ref), rel=1e-14)

    def test_domain(self):
        with pytest.raises(CriticalCouplingError):
            compute_d(0.9)


@settings(max_examples=80, deadline=None)
@given(st.floats(0.0, 0.85), st.sampled_from([-1, 1, -2]), st.integers(0, 5))
def test_property_sommerfeld_ordering(az, kappa, k):
    p = AtomParams(Z=az / ALPHA)
    n0 = abs(kappa) if kappa < 0 else kappa + 1
    e1 = sommerfeld_energy(n0 + k, kappa, p)
    e2 = sommerfeld_energy(n0 + k + 1, kappa, p)
    assert 0 < e1 <= e2 <= 1
    assert e1 == pytest.approx(dirac_oracle(n0 + k, kappa, az), rel=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.866))
def test_property_d_in_unit_interval(az):
    d = compute_d(az)
    assert 0 <= d <= 1
    assert compute_d(min(az + 1e-3, CRITICAL_COUPLING)) <= d + 1e-15


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 4.0), st.integers(0, 3))
def test_property_grid_moments(a, k):
    g = build_grid(512, 1e-6, 200.0)
    exact = float(mp.factorial(k + 2) / mp.mpf(a) ** (k + 3))
    got = g.integrate(g.r ** (k + 2) * np.exp(-a * g.r))
    assert abs(got - exact) <= 1e-8 * exact
