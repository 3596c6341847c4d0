"""One test per acceptance criterion; each prints a PASS/FAIL line before asserting."""

import json
import time

import mpmath as mp
import numpy as np

from npdf.cli_app import load_density, main, save_density
from npdf.mean_field import AtomModel, DensityMatrix, energy, mean_field_matrices
from npdf.mittleman import euler_residuals, self_consistent_projector
from npdf.nopair_scf import (
    ConstraintSpec,
    ScfConfig,
    charge_saturation_step,
    electron_reduction,
    project_to_extreme,
    scf_solve,
)
from npdf.radial_dirac import (
    ALPHA,
    AtomParams,
    KappaChannel,
    build_coulomb_dirac,
    build_free_dirac,
    build_grid,
    default_r_max,
)
from npdf.verification import (
    gap_accumulation_data,
    hydrogenic_table,
    suite_forms,
    suite_mean_field_bounds,
    suite_nenciu,
    suite_q_negativity,
)

SEED = 20240611


def sommerfeld_mp(n, kappa, az):
    mp.mp.dps = 40
    az = mp.mpf(az)
    g = mp.sqrt(kappa * kappa - az**2)
    return float(1 / mp.sqrt(1 + (az / (n - abs(kappa) + g)) ** 2))


def d_mp(az):
    """Order constant in 30-digit arithmetic."""
    mp.mp.dps = 30
    az = mp.mpf(az)
    return float(mp.sqrt(1 - az**2) * (mp.sqrt(4 * az**2 + 9) - 4 * az) / 3)


def modulus(H):
    w, v = np.linalg.eigh(H)
    return (v * np.abs(w)) @ v.T


def worst_line(res):
    w = res.worst()
    return f"{len(res.checks)} checks, {sum(not c.passed for c in res.checks)} failed, " \
           f"worst margin {w.margin:.3g} ({w.name})"


def test_01_hydrogenic_spectrum(acceptance):
    n_min = {-1: 1, 1: 2, -2: 2}
    worst, slowest, bad = 0.0, 0.0, []
    for Z in (1, 20, 80):
        tol = 1e-6 if Z <= 20 else 1e-5
        for kappa in (-1, 1, -2):
            t0 = time.perf_counter()
            rows, val = hydrogenic_table(Z, kappas=(kappa,), n=1500, r_min=1e-6, levels=3)
            slowest = max(slowest, time.perf_counter() - t0)
            if len(rows) < 3 or val[0]["failures"]:
                bad.append(f"Z={Z} kappa={kappa}: {len(rows)} levels, {len(val[0]['failures'])} unmatched")
            for row in rows:
                ref = sommerfeld_mp(n_min[kappa] + row["index"], kappa, Z * ALPHA)
                err = abs(row["value"] - ref) / ref
                worst = max(worst, err / tol)
                if err > tol:
                    bad.append(f"Z={Z} kappa={kappa} #{row['index']}: rel err {err:.2e}")
    ok = not bad and slowest <= 30.0
    acceptance(1, ok, f"worst err/tol {worst:.3g}, slowest channel {slowest:.1f}s" + (f"; {bad[:3]}" if bad else ""))
    assert ok, bad


def test_02_constant_d_inequality(acceptance):
    grid = build_grid(256, 1e-3, 2e4)
    worst, bad = np.inf, []
    for az in (0.1, 0.3, 0.5, 0.7, 0.8):
        d = d_mp(az)
        p = AtomParams(Z=az / ALPHA)
        for kappa in (-1, 1, -2):
            ch = KappaChannel(kappa)
            D0 = build_free_dirac(grid, ch, p.m).H.entries
            DZ = build_coulomb_dirac(grid, ch, p).H.entries
            scale = np.linalg.norm(D0, np.inf)
            lam = np.linalg.eigvalsh(modulus(DZ) - d * modulus(D0))[0] / scale
            lam2 = np.linalg.eigvalsh(DZ @ DZ - d * d * (D0 @ D0))[0] / scale**2
            worst = min(worst, lam, lam2)
            if lam < -1e-8 or lam2 < -1e-8:
                bad.append((az, kappa, lam, lam2))
    ok = not bad
    acceptance(2, ok, f"30 checks (linear and squared), min scaled lambda_min {worst:.3g}")
    assert ok, bad


def test_03_form_inequalities(acceptance):
    res = suite_forms(np.random.default_rng(SEED), pairs=200)
    ok = res.passed and res.info["pairs"] == 200
    acceptance(3, ok, worst_line(res))
    assert ok, [c.to_dict() for c in res.checks if not c.passed]


def test_04_mean_field_bounds(acceptance):
    res = suite_mean_field_bounds(np.random.default_rng(SEED), n_delta=20)
    ok = res.passed and len(res.checks) == 20 * 6
    acceptance(4, ok, worst_line(res))
    assert ok, [c.to_dict() for c in res.checks if not c.passed]


def test_05_projector_perturbation(acceptance):
    res = suite_nenciu(np.random.default_rng(SEED), cases=50)
    ok = res.passed and len(res.checks) == 50 * 4
    acceptance(5, ok, worst_line(res))
    assert ok, [c.to_dict() for c in res.checks if not c.passed]


def test_06_q_negativity(acceptance):
    res = suite_q_negativity(np.random.default_rng(SEED), pairs=100)
    ok = res.passed and res.info["pairs"] == 100
    acceptance(6, ok, worst_line(res))
    assert ok, [c.to_dict() for c in res.checks if not c.passed]


def test_07_scf_one_electron(acceptance, hydrogen_model):
    rep = scf_solve(hydrogen_model, q=1, config=ScfConfig(residual_tol=1e-10))
    eps1 = min(w[w > 0][0] for w in (np.linalg.eigvalsh(hydrogen_model.coulomb(s.kappa).H.entries)
                                    for s in hydrogen_model.sectors))
    err = abs(rep.energy - eps1)
    ok = rep.converged and err <= 1e-10 and rep.residual <= 1e-10
    acceptance(7, ok, f"|E - eps1| = {err:.2e}, residual {rep.residual:.2e}, {rep.n_iter} iterations")
    assert ok


def test_08_scf_helium_like(acceptance, helium_run, helium_model):
    rep, seconds = helium_run
    spec = ConstraintSpec.build(helium_model, None, 2, "S_partial_q")
    proj = 0.0
    for s in helium_model.sectors:
        g = rep.gamma.blocks[s.label]
        P = spec.plus(s.label)
        proj = max(proj, np.linalg.norm(g - g.conj().T), np.linalg.norm(g @ g - g), np.linalg.norm(P @ g @ P - g))
    D = mean_field_matrices(rep.gamma, helium_model)
    levels = sorted(e for s in helium_model.sectors
                    for e in np.linalg.eigvalsh(spec.vplus(s.label).T @ D[s.label] @ spec.vplus(s.label)))
    occ = sorted(rep.eps_occupied)
    lowest = np.allclose(occ, levels[:2], rtol=1e-12, atol=0)
    ok = (rep.converged and rep.n_iter <= 60 and proj <= 1e-9 and lowest and levels[1] < levels[2]
          and rep.no_unfilled_shells and seconds <= 300)
    acceptance(8, ok, f"{rep.n_iter} iterations, projection err {proj:.1e}, eps2 {levels[1]:.8f} < eps3 "
                      f"{levels[2]:.8f}, E_m {rep.energy_m / ALPHA**2:.5f} Ha, {seconds:.0f}s")
    assert ok


def _reduction_model():
    return AtomModel(build_grid(128, 1e-3, default_r_max(2)), AtomParams(Z=2, q=2))


def _orthonormal(V, k, rng):
    Q, _ = np.linalg.qr(V @ rng.standard_normal((V.shape[1], k)))
    return Q


def test_09_reduction_lemmas(acceptance):
    model = _reduction_model()
    spec = ConstraintSpec.build(model, None, 2, "S_partial_q")
    rng = np.random.default_rng(SEED)
    single = [s.label for s in model.sectors if s.degeneracy == 1]

    def plus(lab, k=6):
        sd = spec.op.spectra[lab]
        return sd.eigenvectors[:, sd.eigenvalues > 0][:, :k]

    def minus(lab, k=4):
        sd = spec.op.spectra[lab]
        return sd.eigenvectors[:, sd.eigenvalues < 0][:, -k:]

    # electron reduction: 10 charge-2 states with a positron hole
    er_fail, er_gain, regimes = [], [], set()
    for i in range(10):
        t = float(rng.uniform(0.1, 0.9))
        a, b = (str(x) for x in rng.choice(single, 2, replace=False))
        Va = _orthonormal(plus(a), 2, rng)
        Vb = _orthonormal(plus(b), 1, rng)
        neg = str(rng.choice(single))
        w = _orthonormal(minus(neg), 1, rng)[:, 0]
        g = DensityMatrix.from_orbitals(model.grid, model.sectors, [
            (a, Va[:, 0], 1.0), (a, Va[:, 1], t), (b, Vb[:, 0], 1.0), (neg, w, -t)])
        ge, R, info = electron_reduction(g, spec, model)
        regimes.add(info["regime"])
        gain = energy(g, model) - energy(ge, model)
        er_gain.append(gain)
        if not gain > 0 or abs(ge.charge - 2) > 1e-10:
            er_fail.append(i)

    # project to extreme: 20 fractional states of integer charge
    pe_fail, pe_worst = [], -np.inf
    for i in range(20):
        # k fractional occupations in (0, 1) with integer sum
        k = int(rng.integers(2, 6))
        while True:
            occ = rng.uniform(0.05, 0.95, k - 1)
            last = np.ceil(occ.sum()) - occ.sum()
            if 0.05 <= last <= 0.95:
                break
        labels = [str(x) for x in rng.choice(single, k)]
        vecs = {lab: _orthonormal(plus(lab), labels.count(lab), rng) for lab in sorted(set(labels))}
        orbitals = [(lab, vecs[lab][:, labels[:j].count(lab)], float(o))
                    for j, (lab, o) in enumerate(zip(labels, list(occ) + [last]))]
        g = DensityMatrix.from_orbitals(model.grid, model.sectors, orbitals)
        assert abs(g.charge - round(g.charge)) <= 1e-12
        out, info = project_to_extreme(g, model)
        rise = energy(out, model) - energy(g, model)
        pe_worst = max(pe_worst, rise)
        o = np.concatenate(list(out.occupations.values()))
        if rise > 1e-14 or np.max(np.minimum(np.abs(o), np.abs(o - 1))) > 1e-10:
            pe_fail.append(i)

    # charge saturation: one step from each undersaturated state
    m = model.params.m
    sat_fail, added = [], 0
    starts = [(model.zeros(), 1), (model.zeros(), 2)]
    u = plus("s1/2+", 1)[:, 0]
    starts.append((DensityMatrix.from_orbitals(model.grid, model.sectors, [("s1/2+", u, 1.0)]), 2))
    starts.append((DensityMatrix.from_orbitals(model.grid, model.sectors, [("s1/2+", u, 0.5)]), 1))
    for g, q in starts:
        s_q = ConstraintSpec.build(model, None, q, "S_partial_q")
        new, info = charge_saturation_step(g, s_q, model)
        if isinstance(new, str):
            continue
        added += 1
        if not energy(new, model) - m * new.charge < energy(g, model) - m * g.charge:
            sat_fail.append(q)

    ok = (not er_fail and regimes == {"inside proven regime"} and not pe_fail and not sat_fail and added >= 3)
    acceptance(9, ok, f"reduction min gain {min(er_gain):.2e} ({regimes}), extreme max rise {pe_worst:.1e}, "
                      f"saturation {added} strict descents")
    assert ok, (er_fail, regimes, pe_fail, sat_fail, added)


def test_10_gap_accumulation(acceptance):
    lam, delta = gap_accumulation_data()
    gaps = 1.0 - lam
    inc = gaps**2
    ok = (abs(delta.charge - 1) <= 1e-10 and lam.size >= 5 and np.all(np.diff(lam) > 0)
          and np.all(np.diff(gaps) < 0) and np.all(np.diff(inc) < 0) and np.all((lam > 0) & (lam < 1)))
    acceptance(10, ok, f"{lam.size} resolved gap eigenvalues, last m - lambda = {gaps[-1]:.3e}")
    assert ok, lam


def test_11_sea_pair_consistency(acceptance, hydrogen_model):
    rep = self_consistent_projector(hydrogen_model, q=1)
    rg, rl = euler_residuals(rep.pair, hydrogen_model)
    g = rep.pair.gamma
    e_m = energy(g, hydrogen_model) - hydrogen_model.params.m * g.charge
    diff = abs(rep.energy_frak - e_m)
    ok = rep.converged and max(rg, rl) <= 1e-7 and diff <= 1e-9
    acceptance(11, ok, f"Euler residuals {rg:.1e}/{rl:.1e}, |frakE - E_m| = {diff:.1e}")
    assert ok


def test_12_determinism_and_persistence(acceptance, tmp_path, helium_run, helium_model):
    cfg = tmp_path / "verify.json"
    cfg.write_text(json.dumps({"mode": "verify", "seed": 42,
                               "verify": {"suites": ["nenciu", "q_negativity", "forms", "gap_accumulation"],
                                          "workers": 4}}))
    codes, blobs = [], []
    for out in ("a", "a", "b"):
        codes.append(main(["verify", "--config", str(cfg), "--out", str(tmp_path / out)]))
        blobs.append((tmp_path / out / "report.json").read_bytes())
    same = blobs[0] == blobs[1]
    # a different output directory only changes the echoed output block
    a, b = (json.loads(x) for x in (blobs[0], blobs[2]))
    for r in (a, b):
        r["config"].pop("output")
    same = same and a == b
    rep, _ = helium_run
    path = tmp_path / "gamma.npdm"
    save_density(path, rep.gamma)
    back = load_density(path, helium_model.grid)
    exact = all(np.array_equal(back.blocks[k], rep.gamma.blocks[k]) for k in rep.gamma.blocks)
    ok = codes == [0, 0, 0] and same and exact
    acceptance(12, ok, f"exit codes {codes}, reports identical {same}, npdm round trip exact {exact}")
    assert ok
