"""No-pair Dirac-Fock: constraint sets, aufbau, SCF and the reduction steps.

All electron states live in the positive spectral subspace of a fixed
screened operator D^(delta). The SCF works in the coordinates of that
subspace: per sector, V+ holds the positive eigenvectors of D^(delta)
and the projected Fock operator is V+^T D^(gamma) V+.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sl

from .mean_field import (
    AtomModel,
    DensityMatrix,
    MeanFieldOperator,
    _unchecked,
    build_mean_field_operator,
    c_constant,
    energy,
    energy_mu,
    mean_field_matrices,
    q_form,
)
from .radial_dirac import compute_d
from .spectral_core import ValidationError

__all__ = [
    "OpenShellError",
    "ConstraintSpec",
    "Verdict",
    "ScfConfig",
    "ScfReport",
    "existence_regime",
    "membership",
    "aufbau_step",
    "scf_solve",
    "electron_reduction",
    "project_to_extreme",
    "charge_saturation_step",
    "commutator_residual",
]

log = logging.getLogger(__name__)

KINDS = ("S", "S_q", "S_partial_q")


class OpenShellError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    """Screening source delta, target charge and which constraint set."""

    delta: DensityMatrix
    q: int
    kind: str
    op: MeanFieldOperator

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {self.kind!r}")

    @classmethod
    def build(cls, model: AtomModel, delta: DensityMatrix | None = None, q: int = 0, kind: str = "S_q"):
        delta = delta if delta is not None else model.zeros()
        return cls(delta, int(q), kind, build_mean_field_operator(delta, model))

    def plus(self, label: str) -> np.ndarray:
        return self.op.plus[label].entries

    def minus(self, label: str) -> np.ndarray:
        return self.op.minus[label].entries

    def vplus(self, label: str) -> np.ndarray:
        return self.op.positive_vectors(label)


@dataclass
class Verdict:
    member: bool
    violations: list = field(default_factory=list)
    charge: float = 0.0

    def __bool__(self):
        return self.member


def membership(gamma: DensityMatrix, spec: ConstraintSpec, tol: float = 1e-9) -> Verdict:
    """Test -L- <= gamma <= L+, L- gamma L+ = 0 and the trace window."""
    viol = []
    for s in gamma.sectors:
        g = gamma.blocks[s.label]
        P, M = spec.plus(s.label), spec.minus(s.label)
        wpp = np.linalg.eigvalsh(P @ g @ P)
        wmm = np.linalg.eigvalsh(M @ g @ M)
        off = np.linalg.norm(M @ g @ P)
        if wpp[0] < -tol:
            viol.append(("positive-block-below-0", s.label, float(wpp[0])))
        if wpp[-1] > 1 + tol:
            viol.append(("positive-block-above-1", s.label, float(wpp[-1])))
        if wmm[0] < -1 - tol:
            viol.append(("negative-block-below-minus-1", s.label, float(wmm[0])))
        if wmm[-1] > tol:
            viol.append(("negative-block-above-0", s.label, float(wmm[-1])))
        if off > tol:
            viol.append(("off-diagonal", s.label, float(off)))
    tr = gamma.charge
    if spec.kind == "S_q" and not (-tol <= tr <= spec.q + tol):
        viol.append(("trace-window", None, tr))
    if spec.kind == "S_partial_q" and abs(tr - spec.q) > 1e-8:
        viol.append(("trace-equals-q", None, tr))
    return Verdict(not viol, viol, tr)


def existence_regime(model: AtomModel, delta_charge: float, q: int) -> dict:
    a = model.params.alpha
    lhs = np.pi * a * (0.25 + max(delta_charge, q))
    rhs = compute_d(model.params.alpha_z) - 4 * a * delta_charge
    return {"lhs": float(lhs), "rhs": float(rhs), "inside": bool(lhs < rhs)}


@dataclass(frozen=True)
class ScfConfig:
    damping: float = 0.3
    level_shift: float = 0.2
    max_iter: int = 60
    residual_tol: float = 1e-9
    energy_tol: float = 1e-10
    handoff: float = 1e-3
    allow_fractional: bool = False

    def __post_init__(self):
        if not (0 < self.damping <= 1):
            raise ValidationError(f"damping must lie in (0, 1], got {self.damping}")
        if self.level_shift < 0:
            raise ValidationError("level_shift must be >= 0")
        if self.residual_tol <= 0 or self.energy_tol <= 0 or self.handoff <= 0:
            raise ValidationError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")


@dataclass
class ScfReport:
    iterations: list
    converged: bool
    gamma: DensityMatrix
    energy: float
    energy_m: float
    residual: float
    eps_occupied: list
    eps_next: float | None
    gap_value: float | None
    no_unfilled_shells: bool
    existence: dict
    warnings: list = field(default_factory=list)

    @property
    def n_iter(self) -> int:
        return len(self.iterations)

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.n_iter,
            "energy": self.energy,
            "energy_m": self.energy_m,
            "residual": self.residual,
            "eps_occupied": self.eps_occupied,
            "eps_next": self.eps_next,
            "gap_value": self.gap_value,
            "no_unfilled_shells": self.no_unfilled_shells,
            "existence": self.existence,
            "warnings": self.warnings,
        }


def _project(D: dict, spec: ConstraintSpec) -> dict:
    out = {}
    for lab, d in D.items():
        V = spec.vplus(lab)
        f = V.conj().T @ d @ V
        out[lab] = 0.5 * (f + f.conj().T)
    return out


def commutator_residual(gamma: DensityMatrix, spec: ConstraintSpec, D: dict | None = None, model: AtomModel | None = None) -> float:
    """|| [gamma, L+ D^(gamma) L+] ||_F with degeneracy weights."""
    if D is None:
        D = mean_field_matrices(gamma, model)
    tot = 0.0
    for s in gamma.sectors:
        P = spec.plus(s.label)
        F = P @ D[s.label] @ P
        g = gamma.blocks[s.label]
        tot += s.degeneracy * np.linalg.norm(g @ F - F @ g) ** 2
    return float(np.sqrt(tot))


def aufbau_step(F: dict, spec: ConstraintSpec, q: int, sectors, shift: dict | None = None,
                allow_fractional: bool = False, m: float = 1.0):
    """Fill the q lowest levels of the projected operators F (V+ coordinates).

    Returns the density matrix (channel coordinates) and the level table.
    Degenerate levels of different sectors are taken in sector order.
    """
    levels = []
    order = {s.label: i for i, s in enumerate(sectors)}
    vecs = {}
    for s in sectors:
        f = F[s.label] if shift is None else F[s.label] + shift[s.label]
        w, u = np.linalg.eigh(f)
        vecs[s.label] = (w, u)
        for i, e in enumerate(w):
            levels.append((float(e), order[s.label], i, s))
    levels.sort(key=lambda t: (t[0], t[1], t[2]))
    remaining = float(q)
    occ = []
    nxt = None
    for e, _, i, s in levels:
        if remaining <= 1e-12:
            nxt = e
            break
        if e <= 0:
            continue
        if s.degeneracy <= remaining + 1e-12:
            occ.append((s, i, 1.0, e))
            remaining -= s.degeneracy
        elif allow_fractional:
            occ.append((s, i, remaining / s.degeneracy, e))
            remaining = 0.0
        else:
            raise OpenShellError(
                f"open degenerate shell: level {e:.12g} of {s.label} holds {s.degeneracy} "
                f"but only {remaining:g} electrons remain"
            )
    if remaining > 1e-12:
        raise ValidationError(f"not enough positive levels to place {q} electrons")
    n2 = 2 * spec.delta.grid.n
    blocks = {s.label: np.zeros((n2, n2)) for s in sectors}
    for s, i, f, e in occ:
        v = spec.vplus(s.label) @ vecs[s.label][1][:, i]
        blocks[s.label] += f * np.outer(v, v.conj())
    gamma = _unchecked(spec.delta.grid, sectors, blocks)
    info = {
        "occupied": [(s.label, int(i), float(f), float(e)) for s, i, f, e in occ],
        "eps_occupied": [float(e) for *_, e in occ],
        "eps_next": None if nxt is None else float(nxt),
    }
    return gamma, info


def _level_shift(gamma: DensityMatrix, spec: ConstraintSpec, sigma: float) -> dict:
    out = {}
    for s in gamma.sectors:
        V = spec.vplus(s.label)
        gp = V.conj().T @ gamma.blocks[s.label] @ V
        out[s.label] = sigma * (np.eye(V.shape[1]) - 0.5 * (gp + gp.conj().T))
    return out


def scf_solve(model: AtomModel, delta: DensityMatrix | None = None, q: int | None = None,
              config: ScfConfig = ScfConfig(), spec: ConstraintSpec | None = None,
              guess: DensityMatrix | None = None) -> ScfReport:
    """Damped aufbau iteration for the no-pair Dirac-Fock equations.

    gamma_{k+1} = (1 - theta) gamma_k + theta aufbau(D^(gamma_k)) until the
    step falls below ``handoff``, then pure aufbau steps until
    ||[gamma, L+ D^(gamma) L+]||_F <= residual_tol and |dE| <= energy_tol.
    The start is aufbau(D_Z), or aufbau(D^(guess)) when a guess is given.
    """
    q = model.params.q if q is None else int(q)
    spec = spec or ConstraintSpec.build(model, delta, q, "S_partial_q")
    delta = spec.delta
    warnings = []
    ex = existence_regime(model, delta.charge, q)
    if not ex["inside"]:
        msg = f"outside existence regime: {ex['lhs']:.4g} >= {ex['rhs']:.4g}"
        log.warning(msg)
        warnings.append(msg)
    sectors = model.sectors
    m = model.params.m
    if q == 0:
        g0 = model.zeros()
        D = mean_field_matrices(g0, model)
        F = _project(D, spec)
        _, info = aufbau_step(F, spec, 0, sectors)
        eps_next = min(float(np.linalg.eigvalsh(f)[0]) for f in F.values())
        return ScfReport([{"iteration": 0, "energy": 0.0, "energy_m": 0.0, "residual": 0.0, "charge": 0.0,
                           "phase": "pure", "step": 0.0, "eps": []}], True, g0, 0.0, 0.0, 0.0, [], eps_next,
                         None, True, ex, warnings)
    if guess is None:
        D0 = {s.label: model.coulomb(s.kappa).H.entries for s in sectors}
    else:
        D0 = mean_field_matrices(guess, model)
    gamma, info = aufbau_step(_project(D0, spec), spec, q, sectors, allow_fractional=config.allow_fractional)
    phase = "damped" if config.damping < 1 else "pure"
    shifted = False
    iters = []
    e_prev = None
    converged = False
    res = np.inf
    for it in range(1, config.max_iter + 1):
        D = mean_field_matrices(gamma, model)
        F = _project(D, spec)
        res = commutator_residual(gamma, spec, D)
        e = energy(gamma, model)
        de = np.inf if e_prev is None else abs(e - e_prev)
        pure = gamma.is_projection(1e-9)
        rec = {"iteration": it, "energy": e, "energy_m": e - m * gamma.charge, "residual": res,
               "charge": gamma.charge, "phase": phase, "eps": info["eps_occupied"]}
        if pure and res <= config.residual_tol and (de <= config.energy_tol or res <= 1e-3 * config.residual_tol):
            rec["step"] = 0.0
            iters.append(rec)
            converged = True
            break
        # the shift is a safeguard: engaged once the energy rises
        if e_prev is not None and e > e_prev + config.energy_tol and config.level_shift and not shifted:
            shifted = True
            warnings.append(f"energy rose at iteration {it}; level shift {config.level_shift:g} m engaged")
            if phase == "pure":
                phase = "damped"
        shift = _level_shift(gamma, spec, config.level_shift * m) if phase == "damped" and shifted else None
        new, info = aufbau_step(F, spec, q, sectors, shift, config.allow_fractional)
        step = (new - gamma).frobenius()
        rec["step"] = step
        iters.append(rec)
        if phase == "damped":
            gamma = gamma.scale(1 - config.damping) + new.scale(config.damping)
            if step <= config.handoff:
                phase = "pure"
        else:
            gamma = new
        e_prev = e
    if not converged:
        # final pure step restores idempotency even when unconverged
        if not gamma.is_projection(1e-9):
            D = mean_field_matrices(gamma, model)
            gamma, info = aufbau_step(_project(D, spec), spec, q, sectors, allow_fractional=config.allow_fractional)
        res = commutator_residual(gamma, spec, model=model)
        warnings.append(f"not converged after {config.max_iter} iterations (residual {res:.3e})")
    D = mean_field_matrices(gamma, model)
    F = _project(D, spec)
    _, final = aufbau_step(F, spec, q, sectors, allow_fractional=config.allow_fractional)
    e = energy(gamma, model)
    eps_occ = final["eps_occupied"]
    eps_next = final["eps_next"]
    gap = None if eps_next is None or not eps_occ else eps_next - max(eps_occ)
    return ScfReport(
        iterations=iters,
        converged=converged,
        gamma=gamma,
        energy=e,
        energy_m=e - m * gamma.charge,
        residual=res,
        eps_occupied=eps_occ,
        eps_next=eps_next,
        gap_value=gap,
        no_unfilled_shells=bool(gap is not None and gap > 1e-10),
        existence=ex,
        warnings=warnings,
    )


# ---------------------------------------------------------------- reduction steps


def electron_reduction(gamma: DensityMatrix, spec: ConstraintSpec, model: AtomModel):
    """Split gamma = gamma_e + R with gamma_e >= 0 of the same charge.

    The positron part -L- gamma L- is paired with an equal charge taken
    from the electron part, highest D^(delta) energy first. Returns
    (gamma_e, R, info); info reports whether the screening constant lies
    in the regime where the energy comparison is proven.
    """
    v = membership(gamma, spec.__class__(spec.delta, spec.q, "S_partial_q", spec.op))
    if not v:
        raise ValidationError(f"gamma not in the fixed-charge set: {v.violations}")
    comps = []
    pos_blocks, neg_charge = {}, 0.0
    for s in gamma.sectors:
        P, M = spec.plus(s.label), spec.minus(s.label)
        g = gamma.blocks[s.label]
        gp = P @ g @ P
        gp = 0.5 * (gp + gp.conj().T)
        gm = -(M @ g @ M)
        neg_charge += s.degeneracy * float(np.real(np.trace(gm)))
        w, u = np.linalg.eigh(gp)
        Dd = spec.op.D[s.label].entries
        for i in np.flatnonzero(w > 1e-14):
            e = float(np.real(u[:, i].conj() @ Dd @ u[:, i]))
            comps.append((e, s, w[i], u[:, i]))
        pos_blocks[s.label] = gp
    comps.sort(key=lambda t: -t[0])
    removed = {s.label: np.zeros_like(pos_blocks[s.label]) for s in gamma.sectors}
    left = neg_charge
    for e, s, lam, u in comps:
        if left <= 1e-15:
            break
        take = min(lam, left / s.degeneracy)
        removed[s.label] = removed[s.label] + take * np.outer(u, u.conj())
        left -= take * s.degeneracy
    ge = {k: pos_blocks[k] - removed[k] for k in pos_blocks}
    gamma_e = DensityMatrix(gamma.grid, gamma.sectors, {k: 0.5 * (b + b.conj().T) for k, b in ge.items()})
    R = gamma - gamma_e
    c_disc, c_low = c_constant(spec.delta, model)
    a = model.params.alpha
    need = np.pi * a * (0.25 + max(spec.delta.charge, spec.q))
    e_full = energy(gamma, model)
    e_red = energy(gamma_e, model)
    info = {
        "energy": e_full,
        "energy_e": e_red,
        "positron_charge": neg_charge,
        "c_discrete": c_disc,
        "c_required": need,
        "regime": "inside proven regime" if c_disc > need else "outside proven regime",
    }
    return gamma_e, R, info


def _energy_pieces(gamma: DensityMatrix, S: DensityMatrix, model: AtomModel):
    a = model.params.alpha
    lin = 0.0
    for s in model.sectors:
        b = S.blocks[s.label]
        if np.any(b):
            lin += s.degeneracy * float(np.real(np.sum(model.coulomb(s.kappa).H.entries * b.T)))
    lin += 2 * a * float(np.real(q_form(gamma, S, model)))
    quad = a * float(np.real(q_form(S, S, model)))
    return lin, quad


def project_to_extreme(gamma: DensityMatrix, model: AtomModel, tol: float = 1e-10, max_steps: int = 10_000):
    """Remove fractional occupations by pairwise transfers.

    Two fractional eigenvalues lam (vector u) and mu (vector v) of sectors
    of equal degeneracy are moved along S = |u><u| - |v><v| in the
    direction set by the sign of the linear energy coefficient until one
    of them reaches 0 or 1; Q[S, S] < 0 makes every step a descent.
    """
    q = gamma.charge
    if abs(q - round(q)) > 1e-8:
        raise ValidationError(f"non-integer trace {q:.12g}")
    states = []
    for s in gamma.sectors:
        w, u = gamma.eigh(s.label)
        if w.size and w[0] < -1e-9:
            raise ValidationError(f"gamma must be nonnegative (sector {s.label} has {w[0]:.3e})")
        for i in range(w.size):
            if w[i] > tol:
                states.append([s, float(min(w[i], 1.0)), u[:, i]])
    steps = []
    e0 = energy(gamma, model)
    cur = gamma
    for _ in range(max_steps):
        frac = [st for st in states if tol < st[1] < 1 - tol]
        pair = None
        for i, a in enumerate(frac):
            for b in frac[i + 1:]:
                if a[0].degeneracy == b[0].degeneracy:
                    pair = (a, b)
                    break
            if pair:
                break
        if pair is None:
            if frac:
                labs = sorted({st[0].label for st in frac})
                raise OpenShellError(f"open degenerate shell: fractional occupation left in {labs}")
            break
        (su, lam, u), (sv, mu, v) = pair[0], pair[1]
        n2 = u.size
        S = _unchecked(cur.grid, cur.sectors, {s.label: np.zeros((n2, n2)) for s in cur.sectors})
        S.blocks[su.label] = S.blocks[su.label] + np.outer(u, u.conj())
        S.blocks[sv.label] = S.blocks[sv.label] - np.outer(v, v.conj())
        lin, quad = _energy_pieces(cur, S, model)
        lo, hi = max(-lam, mu - 1.0), min(1.0 - lam, mu)
        if su.degeneracy == 1:
            # Q[S, S] < 0: moving against the linear term is a descent
            eps = hi if lin <= 0 else lo
        else:
            # shell-averaged blocks: Q[S, S] may be positive, take the better end
            eps = min((lo, hi), key=lambda t: lin * t + quad * t * t)
            if lin * eps + quad * eps * eps > 0:
                raise OpenShellError(f"open degenerate shell: no descent moving weight between {su.label} and {sv.label}")
        cur = cur + S.scale(eps)
        pair[0][1] = lam + eps
        pair[1][1] = mu - eps
        for st in pair:
            if abs(st[1]) <= tol:
                st[1] = 0.0
            elif abs(st[1] - 1) <= tol:
                st[1] = 1.0
        steps.append({"sectors": (su.label, sv.label), "eps": eps, "linear": lin, "quadratic": quad,
                      "predicted": lin * eps + quad * eps * eps})
    if not steps:
        # nothing fractional: already a projection
        return gamma, {"energy_in": e0, "energy_out": e0, "steps": steps}
    # rebuild from the snapped spectrum to remove accumulated roundoff
    n2 = 2 * gamma.grid.n
    blocks = {s.label: np.zeros((n2, n2), dtype=gamma.blocks[s.label].dtype) for s in gamma.sectors}
    for s, lam, u in states:
        if lam > 0.5:
            blocks[s.label] += np.outer(u, u.conj())
    out = DensityMatrix(gamma.grid, gamma.sectors, blocks)
    info = {"energy_in": e0, "energy_out": energy(out, model), "steps": steps}
    return out, info


def charge_saturation_step(gamma: DensityMatrix, spec: ConstraintSpec, model: AtomModel,
                           tail_fraction: float = 0.5, tail_tol: float = 1e-8):
    """Add one resolved gap state orthogonal to range(gamma).

    Returns (new gamma, info) or ("saturated", info) when no resolved gap
    state of L+ D^(gamma) L+ below m is left outside range(gamma).
    """
    q = spec.q
    tr = gamma.charge
    if tr >= q - 1e-12:
        raise ValidationError(f"precondition violated: tr gamma = {tr:.12g} is not below q = {q}")
    for s in gamma.sectors:
        w = gamma.occupations[s.label]
        if w.size and w[0] < -1e-9:
            raise ValidationError("gamma must be nonnegative")
    m = model.params.m
    D = mean_field_matrices(gamma, model)
    best = None
    for s in gamma.sectors:
        V = spec.vplus(s.label)
        f = V.conj().T @ D[s.label] @ V
        w, u = np.linalg.eigh(0.5 * (f + f.conj().T))
        X = V @ u[:, (w > 0) & (w < m)]
        if X.shape[1] == 0:
            continue
        far = model.site_radii(s.kappa) > tail_fraction * model.grid.r_max
        X = X[:, np.sum(np.abs(X[far]) ** 2, axis=0) < tail_tol]
        if X.shape[1] == 0:
            continue
        gw, gv = gamma.eigh(s.label)
        Rg = gv[:, gw > 1e-10]
        if Rg.shape[1]:
            N = sl.null_space(Rg.conj().T @ X, rcond=1e-10)
            Y = X @ N
        else:
            Y = X
        if Y.shape[1] == 0:
            continue
        Y, _ = np.linalg.qr(Y)
        h = Y.conj().T @ D[s.label] @ Y
        hw, hv = np.linalg.eigh(0.5 * (h + h.conj().T))
        uvec = Y @ hv[:, 0]
        lin = float(np.real(uvec.conj() @ (D[s.label] - m * np.eye(uvec.size)) @ uvec))
        if lin >= 0:
            continue
        wgt = min(1.0, (q - tr) / s.degeneracy)
        A1 = DensityMatrix.from_orbitals(gamma.grid, gamma.sectors, [(s.label, uvec, 1.0)])
        selfq = 0.0 if s.degeneracy == 1 else model.params.alpha * float(np.real(q_form(A1, A1, model)))
        pred = wgt * s.degeneracy * lin + wgt * wgt * selfq
        if best is None or pred < best[0]:
            best = (pred, s, uvec, wgt, lin)
    if best is None:
        return "saturated", {"reason": "no resolved gap state outside range(gamma)"}
    pred, s, uvec, wgt, lin = best
    new = gamma + DensityMatrix.from_orbitals(gamma.grid, gamma.sectors, [(s.label, uvec, wgt)])
    new = new.validated()
    e_old, e_new = energy_mu(gamma, model, m), energy_mu(new, model, m)
    info = {"sector": s.label, "weight": wgt, "u_D_minus_m_u": lin, "predicted": pred,
            "energy_m_old": e_old, "energy_m_new": e_new, "decrease": e_new - e_old}
    return new, info
