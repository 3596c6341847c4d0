"""Dirac-sea pairs (Gamma, Lambda), the unrenormalized pair functional and
the self-consistent projector loop delta -> gamma*(delta).

Gamma and Lambda are stored per sector as projectors on the 2n-dimensional
channel space. The electron density matrix gamma = Gamma - Lambda is kept
alongside so that energies never subtract two large projectors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .mean_field import AtomModel, DensityMatrix, _unchecked, energy, mean_field_matrices, q_form
from .nopair_scf import ConstraintSpec, ScfConfig, existence_regime, scf_solve
from .spectral_core import HermitianOperator, Projector, ValidationError

__all__ = [
    "SeaPair",
    "MittlemanError",
    "MittlemanReport",
    "frak_energy",
    "euler_residuals",
    "pair_from_spec",
    "self_consistent_projector",
]

log = logging.getLogger(__name__)

PAIR_TOL = 1e-10
TRACE_TOL = 1e-8
# projector distances below this are eigenvector roundoff, not contraction data
DISTANCE_FLOOR = 1e-10
LABEL = "stationary point candidate"


class MittlemanError(RuntimeError):
    def __init__(self, message: str, outer_iteration: int):
        super().__init__(f"outer iteration {outer_iteration}: {message}")
        self.outer_iteration = outer_iteration


def _as_projector(p, basis_id: str) -> Projector:
    if isinstance(p, Projector):
        return p
    p = np.asarray(p)
    return Projector(HermitianOperator.symmetrized(p, basis_id), int(round(float(np.real(np.trace(p))))))


@dataclass(frozen=True, eq=False)
class SeaPair:
    """Gamma, Lambda: dicts sector label -> Projector; gamma = Gamma - Lambda."""

    Gamma: dict
    Lambda: dict
    gamma: DensityMatrix

    def __post_init__(self):
        for s in self.gamma.sectors:
            G, L = self.Gamma[s.label].entries, self.Lambda[s.label].entries
            err = np.linalg.norm(G - L - self.gamma.blocks[s.label])
            if err > PAIR_TOL * max(1.0, np.sqrt(G.shape[0])):
                raise ValidationError(f"sector {s.label}: |Gamma - Lambda - gamma|_F = {err:.3e}")
        tr = self.trace
        if abs(tr - round(tr)) > TRACE_TOL:
            raise ValidationError(f"tr(Gamma - Lambda) = {tr:.12g} is not an integer")

    @classmethod
    def from_projectors(cls, grid, sectors, Gamma: dict, Lambda: dict) -> "SeaPair":
        G = {s.label: _as_projector(Gamma[s.label], grid.hash) for s in sectors}
        L = {s.label: _as_projector(Lambda[s.label], grid.hash) for s in sectors}
        gamma = _unchecked(grid, sectors, {s.label: G[s.label].entries - L[s.label].entries for s in sectors})
        return cls(G, L, gamma)

    @property
    def trace(self) -> float:
        return self.gamma.charge

    @property
    def sectors(self):
        return self.gamma.sectors


def pair_from_spec(gamma: DensityMatrix, spec: ConstraintSpec) -> SeaPair:
    """Lambda = Lambda_-^(delta), Gamma = Lambda + gamma."""
    L, G = {}, {}
    for s in gamma.sectors:
        M = spec.op.minus[s.label]
        L[s.label] = M
        G[s.label] = Projector(HermitianOperator.symmetrized(M.entries + gamma.blocks[s.label], M.basis_id),
                               M.rank + int(round(float(np.real(np.trace(gamma.blocks[s.label]))))))
    return SeaPair(G, L, gamma)


def frak_energy(pair: SeaPair, model: AtomModel) -> float:
    """tr((D_Z - m)(Gamma - Lambda)) + alpha Q[Gamma - Lambda, Gamma - Lambda]."""
    g = pair.gamma
    model.check(g)
    m = model.params.m
    tot = 0.0
    for s in model.sectors:
        b = g.blocks[s.label]
        if np.any(b):
            H = model.coulomb(s.kappa).H.entries
            tot += s.degeneracy * float(np.real(np.sum(H * b.T) - m * np.trace(b)))
    return tot + model.params.alpha * float(np.real(q_form(g, g, model)))


def euler_residuals(pair: SeaPair, model: AtomModel) -> tuple[float, float]:
    """(||[D^(gamma), Gamma]||_F, ||[D^(gamma), Lambda]||_F), degeneracy weighted."""
    D = mean_field_matrices(pair.gamma, model)
    rg = rl = 0.0
    for s in model.sectors:
        d = D[s.label]
        G, L = pair.Gamma[s.label].entries, pair.Lambda[s.label].entries
        rg += s.degeneracy * np.linalg.norm(d @ G - G @ d) ** 2
        rl += s.degeneracy * np.linalg.norm(d @ L - L @ d) ** 2
    return float(np.sqrt(rg)), float(np.sqrt(rl))


@dataclass
class MittlemanReport:
    iterations: list
    converged: bool
    label: str
    pair: SeaPair
    energy_frak: float
    energy_m: float
    residuals: tuple
    flags: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "label": self.label,
            "outer_iterations": len(self.iterations),
            "energy_frak": self.energy_frak,
            "energy_m": self.energy_m,
            "euler_residual_gamma": self.residuals[0],
            "euler_residual_lambda": self.residuals[1],
            "flags": self.flags,
            "warnings": self.warnings,
            "iterations": self.iterations,
        }


def _projector_distance(a: ConstraintSpec, b: ConstraintSpec) -> float:
    tot = 0.0
    for s in a.delta.sectors:
        tot += s.degeneracy * np.linalg.norm(a.minus(s.label) - b.minus(s.label)) ** 2
    return float(np.sqrt(tot))


def self_consistent_projector(model: AtomModel, q: int | None = None, config: ScfConfig = ScfConfig(),
                              tol: float = 1e-10, max_outer: int = 30) -> MittlemanReport:
    """Outer loop delta_{k+1} = gamma*(delta_k) with gamma* the no-pair minimizer.

    Each outer step records the pair functional, the Frobenius distance
    between consecutive negative projectors and the inner SCF size. A
    converged result is only a stationary point candidate.
    """
    q = model.params.q if q is None else int(q)
    delta = model.zeros()
    spec = ConstraintSpec.build(model, delta, q, "S_partial_q")
    iters, warnings = [], []
    gamma = None
    converged = False
    for k in range(1, max_outer + 1):
        ex = existence_regime(model, delta.charge, q)
        if not ex["inside"]:
            warnings.append(f"outer {k}: outside existence regime ({ex['lhs']:.4g} >= {ex['rhs']:.4g})")
        try:
            rep = scf_solve(model, q=q, config=config, spec=spec, guess=gamma)
        except Exception as exc:
            raise MittlemanError(str(exc), k) from exc
        if not rep.converged:
            raise MittlemanError(f"inner SCF did not converge (residual {rep.residual:.3e})", k)
        gamma = rep.gamma
        pair = pair_from_spec(gamma, spec)
        change = (gamma - delta).frobenius()
        nxt = ConstraintSpec.build(model, gamma, q, "S_partial_q")
        dist = _projector_distance(spec, nxt)
        iters.append({"outer": k, "energy_frak": frak_energy(pair, model), "projector_distance": dist,
                      "delta_change": change, "inner_iterations": rep.n_iter})
        log.info("outer %d: E=%.15g dLambda=%.3e dgamma=%.3e", k, iters[-1]["energy_frak"], dist, change)
        if change <= tol:
            converged = True
            break
        delta, spec = gamma, nxt
    flags = []
    d = [it["projector_distance"] for it in iters]
    if any(d[i + 1] > d[i] and d[i + 1] > DISTANCE_FLOOR for i in range(1, len(d) - 1)):
        flags.append("non-contractive")
    pair = pair_from_spec(gamma, spec)
    res = euler_residuals(pair, model)
    if not converged:
        warnings.append(f"outer loop stopped after {max_outer} iterations")
    return MittlemanReport(
        iterations=iters,
        converged=converged,
        label=LABEL if converged else "not converged",
        pair=pair,
        energy_frak=frak_energy(pair, model),
        energy_m=energy(gamma, model) - model.params.m * gamma.charge,
        residuals=res,
        flags=flags,
        warnings=warnings,
    )
