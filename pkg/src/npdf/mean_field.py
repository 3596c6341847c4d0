"""Densities, Coulomb and exchange forms, and the mean-field operator.

Density matrices are block diagonal over *sectors*: the j = 1/2 channels
are split by magnetic quantum number (each substate is its own block of
degeneracy one), while p3/2 is carried as one block shared by its four
substates. With this choice a single occupied j = 1/2 orbital is an
honest rank-one density matrix, so its self-exchange cancels its
self-repulsion exactly.

Interaction integrals use the site picture of the staggered grid: every
basis component is a thin spherical shell at a fixed radius (a node for
large components, a half-step point for small ones). Pair densities of
two channels are therefore products on the shared site set, and the
Coulomb kernel reduces to the multipole kernels

    G_k[x, y] = r_<^k / r_>^(k+1)

weighted by angular factors summed over the magnetic substates of each
sector pair.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import factorial

import numpy as np

from .radial_dirac import (
    SUPPORTED_KAPPAS,
    AtomParams,
    KappaChannel,
    RadialDiracOperator,
    RadialGrid,
    abs_p,
    build_coulomb_dirac,
    build_free_dirac,
    channel_basis_id,
    compute_d,
    laplacian,
)
from .spectral_core import (
    BasisMismatchError,
    HermitianOperator,
    Indicator,
    Projector,
    ValidationError,
    eig,
    order_constant,
    spectral_function,
)

__all__ = [
    "Sector",
    "sectors_for",
    "DensityMatrix",
    "RadialDensity",
    "MeanField",
    "MultipoleTable",
    "AtomModel",
    "wigner3j",
    "angular_factor",
    "density",
    "direct_potential",
    "exchange_matrix",
    "coulomb_form",
    "exchange_form",
    "q_form",
    "energy",
    "energy_mu",
    "build_mean_field_operator",
    "c_constant",
    "mean_field",
    "mean_field_matrices",
    "MeanFieldOperator",
    "f_norm_density",
]

log = logging.getLogger(__name__)

OCC_TOL = 1e-10


# ---------------------------------------------------------------- sectors


@dataclass(frozen=True)
class Sector:
    kappa: int
    mj: float | None
    degeneracy: int

    @property
    def channel(self) -> KappaChannel:
        return KappaChannel(self.kappa)

    @property
    def label(self) -> str:
        lab = self.channel.label
        if self.mj is None:
            return lab
        return lab + ("+" if self.mj > 0 else "-")

    @property
    def magnetic(self) -> tuple[float, ...]:
        if self.mj is not None:
            return (self.mj,)
        j = self.channel.j
        return tuple(-j + i for i in range(self.degeneracy))


def sectors_for(kappas=SUPPORTED_KAPPAS) -> tuple[Sector, ...]:
    out = []
    for k in kappas:
        ch = KappaChannel(k)
        if ch.degeneracy == 2:
            out += [Sector(k, 0.5, 1), Sector(k, -0.5, 1)]
        else:
            out.append(Sector(k, None, ch.degeneracy))
    return tuple(out)


# ---------------------------------------------------------------- density matrices


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Block-diagonal charge density matrix.

    ``blocks`` maps sector labels to 2n x 2n Hermitian blocks in the
    orthonormal channel coordinates. Traces and norms are weighted by
    sector degeneracy so that they count particles.
    """

    grid: RadialGrid
    sectors: tuple[Sector, ...]
    blocks: dict

    def __post_init__(self):
        n2 = 2 * self.grid.n
        fixed = {}
        for s in self.sectors:
            b = np.asarray(self.blocks.get(s.label, np.zeros((n2, n2))))
            if b.shape != (n2, n2):
                raise BasisMismatchError(f"block {s.label} has shape {b.shape}, expected {(n2, n2)}")
            b = HermitianOperator(b).entries
            fixed[s.label] = b
        extra = set(self.blocks) - set(fixed)
        if extra:
            raise BasisMismatchError(f"unknown sectors {sorted(extra)}")
        object.__setattr__(self, "blocks", fixed)
        for s in self.sectors:
            w = self.occupations[s.label]
            if w.size and (w[0] < -1 - OCC_TOL or w[-1] > 1 + OCC_TOL):
                raise ValidationError(f"occupations of {s.label} outside [-1, 1]: [{w[0]:.3e}, {w[-1]:.3e}]")

    @property
    def basis_id(self) -> str:
        return self.grid.hash

    @classmethod
    def zeros(cls, grid: RadialGrid, sectors=None) -> "DensityMatrix":
        sectors = sectors or sectors_for()
        return cls(grid, tuple(sectors), {})

    @classmethod
    def from_orbitals(cls, grid, sectors, orbitals) -> "DensityMatrix":
        """orbitals: iterable of (sector label, vector, occupation)."""
        n2 = 2 * grid.n
        blocks = {s.label: np.zeros((n2, n2)) for s in sectors}
        for lab, v, occ in orbitals:
            v = np.asarray(v)
            if np.iscomplexobj(v) and not np.iscomplexobj(blocks[lab]):
                blocks[lab] = blocks[lab].astype(complex)
            blocks[lab] = blocks[lab] + occ * np.outer(v, v.conj())
        return cls(grid, tuple(sectors), blocks)

    def sector(self, label: str) -> Sector:
        for s in self.sectors:
            if s.label == label:
                return s
        raise KeyError(label)

    @cached_property
    def _eigs(self) -> dict:
        return {lab: np.linalg.eigh(b) for lab, b in self.blocks.items()}

    @property
    def occupations(self) -> dict:
        return {lab: e[0] for lab, e in self._eigs.items()}

    def eigh(self, label: str):
        return self._eigs[label]

    @property
    def charge(self) -> float:
        return float(sum(s.degeneracy * np.real(np.trace(self.blocks[s.label])) for s in self.sectors))

    @property
    def trace_norm(self) -> float:
        return float(sum(s.degeneracy * np.sum(np.abs(self.occupations[s.label])) for s in self.sectors))

    def _check(self, other: "DensityMatrix"):
        if other.basis_id != self.basis_id or [s.label for s in other.sectors] != [s.label for s in self.sectors]:
            raise BasisMismatchError("density matrices live on different bases")

    def _new(self, blocks, check=True) -> "DensityMatrix":
        if check:
            return DensityMatrix(self.grid, self.sectors, blocks)
        return _unchecked(self.grid, self.sectors, blocks)

    def map(self, f) -> "DensityMatrix":
        return _unchecked(self.grid, self.sectors, {k: f(k, b) for k, b in self.blocks.items()})

    def __add__(self, other):
        self._check(other)
        return _unchecked(self.grid, self.sectors, {k: b + other.blocks[k] for k, b in self.blocks.items()})

    def __sub__(self, other):
        self._check(other)
        return _unchecked(self.grid, self.sectors, {k: b - other.blocks[k] for k, b in self.blocks.items()})

    def scale(self, c: float):
        return _unchecked(self.grid, self.sectors, {k: c * b for k, b in self.blocks.items()})

    def abs(self) -> "DensityMatrix":
        out = {}
        for k in self.blocks:
            w, v = self._eigs[k]
            out[k] = (v * np.abs(w)) @ v.conj().T
        return _unchecked(self.grid, self.sectors, out)

    def validated(self) -> "DensityMatrix":
        return DensityMatrix(self.grid, self.sectors, dict(self.blocks))

    def frobenius(self) -> float:
        return float(np.sqrt(sum(s.degeneracy * np.linalg.norm(self.blocks[s.label]) ** 2 for s in self.sectors)))

    def is_projection(self, tol: float = 1e-9) -> bool:
        return all(np.linalg.norm(b @ b - b) <= tol for b in self.blocks.values())


def _unchecked(grid, sectors, blocks) -> DensityMatrix:
    """Build without the occupation window check (for signed differences)."""
    obj = object.__new__(DensityMatrix)
    object.__setattr__(obj, "grid", grid)
    object.__setattr__(obj, "sectors", tuple(sectors))
    object.__setattr__(obj, "blocks", {k: np.asarray(b) for k, b in blocks.items()})
    return obj


# ---------------------------------------------------------------- angular algebra


def _two(j) -> int:
    t = 2 * Fraction(j).limit_denominator(2)
    if t.denominator != 1 or abs(Fraction(j) * 2 - t) > 0:
        raise ValidationError(f"{j!r} is not a half-integer")
    return int(t)


def wigner3j(j1, j2, j3, m1, m2, m3) -> float:
    """Wigner 3j symbol from the Racah sum formula (exact rational arithmetic)."""
    J1, J2, J3, M1, M2, M3 = (_two(x) for x in (j1, j2, j3, m1, m2, m3))
    if M1 + M2 + M3 != 0:
        return 0.0
    if any((a + b) % 2 for a, b in ((J1, M1), (J2, M2), (J3, M3))):
        return 0.0
    if any(abs(m) > j for j, m in ((J1, M1), (J2, M2), (J3, M3))):
        return 0.0
    if J3 > J1 + J2 or J3 < abs(J1 - J2) or (J1 + J2 + J3) % 2:
        return 0.0
    f = lambda x2: factorial(x2 // 2)  # noqa: E731  argument is twice an integer
    tri = Fraction(f(J1 + J2 - J3) * f(J1 - J2 + J3) * f(-J1 + J2 + J3), f(J1 + J2 + J3 + 2))
    pre = tri * f(J1 + M1) * f(J1 - M1) * f(J2 + M2) * f(J2 - M2) * f(J3 + M3) * f(J3 - M3)
    kmin = max(0, (J2 - J3 - M1) // 2, (J1 - J3 + M2) // 2)
    kmax = min((J1 + J2 - J3) // 2, (J1 - M1) // 2, (J2 + M2) // 2)
    s = Fraction(0)
    for k in range(kmin, kmax + 1):
        den = (
            factorial(k)
            * f(J3 - J2 + M1 + 2 * k)
            * f(J3 - J1 - M2 + 2 * k)
            * f(J1 + J2 - J3 - 2 * k)
            * f(J1 - M1 - 2 * k)
            * f(J2 + M2 - 2 * k)
        )
        s += Fraction((-1) ** k, den)
    sign = -1 if ((J1 - J2 - M3) // 2) % 2 else 1
    return sign * float(s) * float(np.sqrt(float(pre)))


def angular_factor(kappa_a: int, ma: float, kappa_b: int, mb: float, k: int) -> float:
    """sum_q |<kappa_a ma| C^k_q |kappa_b mb>|^2 for spinor spherical harmonics."""
    ca, cb = KappaChannel(kappa_a), KappaChannel(kappa_b)
    if (ca.l + cb.l + k) % 2:
        return 0.0
    ja, jb = ca.j, cb.j
    red = wigner3j(ja, jb, k, -0.5, 0.5, 0)
    if red == 0.0:
        return 0.0
    q = ma - mb
    if abs(q) > k:
        return 0.0
    return (2 * ja + 1) * (2 * jb + 1) * red**2 * wigner3j(ja, k, jb, -ma, q, mb) ** 2


@dataclass(frozen=True, eq=False)
class MultipoleTable:
    """Angular weights of the multipole kernels.

    ``coefficients[(kappa_a, kappa_b, k)]`` is the closed-shell factor
    summed over all substates of both channels; ``sector_weights[k]`` is
    the matrix A_k(s, t) summed over the substates carried by sectors s
    and t.
    """

    sectors: tuple[Sector, ...]
    k_max: int
    coefficients: dict = field(repr=False)
    sector_weights: dict = field(repr=False)

    @classmethod
    def build(cls, sectors) -> "MultipoleTable":
        sectors = tuple(sectors)
        kappas = sorted({s.kappa for s in sectors})
        k_max = int(round(2 * max(KappaChannel(k).j for k in kappas)))
        coeff = {}
        for ka in kappas:
            for kb in kappas:
                ca, cb = KappaChannel(ka), KappaChannel(kb)
                for k in range(k_max + 1):
                    coeff[(ka, kb, k)] = sum(
                        angular_factor(ka, ma, kb, mb, k)
                        for ma in Sector(ka, None, ca.degeneracy).magnetic
                        for mb in Sector(kb, None, cb.degeneracy).magnetic
                    )
        weights = {}
        for k in range(k_max + 1):
            A = np.array(
                [[sum(angular_factor(s.kappa, ma, t.kappa, mb, k) for ma in s.magnetic for mb in t.magnetic)
                  for t in sectors] for s in sectors]
            )
            if np.any(A):
                weights[k] = A
        return cls(sectors, k_max, coeff, weights)

    @property
    def ks(self) -> tuple[int, ...]:
        return tuple(sorted(self.sector_weights))


# ---------------------------------------------------------------- model container


class AtomModel:
    """Grid, channel operators, kernels and angular table for one atom."""

    def __init__(self, grid: RadialGrid, params: AtomParams, kappas=SUPPORTED_KAPPAS):
        self.grid = grid
        self.params = params
        self.kappas = tuple(kappas)
        self.sectors = sectors_for(self.kappas)
        self.table = MultipoleTable.build(self.sectors)
        self._cache: dict = {}

    @property
    def basis_id(self) -> str:
        return self.grid.hash

    def _get(self, key, make):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]

    def free(self, kappa: int) -> RadialDiracOperator:
        return self._get(("D0", kappa), lambda: build_free_dirac(self.grid, KappaChannel(kappa), self.params.m))

    def coulomb(self, kappa: int) -> RadialDiracOperator:
        return self._get(("DZ", kappa), lambda: build_coulomb_dirac(self.grid, KappaChannel(kappa), self.params))

    def abs_free(self, kappa: int) -> HermitianOperator:
        return self._get(("|D0|", kappa), lambda: spectral_function(self.free(kappa).H, "abs"))

    def abs_p(self, kappa: int) -> HermitianOperator:
        return self._get(("|p|", kappa), lambda: abs_p(self.free(kappa)))

    def laplacian(self, kappa: int) -> HermitianOperator:
        return self._get(("-lap", kappa), lambda: laplacian(self.free(kappa)))

    def kernel(self, k: int) -> np.ndarray:
        def make():
            s = self.grid.sites
            lo = np.minimum.outer(s, s)
            hi = np.maximum.outer(s, s)
            g = (lo / hi) ** k / hi
            g.setflags(write=False)
            return g
        return self._get(("G", k), make)

    def site_index(self, kappa: int) -> np.ndarray:
        return self.grid.channel_sites(kappa)

    def site_radii(self, kappa: int) -> np.ndarray:
        return self.grid.sites[self.site_index(kappa)]

    def embed(self, sector: Sector, block: np.ndarray) -> np.ndarray:
        N = self.grid.sites.size
        idx = self.site_index(sector.kappa)
        out = np.zeros((N, N), dtype=block.dtype)
        out[np.ix_(idx, idx)] = block
        return out

    def check(self, gamma: DensityMatrix):
        if gamma.basis_id != self.basis_id:
            raise BasisMismatchError(f"density basis {gamma.basis_id[:16]} != model basis {self.basis_id[:16]}")
        if [s.label for s in gamma.sectors] != [s.label for s in self.sectors]:
            raise BasisMismatchError("sector layout mismatch")

    def zeros(self) -> DensityMatrix:
        return DensityMatrix.zeros(self.grid, self.sectors)


# ---------------------------------------------------------------- densities and potentials


def _fine_weights(grid: RadialGrid) -> np.ndarray:
    """Quadrature weights on the interleaved site grid (spacing dt / 2)."""
    s = grid.sites
    w = s * grid.dt / 2
    o = grid.site_order
    w = w.copy()
    w[o[0]] *= 0.5
    w[o[-1]] *= 0.5
    w[o[0]] += s[o[0]]
    return w


@dataclass(frozen=True, eq=False)
class RadialDensity:
    """Angle-integrated charge carried by each interaction site.

    ``charges`` are site charges (sum = total charge); ``values`` is the
    charge per unit radius, charges divided by the site quadrature weights.
    """

    grid: RadialGrid
    charges: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.charges / _fine_weights(self.grid)

    @property
    def radii(self) -> np.ndarray:
        return self.grid.sites

    @property
    def total_charge(self) -> float:
        return float(np.sum(self.charges))

    @classmethod
    def from_function(cls, grid: RadialGrid, f) -> "RadialDensity":
        s = grid.sites
        return cls(grid, np.asarray(f(s), dtype=float) * _fine_weights(grid))

    @classmethod
    def from_shells(cls, grid: RadialGrid, shells) -> "RadialDensity":
        """Point shells (radius, charge) placed on the nearest site."""
        c = np.zeros(grid.sites.size)
        for r, q in shells:
            c[np.argmin(np.abs(np.log(grid.sites / r)))] += q
        return cls(grid, c)


def density(gamma: DensityMatrix) -> RadialDensity:
    grid = gamma.grid
    c = np.zeros(grid.sites.size)
    for s in gamma.sectors:
        idx = grid.channel_sites(s.kappa)
        c[idx] += s.degeneracy * np.real(np.diag(gamma.blocks[s.label]))
    return RadialDensity(grid, c)


def direct_potential(rho: RadialDensity) -> np.ndarray:
    """phi(r_x) = sum_y c_y / max(r_x, r_y), by cumulative sums over sorted sites."""
    s = rho.grid.sites
    o = rho.grid.site_order
    c = rho.charges[o]
    r = s[o]
    inner = np.cumsum(c)
    outer = np.cumsum((c / r)[::-1])[::-1]
    outer = np.append(outer[1:], 0.0)
    phi = np.empty_like(r)
    phi[o] = inner / r + outer
    return phi


def exchange_matrix(delta: DensityMatrix, model: AtomModel, sector: Sector | str) -> np.ndarray:
    """Exchange block X_s of the sector (2n x 2n, channel coordinates).

    X_s = sum_t sum_k (A_k(s, t) / g_s) (delta_t o G_k) restricted to the
    sites of s; couplings between different sectors are not kept.
    """
    model.check(delta)
    s = delta.sector(sector) if isinstance(sector, str) else sector
    si = model.sectors.index(s)
    idx = model.site_index(s.kappa)
    out = None
    for k, A in model.table.sector_weights.items():
        acc = None
        for ti, t in enumerate(model.sectors):
            a = A[si, ti]
            if a == 0.0:
                continue
            blk = delta.blocks[t.label]
            if not np.any(blk):
                continue
            e = model.embed(t, blk)[np.ix_(idx, idx)]
            acc = a * e if acc is None else acc + a * e
        if acc is None:
            continue
        term = acc * model.kernel(k)[np.ix_(idx, idx)]
        out = term if out is None else out + term
    n2 = idx.size
    if out is None:
        return np.zeros((n2, n2))
    return out / s.degeneracy


def coulomb_form(rho: RadialDensity, sigma: RadialDensity) -> float:
    if rho.grid.hash != sigma.grid.hash:
        raise BasisMismatchError("densities on different grids")
    return 0.5 * float(np.dot(rho.charges, direct_potential(sigma)))


def exchange_form(gamma: DensityMatrix, gamma2: DensityMatrix, model: AtomModel) -> float:
    """E[g, g'] = 1/2 sum_{s,t,k} A_k(s,t) sum_{xy} conj(g_s) g'_t G_k."""
    model.check(gamma)
    model.check(gamma2)
    emb1 = {s.label: model.embed(s, gamma.blocks[s.label]) for s in model.sectors if np.any(gamma.blocks[s.label])}
    emb2 = {s.label: model.embed(s, gamma2.blocks[s.label]) for s in model.sectors if np.any(gamma2.blocks[s.label])}
    total = 0.0 + 0.0j
    for k, A in model.table.sector_weights.items():
        G = model.kernel(k)
        for si, s in enumerate(model.sectors):
            if s.label not in emb1:
                continue
            acc = None
            for ti, t in enumerate(model.sectors):
                if t.label not in emb2 or A[si, ti] == 0.0:
                    continue
                acc = A[si, ti] * emb2[t.label] if acc is None else acc + A[si, ti] * emb2[t.label]
            if acc is not None:
                total += np.sum(np.conj(emb1[s.label]) * acc * G)
    total *= 0.5
    return float(total.real) if abs(total.imag) <= 1e-14 * max(1.0, abs(total)) else complex(total)


def q_form(gamma: DensityMatrix, gamma2: DensityMatrix, model: AtomModel) -> float:
    return coulomb_form(density(gamma), density(gamma2)) - exchange_form(gamma, gamma2, model)


def _one_body(gamma: DensityMatrix, model: AtomModel, op: str = "coulomb") -> float:
    tot = 0.0
    for s in model.sectors:
        b = gamma.blocks[s.label]
        if not np.any(b):
            continue
        H = (model.coulomb if op == "coulomb" else model.free)(s.kappa).H.entries
        tot += s.degeneracy * float(np.real(np.sum(H * b.T)))
    return tot


def energy(gamma: DensityMatrix, model: AtomModel) -> float:
    """tr(D_Z gamma) + alpha Q[gamma, gamma]."""
    model.check(gamma)
    return _one_body(gamma, model) + model.params.alpha * float(np.real(q_form(gamma, gamma, model)))


def energy_mu(gamma: DensityMatrix, model: AtomModel, mu: float) -> float:
    return energy(gamma, model) - mu * gamma.charge


# ---------------------------------------------------------------- mean-field operator


@dataclass(frozen=True, eq=False)
class MeanField:
    phi: np.ndarray
    exchange: dict
    W: dict
    source_f_norm: float
    source_trace_norm: float


@dataclass(frozen=True, eq=False)
class MeanFieldOperator:
    """D^(delta) per sector with its spectral data and projectors."""

    field: MeanField
    D: dict
    spectra: dict
    plus: dict
    minus: dict

    def positive_vectors(self, label: str) -> np.ndarray:
        sd = self.spectra[label]
        return sd.eigenvectors[:, sd.eigenvalues > 0]


def f_norm_density(delta: DensityMatrix, model: AtomModel) -> float:
    tot = 0.0
    ad = delta.abs()
    for s in model.sectors:
        b = ad.blocks[s.label]
        if np.any(b):
            tot += s.degeneracy * float(np.real(np.sum(model.abs_free(s.kappa).entries * b.T)))
    return tot


def mean_field(delta: DensityMatrix, model: AtomModel) -> MeanField:
    model.check(delta)
    phi = direct_potential(density(delta))
    X, W = {}, {}
    for s in model.sectors:
        idx = model.site_index(s.kappa)
        x = exchange_matrix(delta, model, s)
        X[s.label] = x
        W[s.label] = HermitianOperator.symmetrized(np.diag(phi[idx]) - x, channel_basis_id(model.grid, s.kappa))
    return MeanField(phi, X, W, f_norm_density(delta, model), delta.trace_norm)


def build_mean_field_operator(delta: DensityMatrix, model: AtomModel, field_: MeanField | None = None) -> MeanFieldOperator:
    """D^(delta) = D_Z + alpha W^(delta) per sector, with Lambda_+ and Lambda_-."""
    mf = field_ or mean_field(delta, model)
    a = model.params.alpha
    D, spectra, plus, minus = {}, {}, {}, {}
    for s in model.sectors:
        DZ = model.coulomb(s.kappa).H
        Ds = DZ if not np.any(mf.W[s.label].entries) else HermitianOperator(
            DZ.entries + a * mf.W[s.label].entries, DZ.basis_id)
        sd = eig(Ds)
        P = spectral_function(Ds, Indicator(0.0, np.inf), sd)
        M = spectral_function(Ds, Indicator(-np.inf, 0.0), sd)
        m = model.params.m
        stray = sd.eigenvalues[(sd.eigenvalues > -m) & (sd.eigenvalues < 0)]
        if stray.size:
            log.debug("sector %s: %d eigenvalues in (-m, 0)", s.label, stray.size)
        D[s.label], spectra[s.label], plus[s.label], minus[s.label] = Ds, sd, P, M
    return MeanFieldOperator(mf, D, spectra, plus, minus)


def c_constant(delta: DensityMatrix, model: AtomModel, op: MeanFieldOperator | None = None):
    """(c_discrete, c_lower) with c_lower = d - 4 alpha |delta|_1."""
    op = op or build_mean_field_operator(delta, model)
    c = np.inf
    done = set()
    for s in model.sectors:
        key = (s.kappa, s.label) if np.any(op.field.W[s.label].entries) else (s.kappa, None)
        if key in done:
            continue
        done.add(key)
        absD = HermitianOperator.symmetrized(op.spectra[s.label].apply(np.abs), op.D[s.label].basis_id)
        c = min(c, order_constant(absD, model.abs_free(s.kappa)))
    lower = compute_d(model.params.alpha_z) - 4 * model.params.alpha * delta.trace_norm
    return float(c), float(lower)


def mean_field_matrices(delta: DensityMatrix, model: AtomModel, field_: MeanField | None = None) -> dict:
    """D^(delta) per sector as plain arrays (no spectral data)."""
    mf = field_ or mean_field(delta, model)
    a = model.params.alpha
    return {s.label: model.coulomb(s.kappa).H.entries + a * mf.W[s.label].entries for s in model.sectors}
