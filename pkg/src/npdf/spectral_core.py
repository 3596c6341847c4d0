"""Finite-dimensional self-adjoint operator calculus.

Eigendecomposition with reproducible phases, functional calculus on the
spectrum, spectral projectors, Schatten and F norms, operator-order
constants, and the second-order projector perturbation used for
stationarity arguments on projectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg as sl

__all__ = [
    "ValidationError",
    "BasisMismatchError",
    "SpectralCutError",
    "DomainError",
    "HermitianOperator",
    "SpectralDecomposition",
    "Projector",
    "Indicator",
    "Shift",
    "eig",
    "spectral_function",
    "schatten_norm",
    "f_norm",
    "order_constant",
    "nenciu_perturb",
    "commutator_norm",
]

HERMITIAN_RTOL = 1e-13
PROJECTOR_TOL = 1e-11
PHASE_THRESHOLD = 1e-8
CUT_TOL = 1e-10
CONTOUR_POINTS = 256


class ValidationError(ValueError):
    pass


class BasisMismatchError(ValidationError):
    pass


class SpectralCutError(ValueError):
    pass


class DomainError(ValueError):
    pass


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    if np.iscomplexobj(a) and not np.any(a.imag):
        a = a.real.copy()
    if not np.iscomplexobj(a):
        a = a.astype(np.float64, copy=False)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """Dense self-adjoint matrix tagged with the basis it is written in.

    Real symmetric input is kept as float64; complex Hermitian input as
    complex128.
    """

    entries: np.ndarray
    basis_id: str = "anon"

    def __post_init__(self):
        a = np.asarray(self.entries)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise ValidationError(f"expected a nonempty square matrix, got shape {a.shape}")
        a = _freeze(a)
        if not np.all(np.isfinite(a)):
            raise ValidationError("operator has non-finite entries")
        diff = a - a.conj().T
        nrm = np.linalg.norm(a)
        dnrm = np.linalg.norm(diff)
        if dnrm > HERMITIAN_RTOL * max(nrm, np.finfo(float).tiny):
            i, j = np.unravel_index(np.argmax(np.abs(diff)), diff.shape)
            raise ValidationError(
                f"not Hermitian: entries ({i},{j})={a[i, j]!r} and ({j},{i})={a[j, i]!r} "
                f"(relative asymmetry {dnrm / nrm:.3e})"
            )
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def symmetrized(cls, a: np.ndarray, basis_id: str = "anon") -> "HermitianOperator":
        a = np.asarray(a)
        return cls(0.5 * (a + a.conj().T), basis_id)

    def _check(self, other: "HermitianOperator"):
        if self.basis_id != other.basis_id:
            raise BasisMismatchError(f"basis mismatch: {self.basis_id!r} vs {other.basis_id!r}")
        if self.dim != other.dim:
            raise BasisMismatchError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other: "HermitianOperator") -> "HermitianOperator":
        self._check(other)
        return HermitianOperator(self.entries + other.entries, self.basis_id)

    def __sub__(self, other: "HermitianOperator") -> "HermitianOperator":
        self._check(other)
        return HermitianOperator(self.entries - other.entries, self.basis_id)

    def scale(self, c: float) -> "HermitianOperator":
        return HermitianOperator(float(c) * self.entries, self.basis_id)

    def conjugate_by(self, v: np.ndarray, basis_id: str | None = None) -> "HermitianOperator":
        """Return V* H V (compression onto the columns of v)."""
        m = v.conj().T @ self.entries @ v
        return HermitianOperator.symmetrized(m, basis_id or self.basis_id + ":compressed")

    def norm(self, ord="fro") -> float:
        if ord == "fro":
            return float(np.linalg.norm(self.entries))
        if ord in (np.inf, "inf", 2):
            return float(np.max(np.abs(np.linalg.eigvalsh(self.entries))))
        raise DomainError(f"unsupported norm {ord!r}")


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    basis_id: str = "anon"

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T

    def apply(self, f) -> np.ndarray:
        v = self.eigenvectors
        return (v * f(self.eigenvalues)) @ v.conj().T


@dataclass(frozen=True, eq=False)
class Projector:
    operator: HermitianOperator
    rank: int

    def __post_init__(self):
        p = self.operator.entries
        err = np.linalg.norm(p @ p - p)
        if err > PROJECTOR_TOL * max(1.0, np.sqrt(max(self.rank, 1))):
            raise ValidationError(f"projector not idempotent: |P^2-P|_F={err:.3e}")
        tr = float(np.real(np.trace(p)))
        if abs(tr - self.rank) > 1e-8:
            raise ValidationError(f"rank {self.rank} inconsistent with trace {tr:.12g}")

    @classmethod
    def from_vectors(cls, v: np.ndarray, basis_id: str) -> "Projector":
        p = v @ v.conj().T
        return cls(HermitianOperator.symmetrized(p, basis_id), int(v.shape[1]))

    @property
    def entries(self) -> np.ndarray:
        return self.operator.entries

    @property
    def basis_id(self) -> str:
        return self.operator.basis_id

    def complement(self) -> "Projector":
        q = np.eye(self.operator.dim) - self.operator.entries
        return Projector(HermitianOperator.symmetrized(q, self.basis_id), self.operator.dim - self.rank)


@dataclass(frozen=True)
class Indicator:
    """Characteristic function of the interval (lo, hi); infinite ends allowed."""

    lo: float = 0.0
    hi: float = np.inf


@dataclass(frozen=True)
class Shift:
    c: float


FunctionTag = Union[str, Indicator, Shift]


def _fix_phases(v: np.ndarray) -> np.ndarray:
    v = v.copy()
    for k in range(v.shape[1]):
        col = v[:, k]
        idx = np.flatnonzero(np.abs(col) > PHASE_THRESHOLD)
        if idx.size == 0:
            continue
        c = col[idx[0]]
        v[:, k] = col * (np.conj(c) / abs(c))
    return v


def eig(H: HermitianOperator) -> SpectralDecomposition:
    """Ascending eigenvalues and phase-normalized orthonormal eigenvectors."""
    if not isinstance(H, HermitianOperator):
        H = HermitianOperator(np.asarray(H))
    w, v = np.linalg.eigh(H.entries)
    return SpectralDecomposition(w, _fix_phases(v), H.basis_id)


def _check_cut(w: np.ndarray, edges):
    for e in edges:
        if np.isfinite(e):
            hit = w[np.abs(w - e) <= CUT_TOL]
            if hit.size:
                raise SpectralCutError(f"ambiguous spectral cut at {e}: eigenvalue {hit[0]!r}")


def spectral_function(H: HermitianOperator, f: FunctionTag, decomposition: SpectralDecomposition | None = None):
    """Apply a scalar function to H through its eigendecomposition.

    ``f`` is one of ``"abs"``, ``"sqrt_abs"``, ``Indicator(lo, hi)`` or
    ``Shift(c)``. Indicators return a Projector.
    """
    sd = decomposition if decomposition is not None else eig(H)
    w, v = sd.eigenvalues, sd.eigenvectors
    if isinstance(f, Indicator):
        _check_cut(w, (f.lo, f.hi))
        sel = (w > f.lo) & (w < f.hi)
        return Projector.from_vectors(v[:, sel], H.basis_id)
    if f == "abs":
        g = np.abs(w)
    elif f == "sqrt_abs":
        g = np.sqrt(np.abs(w))
    elif isinstance(f, Shift):
        g = w + f.c
    else:
        raise DomainError(f"unknown function tag {f!r}")
    return HermitianOperator.symmetrized((v * g) @ v.conj().T, H.basis_id)


def schatten_norm(A, p: float) -> float:
    if p < 1:
        raise DomainError(f"Schatten index must be >= 1, got {p}")
    a = A.entries if isinstance(A, HermitianOperator) else np.asarray(A)
    if np.array_equal(a, a.conj().T):
        s = np.abs(np.linalg.eigvalsh(a))
    else:
        s = np.linalg.svd(a, compute_uv=False)
    if np.isinf(p):
        return float(s.max(initial=0.0))
    return float(np.sum(s**p) ** (1.0 / p))


def _sqrt_psd(sd: SpectralDecomposition) -> np.ndarray:
    return sd.apply(lambda w: np.sqrt(np.clip(w, 0.0, None)))


def f_norm(delta: HermitianOperator, absD0: HermitianOperator) -> float:
    """tr(|D0|^(1/2) |delta| |D0|^(1/2))."""
    delta._check(absD0)
    sd0 = eig(absD0)
    if sd0.eigenvalues[0] <= 0:
        raise ValidationError("|D0| must be positive definite")
    s = _sqrt_psd(sd0)
    absd = eig(delta).apply(np.abs)
    return float(np.real(np.trace(s @ absd @ s)))


def order_constant(A: HermitianOperator, B: HermitianOperator) -> float:
    """Largest c with A >= c B, i.e. the smallest eigenvalue of B^(-1/2) A B^(-1/2)."""
    A._check(B)
    wb = np.linalg.eigvalsh(B.entries)
    if wb[0] <= 1e-12 * np.max(np.abs(wb)):
        raise ValidationError(f"B is not positive definite (min eigenvalue {wb[0]:.3e})")
    c = sl.eigh(A.entries, B.entries, eigvals_only=True, subset_by_index=[0, 0])
    return float(c[0])


def commutator_norm(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a @ b - b @ a))


def _contour_weights(h: np.ndarray, npts: int = CONTOUR_POINTS):
    """Scalar contour integrals (1/2 pi i) oint c_i(z) c_j(z) / (z - h) dz.

    c_1 = 1/(z-1), c_0 = 1/z, on the circle |z-1| = 1/2, trapezoid rule.
    Returns a dict keyed by (i, j).
    """
    theta = 2 * np.pi * np.arange(npts) / npts
    e = 0.5 * np.exp(1j * theta)
    z = 1.0 + e
    # dz/(2 pi i) = e dtheta/(2 pi) -> weights e/npts
    wz = e / npts
    c = {1: 1.0 / (z - 1.0), 0: 1.0 / z}
    res_ = 1.0 / (z[None, :] - h[:, None])
    out = {}
    for i in (0, 1):
        for j in (0, 1):
            out[(i, j)] = res_ @ (wz * c[i] * c[j])
    return out


def nenciu_perturb(P0: Projector, A, eps: float):
    """Second-order deformation of a projector.

    With a = P0 A P0' + P0' A* P0 (P0' = 1 - P0), returns the spectral
    projector P_eps of P0 + eps*a onto (3/4, 5/4) and the remainder B_eps
    defined by P_eps = P0 + eps*a + eps^2 B_eps. B_eps is evaluated from
    the resolvent contour integral on |z-1| = 1/2 for every eps,
    including eps = 0.
    """
    a_in = A.entries if isinstance(A, HermitianOperator) else np.asarray(A)
    p0 = P0.entries
    n = p0.shape[0]
    if a_in.shape != (n, n):
        raise BasisMismatchError(f"shape mismatch {a_in.shape} vs {(n, n)}")
    nA = float(np.linalg.norm(a_in, 2)) if a_in.size else 0.0
    if 4 * abs(eps) * nA >= 1:
        raise DomainError(f"need 4|eps||A| < 1, got {4 * abs(eps) * nA:.4g}")
    q0 = np.eye(n) - p0
    a = p0 @ a_in @ q0 + q0 @ a_in.conj().T @ p0
    a = 0.5 * (a + a.conj().T)
    H = HermitianOperator.symmetrized(p0 + eps * a, P0.basis_id)
    sd = eig(H)
    _check_cut(sd.eigenvalues, (0.75, 1.25))
    P = spectral_function(H, Indicator(0.75, 1.25), sd)
    if P.rank != P0.rank:
        raise ValidationError(f"rank changed from {P0.rank} to {P.rank}")
    U = sd.eigenvectors
    X = a @ U
    Y = U.conj().T @ a
    proj = {1: p0, 0: q0}
    W = _contour_weights(sd.eigenvalues)
    B = np.zeros((n, n), dtype=np.result_type(a, U, complex))
    for (i, j), f in W.items():
        B += (proj[i] @ X * f) @ (Y @ proj[j])
    if not np.iscomplexobj(a) and not np.iscomplexobj(U):
        B = B.real
    return P, HermitianOperator.symmetrized(B, P0.basis_id)
