"""Discrete measures on the overlap half-line and their transport toolkit.

Probability measures are stored as sorted atoms with positive weights and
carry the quantile-path representation (cut points zeta_k, values q_k).
Signed measures keep arbitrary real weights and support the
Kantorovich-Rubinstein norm, computed both by a small LP over Lipschitz
test values and by the 1-d closed form.  Matrix-atom measures cover the
positive-semidefinite checks needed for dimension D > 1.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "DiscreteMeasure",
    "SignedAtoms",
    "MatrixAtomsMeasure",
    "w1_distance",
    "kr_norm",
    "kr_norm_lp",
    "measure_leq",
    "is_monotone_support",
]

MERGE_TOL = 1e-12


def _merge_sorted(atoms: np.ndarray, weights: np.ndarray, tol: float = MERGE_TOL):
    """Sort atoms, merge near-duplicates (weights summed), drop zero weights."""
    order = np.argsort(atoms, kind="stable")
    atoms, weights = atoms[order], weights[order]
    out_a: list[float] = []
    out_w: list[float] = []
    for a, w in zip(atoms, weights):
        if out_a and a - out_a[-1] <= tol:
            out_w[-1] += w
        else:
            out_a.append(float(a))
            out_w.append(float(w))
    a = np.array(out_a)
    w = np.array(out_w)
    keep = w != 0.0
    return a[keep], w[keep]


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure on R_+ in canonical form."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.size == 0 or atoms.size != weights.size:
            raise ValueError("atoms and weights must be non-empty and aligned")
        if np.any(atoms < -MERGE_TOL):
            raise ValueError("atoms must lie on the nonnegative half-line")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        total = weights.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        atoms = np.maximum(atoms, 0.0)
        atoms, weights = _merge_sorted(atoms, weights / total)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        self.atoms.setflags(write=False)
        self.weights.setflags(write=False)

    @staticmethod
    def dirac(x: float) -> "DiscreteMeasure":
        return DiscreteMeasure(np.array([x]), np.array([1.0]))

    @staticmethod
    def mixture(parts: Sequence["DiscreteMeasure"], coeffs: Sequence[float]) -> "DiscreteMeasure":
        coeffs = np.asarray(coeffs, dtype=float)
        if np.any(coeffs < 0) or abs(coeffs.sum() - 1.0) > 1e-12:
            raise ValueError("mixture coefficients must be a probability vector")
        atoms = np.concatenate([m.atoms for m in parts])
        weights = np.concatenate([c * m.weights for c, m in zip(coeffs, parts)])
        keep = weights > 0
        return DiscreteMeasure(atoms[keep], weights[keep])

    @property
    def cut_points(self) -> np.ndarray:
        """zeta_0 = 0 < ... < zeta_{K+1} = 1 with exact endpoints."""
        z = np.concatenate([[0.0], np.cumsum(self.weights)])
        z[-1] = 1.0
        return z

    def quantile(self, u) -> np.ndarray:
        """Right-continuous quantile path q_mu evaluated at u in [0, 1)."""
        z = self.cut_points
        idx = np.clip(np.searchsorted(z, np.asarray(u, dtype=float), side="right") - 1, 0, len(self.atoms) - 1)
        return self.atoms[idx]

    def mean(self) -> float:
        return float(np.dot(self.atoms, self.weights))

    def integrate(self, fn) -> float:
        """Integral of a callable (vectorized over atoms) against the measure."""
        return float(np.dot(np.asarray(fn(self.atoms), dtype=float), self.weights))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.atoms, size=n, p=self.weights)

    def key(self) -> bytes:
        return self.atoms.tobytes() + b"|" + self.weights.tobytes()

    def to_json(self) -> dict:
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}

    @staticmethod
    def from_json(obj: dict) -> "DiscreteMeasure":
        return DiscreteMeasure(np.asarray(obj["atoms"], dtype=float), np.asarray(obj["weights"], dtype=float))

    def quantile_csv(self) -> str:
        """Quantile path as CSV with columns u, q (breakpoints of the step path)."""
        buf = io.StringIO()
        buf.write("u,q\n")
        z = self.cut_points
        for k, a in enumerate(self.atoms):
            buf.write(f"{z[k]!r},{a!r}\n")
        buf.write(f"1.0,{self.atoms[-1]!r}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class SignedAtoms:
    """Finitely supported signed measure on R_+ with reference point 0."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.size != weights.size:
            raise ValueError("atoms and weights must be aligned")
        if atoms.size and np.any(atoms < -MERGE_TOL):
            raise ValueError("atoms must lie on the nonnegative half-line")
        if atoms.size:
            atoms, weights = _merge_sorted(np.maximum(atoms, 0.0), weights)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @staticmethod
    def difference(mu: DiscreteMeasure, nu: DiscreteMeasure) -> "SignedAtoms":
        return SignedAtoms(
            np.concatenate([mu.atoms, nu.atoms]),
            np.concatenate([mu.weights, -nu.weights]),
        )

    def scaled(self, c: float) -> "SignedAtoms":
        return SignedAtoms(self.atoms, c * self.weights)

    def __add__(self, other: "SignedAtoms") -> "SignedAtoms":
        return SignedAtoms(
            np.concatenate([self.atoms, other.atoms]),
            np.concatenate([self.weights, other.weights]),
        )

    def total_mass(self) -> float:
        return float(self.weights.sum()) if self.weights.size else 0.0


@dataclass(frozen=True)
class MatrixAtomsMeasure:
    """Finitely supported probability measure on PSD D x D matrices."""

    atoms: tuple
    weights: np.ndarray
    psd_tol: float = 1e-10

    def __post_init__(self):
        mats = []
        for a in self.atoms:
            m = np.asarray(a, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError("matrix atoms must be square")
            if np.max(np.abs(m - m.T)) > 1e-10:
                raise ValueError("matrix atoms must be symmetric")
            if np.linalg.eigvalsh(m).min() < -self.psd_tol:
                raise ValueError("matrix atoms must be PSD within tolerance")
            m = 0.5 * (m + m.T)
            m.setflags(write=False)
            mats.append(m)
        weights = np.asarray(self.weights, dtype=float).ravel()
        if len(mats) != weights.size or not mats:
            raise ValueError("atoms and weights must be non-empty and aligned")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        order = sorted(range(len(mats)), key=lambda i: (np.trace(mats[i]), mats[i].tobytes()))
        object.__setattr__(self, "atoms", tuple(mats[i] for i in order))
        object.__setattr__(self, "weights", weights[order] / weights.sum())

    @property
    def dim(self) -> int:
        return self.atoms[0].shape[0]

    def integrate(self, fn) -> float:
        return float(sum(w * float(fn(a)) for a, w in zip(self.atoms, self.weights)))


# ---------------------------------------------------------------------------
# distances, norms, order
# ---------------------------------------------------------------------------


def w1_distance(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Exact 1-d Wasserstein-1 distance: integral of |q_mu - q_nu| over the
    merged cut-point grid."""
    cuts = np.unique(np.concatenate([mu.cut_points, nu.cut_points]))
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    gaps = np.diff(cuts)
    return float(np.sum(gaps * np.abs(mu.quantile(mids) - nu.quantile(mids))))


def kr_norm(nu: SignedAtoms) -> float:
    """Kantorovich-Rubinstein norm of a signed measure on R_+ (reference 0):
    |nu(R)| + integral over x >= 0 of |nu((x, inf))|.

    nu((x, inf)) is constant between consecutive nodes (0 and the atoms), so
    the tail integral is a finite sum.
    """
    if nu.atoms.size == 0:
        return 0.0
    nodes = np.concatenate([[0.0], nu.atoms]) if nu.atoms[0] > 0 else nu.atoms
    total = abs(nu.total_mass())
    for lo, hi in zip(nodes[:-1], nodes[1:]):
        mass_above = nu.weights[nu.atoms > lo].sum()
        total += abs(mass_above) * (hi - lo)
    return float(total)


def kr_norm_lp(nu: SignedAtoms) -> float:
    """KR norm by LP over test values chi(node) with max(|chi(0)|, Lip) <= 1.

    On the line, adjacent-pair Lipschitz constraints are sufficient.  The LP
    is always feasible (chi = 0); numerical solver failure is reported.
    """
    if nu.atoms.size == 0:
        return 0.0
    nodes = np.concatenate([[0.0], nu.atoms]) if nu.atoms[0] > 0 else nu.atoms.copy()
    weights = np.zeros(len(nodes))
    offset = len(nodes) - nu.atoms.size
    weights[offset:] = nu.weights
    n = len(nodes)
    # maximize w . c  subject to |c_{i+1} - c_i| <= dx_i, |c_0| <= 1
    gaps = np.diff(nodes)
    a_ub = []
    b_ub = []
    for i, dx in enumerate(gaps):
        row = np.zeros(n)
        row[i + 1], row[i] = 1.0, -1.0
        a_ub.append(row.copy())
        b_ub.append(dx)
        a_ub.append(-row)
        b_ub.append(dx)
    bounds = [(-1.0, 1.0)] + [(None, None)] * (n - 1)
    res = linprog(-weights, A_ub=np.array(a_ub) if a_ub else None,
                  b_ub=np.array(b_ub) if b_ub else None, bounds=bounds, method="highs")
    if not res.success:  # pragma: no cover - feasible LP, defensive only
        raise RuntimeError(f"KR norm LP failed: {res.message}")
    return float(-res.fun)


def kr_norm_matrix_lp(atoms: Sequence[np.ndarray], weights: Sequence[float]) -> float:
    """All-pairs LP variant of the KR norm for matrix atoms (reference 0)."""
    mats = [np.zeros_like(np.asarray(atoms[0]))] + [np.asarray(a, dtype=float) for a in atoms]
    w = np.zeros(len(mats))
    w[1:] = np.asarray(weights, dtype=float)
    n = len(mats)
    a_ub, b_ub = [], []
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.linalg.norm(mats[i] - mats[j]))
            row = np.zeros(n)
            row[i], row[j] = 1.0, -1.0
            a_ub.append(row.copy()); b_ub.append(d)
            a_ub.append(-row); b_ub.append(d)
    bounds = [(-1.0, 1.0)] + [(None, None)] * (n - 1)
    res = linprog(-w, A_ub=np.array(a_ub), b_ub=np.array(b_ub), bounds=bounds, method="highs")
    if not res.success:  # pragma: no cover
        raise RuntimeError(f"matrix KR LP failed: {res.message}")
    return float(-res.fun)


def measure_leq(mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = 1e-12) -> bool:
    """Cone order mu <= nu: tail integrals of q_nu - q_mu are nonnegative.

    The tail integral is piecewise affine in the cut variable, so checking it
    at the merged breakpoints is exact for step paths.
    """
    cuts = np.unique(np.concatenate([mu.cut_points, nu.cut_points]))
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    gaps = np.diff(cuts)
    diff = (nu.quantile(mids) - mu.quantile(mids)) * gaps
    # tail integral at cuts[i] is sum of diff[i:]
    tails = np.concatenate([np.cumsum(diff[::-1])[::-1], [0.0]])
    return bool(np.all(tails >= -tol))


def is_monotone_support(mu: MatrixAtomsMeasure) -> bool:
    """True iff every pair of atoms is comparable in the PSD order."""
    tol = mu.psd_tol
    for i in range(len(mu.atoms)):
        for j in range(i + 1, len(mu.atoms)):
            eig = np.linalg.eigvalsh(mu.atoms[i] - mu.atoms[j])
            if eig.min() < -tol and eig.max() > tol:
                return False
    return True
