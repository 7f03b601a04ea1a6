"""Covariance functions of mixed p-spin models and their convex-analysis toolkit.

A model is described by the power series xi(r) = sum_p a_p r^p with a_p >= 0
(convex on the positive half-line) together with the single-spin reference
distribution.  This module houses xi, its gradient, the scaled conjugate
t*xi*(y/t), the ball-restricted conjugate, the Legendre-gap functional
theta(x) = x*xi'(x) - xi(x), and the quadratic perturbation xi_alpha.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DivergentConjugate",
    "SpinDistribution",
    "MixtureModel",
    "sk_model",
]


class DivergentConjugate(ValueError):
    """The conjugate supremum is +infinity for the requested argument."""


@dataclass(frozen=True)
class SpinDistribution:
    """Compactly supported single-spin reference distribution (D = 1 atoms).

    `kind` is "ising" for the symmetric two-point law on {-1, +1} and
    "atoms" for a general finite list of (value, weight) pairs.
    """

    kind: str
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if values.ndim != 1 or values.shape != weights.shape:
            raise ValueError("spin values and weights must be 1-d and aligned")
        if np.any(weights <= 0):
            raise ValueError("spin weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("spin weights must sum to 1 within 1e-12")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)
        self.values.setflags(write=False)
        self.weights.setflags(write=False)

    @staticmethod
    def ising() -> "SpinDistribution":
        return SpinDistribution("ising", np.array([-1.0, 1.0]), np.array([0.5, 0.5]))

    @staticmethod
    def finite_atoms(values: Iterable[float], weights: Iterable[float]) -> "SpinDistribution":
        return SpinDistribution("atoms", np.asarray(list(values)), np.asarray(list(weights)))

    @property
    def q_max(self) -> float:
        """Essential supremum of sigma^2; overlaps of the model live in [0, q_max]."""
        return float(np.max(self.values**2))

    def to_json(self) -> dict:
        if self.kind == "ising":
            return {"type": "ising"}
        return {"type": "atoms", "values": self.values.tolist(), "weights": self.weights.tolist()}

    @staticmethod
    def from_json(obj: dict) -> "SpinDistribution":
        if obj.get("type") == "ising":
            return SpinDistribution.ising()
        if obj.get("type") == "atoms":
            return SpinDistribution.finite_atoms(obj["values"], obj["weights"])
        raise ValueError(f"unknown spin distribution {obj!r}")


def _canonical_coeffs(coeffs: Iterable[Sequence[float]]) -> tuple[tuple[int, float], ...]:
    acc: dict[int, float] = {}
    for p, a in coeffs:
        p = int(p)
        a = float(a)
        if p < 1:
            raise ValueError("monomial degrees must satisfy p >= 1")
        if a < 0:
            raise ValueError("coefficients a_p must be nonnegative")
        acc[p] = acc.get(p, 0.0) + a
    out = tuple(sorted((p, a) for p, a in acc.items() if a > 0.0))
    if not out:
        raise ValueError("at least one coefficient a_p must be positive")
    return out


@dataclass(frozen=True)
class MixtureModel:
    """Mixed p-spin covariance xi(r) = sum_p a_p r^p with reference spins."""

    coeffs: tuple[tuple[int, float], ...]
    dim: int = 1
    spins: SpinDistribution = field(default_factory=SpinDistribution.ising)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _canonical_coeffs(self.coeffs))
        if self.dim < 1:
            raise ValueError("spin dimension must be >= 1")

    # -- power series -----------------------------------------------------

    @property
    def degrees(self) -> np.ndarray:
        return np.array([p for p, _ in self.coeffs], dtype=int)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([a for _, a in self.coeffs], dtype=float)

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max())

    def xi(self, r):
        """Evaluate xi.  Scalars and arrays use the plain power series; for
        dim > 1 a symmetric matrix argument is evaluated through its
        Frobenius-norm profile xi(|r|_F), which is convex on the PSD cone
        and consistent with the ray-wise gradient/theta used downstream."""
        if isinstance(r, np.ndarray) and r.ndim == 2:
            return self._xi_scalar(float(np.linalg.norm(r)))
        return self._xi_scalar(r)

    def _xi_scalar(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for p, a in self.coeffs:
            out = out + a * r**p
        return float(out) if out.ndim == 0 else out

    def grad_xi(self, r):
        """xi'(r) for scalar r (elementwise on arrays)."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for p, a in self.coeffs:
            out = out + a * p * r ** (p - 1)
        return float(out) if out.ndim == 0 else out

    def grad_xi_ray(self, s: float, direction: np.ndarray) -> np.ndarray:
        """Gradient of the Frobenius profile at s*direction, |direction|_F = 1."""
        return self.grad_xi(s) * direction

    def _d2xi(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for p, a in self.coeffs:
            if p >= 2:
                out = out + a * p * (p - 1) * r ** (p - 2)
        return float(out) if out.ndim == 0 else out

    # -- conjugates --------------------------------------------------------

    def grad_xi_inverse(self, y):
        """Solve xi'(b) = y for b >= 0 (vectorized, safeguarded Newton).

        Requires y >= xi'(0); raises DivergentConjugate when xi' is bounded
        (pure linear series) and y exceeds its range.
        """
        y = np.atleast_1d(np.asarray(y, dtype=float))
        slope0 = self.grad_xi(0.0)
        if np.any(y < slope0 - 1e-15):
            raise ValueError("grad_xi_inverse needs y >= xi'(0)")
        if self.max_degree == 1:
            if np.any(y > slope0 + 1e-15):
                raise DivergentConjugate("xi' is constant; no finite stationary point")
            return np.zeros_like(y)
        hi = np.ones_like(y)
        for _ in range(200):
            mask = self.grad_xi(hi) < y
            if not mask.any():
                break
            hi[mask] *= 2.0
        else:  # pragma: no cover - 2^200 exceeds any float input
            raise DivergentConjugate("could not bracket the stationary point")
        lo = np.zeros_like(y)
        b = 0.5 * hi
        for _ in range(100):
            g = self.grad_xi(b) - y
            lo = np.where(g <= 0, b, lo)
            hi = np.where(g > 0, b, hi)
            d2 = self._d2xi(b)
            step = np.divide(g, d2, out=np.full_like(b, np.inf), where=d2 > 0)
            nb = b - step
            bad = ~((nb > lo) & (nb < hi))
            nb = np.where(bad, 0.5 * (lo + hi), nb)
            if np.all(np.abs(nb - b) <= 1e-16 + 1e-14 * np.abs(b)):
                b = nb
                break
            b = nb
        return b

    def conjugate(self, y, t: float = 1.0):
        """Scaled convex dual t*xi*(y/t) = sup_{b>=0} { y b - t xi(b) }.

        Finite for every y when xi has a degree >= 2 term; for a pure linear
        series the supremum is +infinity beyond the slope and
        DivergentConjugate is raised rather than silently truncating.
        """
        if t <= 0:
            raise ValueError("conjugate requires t > 0")
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.zeros_like(y_arr)
        active = y_arr > t * self.grad_xi(0.0)
        if active.any():
            b = self.grad_xi_inverse(y_arr[active] / t)
            out[active] = y_arr[active] * b - t * self._xi_scalar(b)
        out = np.maximum(out, 0.0)
        return float(out[0]) if np.isscalar(y) or np.asarray(y).ndim == 0 else out

    def conjugate_matrix(self, x: np.ndarray, t: float = 1.0) -> float:
        """t*xi*(x/t) for a PSD matrix via the Frobenius profile."""
        return self.conjugate(float(np.linalg.norm(x)), t)

    def restricted_conjugate(self, y):
        """Ball-restricted dual sup_{b in [0,1]} { y b - xi(b) }; 1-Lipschitz in y."""
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.zeros_like(y_arr)
        hi = y_arr >= self.grad_xi(1.0)
        out[hi] = y_arr[hi] - self._xi_scalar(1.0)
        mid = (~hi) & (y_arr > self.grad_xi(0.0))
        if mid.any():
            b = self.grad_xi_inverse(y_arr[mid])
            out[mid] = y_arr[mid] * b - self._xi_scalar(b)
        out = np.maximum(out, 0.0)
        return float(out[0]) if np.isscalar(y) or np.asarray(y).ndim == 0 else out

    # -- theta and the quadratic perturbation -------------------------------

    def theta(self, x):
        """theta(x) = x xi'(x) - xi(x) = sum_p a_p (p-1) x^p.

        Matrix arguments go through the Frobenius profile, for which the
        identity theta = restricted_conjugate(grad xi) holds ray-wise.
        """
        if isinstance(x, np.ndarray) and x.ndim == 2:
            return self.theta(float(np.linalg.norm(x)))
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for p, a in self.coeffs:
            out = out + a * (p - 1) * x**p
        return float(out) if out.ndim == 0 else out

    def perturbed(self, alpha: float) -> "MixtureModel":
        """Model with covariance xi_alpha(x) = xi(x) + alpha x^2."""
        if alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if alpha == 0:
            return self
        return MixtureModel(self.coeffs + ((2, float(alpha)),), self.dim, self.spins)

    # -- serialization -------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "coeffs": [[int(p), float(a)] for p, a in self.coeffs],
            "dim": self.dim,
            "spins": self.spins.to_json(),
        }

    @staticmethod
    def from_json(obj: dict) -> "MixtureModel":
        spins = SpinDistribution.from_json(obj.get("spins", {"type": "ising"}))
        return MixtureModel(tuple((p, a) for p, a in obj["coeffs"]), int(obj.get("dim", 1)), spins)

    @staticmethod
    def load(path: str) -> "MixtureModel":
        with open(path) as fh:
            return MixtureModel.from_json(json.load(fh))


def sk_model() -> MixtureModel:
    """Sherrington-Kirkpatrick model: xi(x) = x^2 with symmetric binary spins."""
    return MixtureModel(((2, 1.0),))
