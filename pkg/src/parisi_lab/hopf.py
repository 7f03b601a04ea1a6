"""Hopf-Lax operators for piecewise-linear convex initial data.

The class of admissible initial conditions is the cone of 1-Lipschitz,
nondecreasing, convex functions chi with chi(0) = 0, stored as knots plus
nondecreasing slopes in [0, 1] and extended past the last knot with the
terminal slope.  For such chi the two representations

    sup-convolution:  S_t chi(x) = sup_{y>=0} { chi(x+y) - t xi*(y/t) }
    conjugate (Hopf): S_t chi(x) = sup_{y>=0} { x y - chi*(y) + t xi(y) }

agree; both are evaluated exactly by enumerating per-piece stationary
points (the sup-convolution objective is concave on each linear piece of
chi, with stationary point y = t xi'(slope); the Hopf objective is convex
on each linear piece of chi*, so its maximum sits at a breakpoint).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .models import DivergentConjugate, MixtureModel

__all__ = [
    "PLConvexFn",
    "PiecewiseLinearFn",
    "pl_conjugate",
    "s_t_sup",
    "s_t_hopf",
    "tilde_s_t",
    "StepPath",
    "AffinePath",
    "lift",
    "project",
    "pairing_l2",
    "pairing_j",
    "l1_path_distance",
    "hj_finite_dim",
    "SeparabilityViolation",
    "EmptyDirections",
    "random_pl_convex",
]


class SeparabilityViolation(AssertionError):
    """The separable and Hopf evaluations of v_j disagree; implementation bug."""


class EmptyDirections(ValueError):
    """No sample directions supplied."""


@dataclass(frozen=True)
class PLConvexFn:
    """1-Lipschitz nondecreasing convex piecewise-linear chi with chi(0) = 0."""

    knots: np.ndarray
    slopes: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).ravel()
        slopes = np.asarray(self.slopes, dtype=float).ravel()
        if knots.size < 2 or slopes.size != knots.size - 1:
            raise ValueError("need knots x_0 < ... < x_m and one slope per segment")
        if knots[0] != 0.0 or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must start at 0 and increase strictly")
        if np.any(slopes < -1e-12) or np.any(slopes > 1 + 1e-12):
            raise ValueError("slopes must lie in [0, 1]")
        if np.any(np.diff(slopes) < -1e-12):
            raise ValueError("slopes must be nondecreasing (convexity)")
        slopes = np.clip(slopes, 0.0, 1.0)
        slopes = np.maximum.accumulate(slopes)
        # merge consecutive segments with equal slope
        keep = np.concatenate([[True], np.abs(np.diff(slopes)) > 0])
        knots = np.concatenate([knots[:-1][keep], knots[-1:]])
        slopes = slopes[keep]
        values = np.concatenate([[0.0], np.cumsum(slopes * np.diff(knots))])
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "_values", values)
        for arr in (self.knots, self.slopes, values):
            arr.setflags(write=False)

    @property
    def knot_values(self) -> np.ndarray:
        return self._values

    @property
    def terminal_slope(self) -> float:
        return float(self.slopes[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.knots, x, side="right") - 1, 0, len(self.slopes) - 1)
        out = self._values[idx] + self.slopes[idx] * (x - self.knots[idx])
        return float(out) if out.ndim == 0 else out

    @staticmethod
    def identity(q_max: float = 1.0) -> "PLConvexFn":
        return PLConvexFn(np.array([0.0, q_max]), np.array([1.0]))

    @staticmethod
    def zero(q_max: float = 1.0) -> "PLConvexFn":
        return PLConvexFn(np.array([0.0, q_max]), np.array([0.0]))

    def to_json(self) -> dict:
        return {"knots": self.knots.tolist(), "slopes": self.slopes.tolist()}

    @staticmethod
    def from_json(obj: dict) -> "PLConvexFn":
        return PLConvexFn(np.asarray(obj["knots"], dtype=float), np.asarray(obj["slopes"], dtype=float))


@dataclass(frozen=True)
class PiecewiseLinearFn:
    """General piecewise-linear function given by knots and values.

    Used for conjugates (with an explicit finite domain bound instead of
    float infinities) and for generic Lipschitz test functions.  Outside
    the knot range the function continues with the boundary slopes.
    """

    knots: np.ndarray
    values: np.ndarray
    domain_max: float | None = None

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if knots.size != values.size or knots.size < 1:
            raise ValueError("knots and values must be aligned and non-empty")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must increase strictly")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        self.knots.setflags(write=False)
        self.values.setflags(write=False)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.domain_max is not None and np.any(x > self.domain_max + 1e-12):
            raise ValueError("evaluation outside the stored domain bound")
        if len(self.knots) == 1:
            out = np.full_like(x, self.values[0])
        else:
            out = np.interp(x, self.knots, self.values)
            lo = x < self.knots[0]
            hi = x > self.knots[-1]
            if lo.any():
                s = (self.values[1] - self.values[0]) / (self.knots[1] - self.knots[0])
                out = np.where(lo, self.values[0] + s * (x - self.knots[0]), out)
            if hi.any():
                s = (self.values[-1] - self.values[-2]) / (self.knots[-1] - self.knots[-2])
                out = np.where(hi, self.values[-1] + s * (x - self.knots[-1]), out)
        return float(out) if out.ndim == 0 else out

    @property
    def lipschitz(self) -> float:
        if len(self.knots) == 1:
            return 0.0
        return float(np.max(np.abs(np.diff(self.values) / np.diff(self.knots))))


def pl_conjugate(chi: PLConvexFn) -> PiecewiseLinearFn:
    """Exact Legendre transform chi*(y) = sup_{x>=0} { x y - chi(x) }.

    The result is piecewise linear with breakpoints at the distinct slopes
    of chi; its domain ends at the terminal slope (chi* = +inf beyond it,
    encoded by `domain_max`).  chi*(y) = 0 for y <= first slope.
    """
    bps = np.unique(np.concatenate([[0.0], chi.slopes]))
    vals = np.array([np.max(bp * chi.knots - chi.knot_values) for bp in bps])
    vals = np.maximum(vals, 0.0)  # x = 0 is always admissible and gives 0
    if len(bps) == 1:
        return PiecewiseLinearFn(bps, vals, domain_max=float(bps[-1]))
    return PiecewiseLinearFn(bps, vals, domain_max=float(bps[-1]))


def _sup_window(model: MixtureModel, t: float) -> float:
    """Width beyond which t xi*(y/t) outgrows any 1-Lipschitz gain, doubled."""
    if model.max_degree == 1:
        return t * model.grad_xi(0.0)
    a = 1.0
    for _ in range(200):
        if model.conjugate(a) >= 2.0 * a:
            break
        a *= 2.0
    return 2.0 * t * a


def s_t_sup(chi: PLConvexFn, model: MixtureModel, t: float, x: float) -> float:
    """Sup-convolution form of the Hopf-Lax evolution at a single point.

    t = 0 returns chi(x) (identity by convention).  The objective
    chi(x+y) - t xi*(y/t) is concave on each linear piece of chi, with the
    per-piece stationary point y = t xi'(slope); the supremum is the best
    of these clamped stationary points and the piece endpoints.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if t == 0.0:
        return float(chi(x))
    y_max = _sup_window(model, t)
    cands = [0.0, y_max]
    cands.extend(k - x for k in chi.knots if 0.0 < k - x < y_max)
    # per-piece stationary points: on a piece of slope s the objective is
    # s y - t xi*(y/t) + const, stationary at y = t xi'(s)
    for s in np.unique(chi.slopes):
        y_star = float(t * model.grad_xi(s))
        if 0.0 < y_star < y_max:
            cands.append(y_star)
    ys = np.array(sorted(set(cands)))
    vals = chi(x + ys) - model.conjugate(ys, t)
    # coarse safety sweep; the analytic candidates already contain the max
    grid = np.linspace(0.0, y_max, 512)
    gvals = chi(x + grid) - model.conjugate(grid, t)
    return float(max(vals.max(), gvals.max()))


def s_t_hopf(chi: PLConvexFn, model: MixtureModel, t: float, x: float) -> float:
    """Conjugate (Hopf) form: sup over [0, terminal slope] of
    x y - chi*(y) + t xi(y), exact by breakpoint enumeration (the objective
    is convex on each linear piece of chi*)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0.0:
        return float(chi(x))
    conj = pl_conjugate(chi)
    ys = conj.knots
    vals = x * ys - conj.values + t * model.xi(ys)
    return float(vals.max())


def tilde_s_t(chi: Callable, model: MixtureModel, t: float, x, directions) -> float:
    """Gradient-image form of the evolution for a generic Lipschitz chi.

    Returns the maximum over the sampled directions y of
    chi(x + t grad_xi(y)) - t theta(y); theta equals the ball-restricted
    conjugate of xi composed with grad_xi, which keeps the two Hopf-Lax
    routes consistent.  For D = 1 the directions are points of [0, 1];
    for D > 1 they are PSD matrices in the Frobenius unit ball.
    """
    dirs = list(directions)
    if not dirs:
        raise EmptyDirections("need at least one direction")
    if t == 0.0:
        return float(chi(x))
    best = -np.inf
    for y in dirs:
        if isinstance(y, np.ndarray) and y.ndim == 2:
            shift = t * model.grad_xi_ray(float(np.linalg.norm(y)), y / max(np.linalg.norm(y), 1e-300)) \
                if np.linalg.norm(y) > 0 else np.zeros_like(y)
            val = float(chi(x + shift)) - t * model.theta(y)
        else:
            s = float(y)
            val = float(chi(x + t * model.grad_xi(s))) - t * model.theta(s)
        best = max(best, val)
    return float(best)


def d1_exact_directions(chi: PLConvexFn, model: MixtureModel, t: float, x: float) -> list[float]:
    """Directions in [0, 1] through which tilde_s_t reproduces s_t_sup exactly
    for piecewise-linear convex chi: the slopes (stationary preimages), the
    knot preimages, and the interval endpoints."""
    dirs = {0.0, 1.0}
    dirs.update(float(s) for s in chi.slopes)
    if t > 0:
        lo, hi = t * model.grad_xi(0.0), t * model.grad_xi(1.0)
        for k in chi.knots:
            y = k - x
            if lo < y < hi:
                dirs.add(float(model.grad_xi_inverse(y / t)[0]))
    return sorted(dirs)


# ---------------------------------------------------------------------------
# finite-dimensional discretization: cells, lift/project, separable solutions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepPath:
    """Right-continuous step function on [0, 1) with exact integration."""

    breaks: np.ndarray  # 0 = b_0 < ... < b_L = 1
    levels: np.ndarray  # value on [b_i, b_{i+1})

    def __post_init__(self):
        breaks = np.asarray(self.breaks, dtype=float).ravel()
        levels = np.asarray(self.levels, dtype=float).ravel()
        if breaks[0] != 0.0 or abs(breaks[-1] - 1.0) > 0 or np.any(np.diff(breaks) <= 0):
            raise ValueError("breaks must run from 0 to 1 strictly increasing")
        if levels.size != breaks.size - 1:
            raise ValueError("one level per cell required")
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "levels", levels)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        idx = np.clip(np.searchsorted(self.breaks, u, side="right") - 1, 0, len(self.levels) - 1)
        out = self.levels[idx]
        return float(out) if out.ndim == 0 else out

    def integrate(self, a: float, b: float) -> float:
        """Exact integral over [a, b] subset of [0, 1]."""
        total = 0.0
        for lo, hi, v in zip(self.breaks[:-1], self.breaks[1:], self.levels):
            seg = max(0.0, min(b, hi) - max(a, lo))
            if seg > 0:
                total += v * seg
        return total

    def segment_nodes(self) -> np.ndarray:
        return self.breaks


@dataclass(frozen=True)
class AffinePath:
    """Path u -> c0 + c1 u on [0, 1), with exact integration."""

    c0: float = 0.0
    c1: float = 1.0

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = self.c0 + self.c1 * u
        return float(out) if out.ndim == 0 else out

    def integrate(self, a: float, b: float) -> float:
        return self.c0 * (b - a) + 0.5 * self.c1 * (b * b - a * a)

    def segment_nodes(self) -> np.ndarray:
        return np.array([0.0, 1.0])


def lift(j: int, x: Sequence[float]) -> StepPath:
    """l_j: vector of j nondecreasing values -> step path on uniform cells."""
    x = np.asarray(x, dtype=float)
    if x.size != j:
        raise ValueError("need exactly j values")
    if np.any(np.diff(x) < 0):
        raise ValueError("values must be nondecreasing")
    return StepPath(np.arange(j + 1) / j, x)


def project(j: int, path) -> np.ndarray:
    """p_j: path -> vector of exact cell averages (nondecreasing for monotone paths)."""
    return np.array([j * path.integrate(i / j, (i + 1) / j) for i in range(j)])


def pairing_l2(path, other) -> float:
    """<q, q'>_{L^2} for a pair of paths, exact when at least one is a step path."""
    if not isinstance(path, StepPath):
        path, other = other, path
    if not isinstance(path, StepPath):
        raise TypeError("exact pairing needs a step path argument")
    return float(sum(v * other.integrate(lo, hi)
                     for lo, hi, v in zip(path.breaks[:-1], path.breaks[1:], path.levels)))


def pairing_j(p: Sequence[float], x: Sequence[float]) -> float:
    """Normalized pairing <p, x>_j = (1/j) sum_i p_i x_i."""
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(np.dot(p, x) / p.size)


def l1_path_distance(a, b) -> float:
    """Exact L^1 distance between two paths (step or affine).

    On each merged segment the difference is affine (step paths are
    constants there), so the absolute integral splits exactly at the root.
    """
    nodes = np.unique(np.concatenate([a.segment_nodes(), b.segment_nodes()]))
    def ends(p, lo, hi):
        if isinstance(p, StepPath):
            v = p(0.5 * (lo + hi))
            return v, v
        return p(lo), p(hi)
    total = 0.0
    for lo, hi in zip(nodes[:-1], nodes[1:]):
        a0, a1 = ends(a, lo, hi)
        b0, b1 = ends(b, lo, hi)
        d0, d1 = a0 - b0, a1 - b1
        if d0 * d1 >= 0:
            total += 0.5 * abs(d0 + d1) * (hi - lo)
        else:
            root = lo + (hi - lo) * d0 / (d0 - d1)
            total += 0.5 * abs(d0) * (root - lo) + 0.5 * abs(d1) * (hi - root)
    return total


def hj_finite_dim(chi: PLConvexFn, model: MixtureModel, t: float, x: Sequence[float],
                  tol: float = 1e-8) -> float:
    """Value v_j(t, x) of the j-dimensional projected evolution.

    Computed two ways and cross-checked: (a) the separable average
    (1/j) sum_i S_t chi(x_i) through the sup-convolution, and (b) the
    j-dimensional Hopf supremum, which factorizes coordinatewise after the
    per-coordinate change of variables and is evaluated by conjugate
    breakpoint enumeration.  Disagreement beyond `tol` raises
    SeparabilityViolation (an implementation bug, not a math failure).
    """
    x = np.asarray(x, dtype=float)
    if np.any(np.diff(x) < 0) or np.any(x < 0):
        raise ValueError("x must be a nondecreasing nonnegative vector")
    sep = float(np.mean([s_t_sup(chi, model, t, xi) for xi in x]))
    hop = float(np.mean([s_t_hopf(chi, model, t, xi) for xi in x]))
    if abs(sep - hop) > tol:
        raise SeparabilityViolation(f"separable {sep!r} vs Hopf {hop!r}")
    return sep


def random_pl_convex(rng: np.random.Generator, q_max: float = 1.0, max_pieces: int = 6) -> PLConvexFn:
    """Random element of the admissible class on [0, q_max]."""
    m = int(rng.integers(1, max_pieces + 1))
    knots = np.concatenate([[0.0], np.sort(rng.uniform(0.05 * q_max, q_max, m - 1)), [q_max]]) \
        if m > 1 else np.array([0.0, q_max])
    knots = np.unique(knots)
    slopes = np.sort(rng.uniform(0.0, 1.0, len(knots) - 1))
    return PLConvexFn(knots, slopes)
