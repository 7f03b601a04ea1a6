"""The order-parameter functional psi and its concave dual.

For a finitely supported measure mu = sum_k (zeta_{k+1} - zeta_k) delta_{q_k}
the functional is evaluated by the standard cascade-averaging recursion

    Y_K(x)     = log int exp(x s - q_K s^2) dP1(s)
    Y_{k-1}(x) = (1/zeta_k) log E_z exp(zeta_k Y_k(x + sqrt(2(q_k - q_{k-1})) z))
    psi(mu)    = -E_z Y_0(sqrt(2 q_0) z)

with all Gaussian expectations by Gauss-Hermite quadrature on a uniform
x-grid wide enough to contain every shifted quadrature node, and cubic
interpolation between levels.  A truncated Poisson-Dirichlet cascade
sampler provides an independent Monte-Carlo route to the same quantity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .measures import DiscreteMeasure
from .models import MixtureModel

__all__ = [
    "PsiValue",
    "CascadeSpec",
    "psi",
    "psi_ladder",
    "psi_cascade_mc",
    "psi_star",
    "PsiStarValue",
    "UnsupportedDimension",
    "DegenerateExponent",
    "DivergenceDetected",
    "TruncationWarning",
    "PsiCache",
]

DEFAULT_QUAD_ORDER = 60
DEFAULT_GRID_STEP = 0.01


class UnsupportedDimension(ValueError):
    """psi is only computed for scalar (D = 1) models."""


class DegenerateExponent(ValueError):
    """A cascade exponent lies outside (0, 1)."""


class DivergenceDetected(RuntimeError):
    """The dual objective decreases without bound along the probe atoms."""


class TruncationWarning(UserWarning):
    """Truncated cascade kept too little mass for the requested accuracy."""


@dataclass(frozen=True)
class PsiValue:
    value: float
    method: str
    quad_order: int | None = None
    stderr: float | None = None
    n_rep: int | None = None

    def to_json(self) -> dict:
        out = {"value": self.value, "method": self.method}
        if self.quad_order is not None:
            out["params"] = {"quad_order": self.quad_order}
        if self.stderr is not None:
            out["stderr"] = self.stderr
        if self.n_rep is not None:
            out.setdefault("params", {})["n_rep"] = self.n_rep
        return out


def _hermite(order: int):
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    return np.sqrt(2.0) * nodes, weights / np.sqrt(np.pi)


def _check_model(model: MixtureModel):
    if model.dim != 1:
        raise UnsupportedDimension("psi requires a scalar model (dim = 1)")


def psi_ladder(model: MixtureModel, qs: Sequence[float], zetas: Sequence[float],
               quad_order: int = DEFAULT_QUAD_ORDER, grid_step: float = DEFAULT_GRID_STEP) -> float:
    """psi on an explicit ladder (q_0 <= ... <= q_K, interior cuts zeta_1 < ... < zeta_K).

    Unlike the public `psi`, no canonicalization happens here; repeated atom
    values are legal and the recursion treats the zero-variance level exactly,
    which is what makes the refinement-invariance property testable.
    """
    _check_model(model)
    qs = np.asarray(qs, dtype=float)
    zetas = np.asarray(zetas, dtype=float)
    if qs.size == 0 or np.any(qs < 0) or np.any(np.diff(qs) < 0):
        raise ValueError("atoms must be nonnegative and nondecreasing")
    if zetas.size != qs.size - 1:
        raise ValueError("need one interior cut per level")
    if zetas.size and (np.any(zetas <= 0) or np.any(zetas >= 1) or np.any(np.diff(zetas) <= 0)):
        raise DegenerateExponent("interior cuts must increase strictly inside (0, 1)")
    z_nodes, z_weights = _hermite(quad_order)
    spins_v = model.spins.values
    spins_w = model.spins.weights
    log_w = np.log(spins_w)
    q_top = qs[-1]

    def y_top(x: np.ndarray) -> np.ndarray:
        # log int exp(x s - q_K s^2) dP1(s), stable over atoms
        expo = np.multiply.outer(x, spins_v) - q_top * spins_v**2 + log_w
        m = expo.max(axis=-1, keepdims=True)
        return np.log(np.exp(expo - m).sum(axis=-1)) + m[..., 0]

    K = qs.size - 1
    if K == 0:
        return float(-np.dot(z_weights, y_top(np.sqrt(2.0 * qs[0]) * z_nodes)))

    increments = np.sqrt(2.0 * np.diff(np.concatenate([[0.0], qs])))
    reach = float(np.abs(z_nodes).max() * increments.sum() + 2.0)
    n_pts = max(1001, int(np.ceil(2.0 * reach / grid_step)) + 1)
    n_pts += 1 - n_pts % 2  # odd count puts 0 exactly on the grid
    grid = np.linspace(-reach, reach, n_pts)
    y = y_top(grid)
    for k in range(K, 0, -1):
        sigma = increments[k]
        zeta = float(zetas[k - 1])
        if sigma == 0.0:
            # zero-variance level: (1/zeta) log exp(zeta * Y) = Y exactly
            continue
        spline = CubicSpline(grid, y)
        pts = grid[:, None] + sigma * z_nodes[None, :]
        vals = spline(np.clip(pts, grid[0], grid[-1]))
        m = vals.max(axis=1, keepdims=True)
        y = (np.log(np.dot(np.exp(zeta * (vals - m)), z_weights)) + zeta * m[:, 0]) / zeta
    if qs[0] == 0.0:
        return float(-y[(n_pts - 1) // 2])
    spline = CubicSpline(grid, y)
    return float(-np.dot(z_weights, spline(np.clip(np.sqrt(2.0 * qs[0]) * z_nodes, grid[0], grid[-1]))))


def psi(model: MixtureModel, mu: DiscreteMeasure, quad_order: int = DEFAULT_QUAD_ORDER,
        grid_step: float = DEFAULT_GRID_STEP) -> PsiValue:
    """Evaluate psi(mu) by the quadrature recursion (canonical measure)."""
    zetas = mu.cut_points[1:-1]
    value = psi_ladder(model, mu.atoms, zetas, quad_order, grid_step)
    return PsiValue(value=value, method="recursion", quad_order=quad_order)


class PsiCache:
    """Memoized psi evaluations for one model and fixed quadrature settings."""

    def __init__(self, model: MixtureModel, quad_order: int = DEFAULT_QUAD_ORDER,
                 grid_step: float = DEFAULT_GRID_STEP):
        self.model = model
        self.quad_order = quad_order
        self.grid_step = grid_step
        self._store: dict[bytes, float] = {}

    def __call__(self, mu: DiscreteMeasure) -> float:
        key = mu.key()
        if key not in self._store:
            self._store[key] = psi(self.model, mu, self.quad_order, self.grid_step).value
        return self._store[key]

    def __len__(self) -> int:
        return len(self._store)


# ---------------------------------------------------------------------------
# truncated Poisson-Dirichlet cascade oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CascadeSpec:
    """Truncation parameters for the cascade sampler (K <= 2 levels)."""

    truncation: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.truncation < 500:
            raise ValueError("truncation size must be at least 500")


def _pd_points(zeta: float, m: int, rng: np.random.Generator) -> np.ndarray:
    """Top m points of the Poisson process with intensity zeta x^{-1-zeta} dx,
    via inverse transform of the tail: u_(i) = (E_1 + ... + E_i)^(-1/zeta)."""
    gammas = np.cumsum(rng.standard_exponential(m))
    return gammas ** (-1.0 / zeta)


def psi_cascade_mc(model: MixtureModel, mu: DiscreteMeasure, spec: CascadeSpec,
                   n_rep: int = 200) -> PsiValue:
    """Monte-Carlo estimate of psi(mu) through the truncated cascade.

    Per replicate: sample the ordered Poisson points per node, normalize the
    leaf weights, draw the node Gaussians, evaluate the spin integral exactly
    over the reference atoms, and record log of the weighted sum.  The mean
    over replicates of the negated records estimates psi, with the usual
    standard error.
    """
    _check_model(model)
    qs = mu.atoms
    K = qs.size - 1
    if K > 2:
        raise ValueError("cascade sampler supports K <= 2")
    zetas = mu.cut_points[1:-1]
    if np.any(zetas <= 0) or np.any(zetas >= 1):
        raise DegenerateExponent("cascade exponents must lie in (0, 1)")
    m = spec.truncation
    spins_v = model.spins.values
    spins_w = model.spins.weights
    log_w = np.log(spins_w)
    q_top = qs[-1]
    increments = np.sqrt(2.0 * np.diff(np.concatenate([[0.0], qs])))

    def spin_log_integral(h: np.ndarray) -> np.ndarray:
        expo = np.multiply.outer(h, spins_v) - q_top * spins_v**2 + log_w
        mx = expo.max(axis=-1, keepdims=True)
        return np.log(np.exp(expo - mx).sum(axis=-1)) + mx[..., 0]

    records = np.empty(n_rep)
    min_rel_weight = np.inf
    root = np.random.SeedSequence(spec.seed)
    for r, child in enumerate(root.spawn(n_rep)):
        rng = np.random.default_rng(child)
        h0 = increments[0] * rng.standard_normal()
        if K == 0:
            records[r] = spin_log_integral(np.array([h0]))[0]
            continue
        u1 = _pd_points(float(zetas[0]), m, rng)
        if K == 1:
            w = u1
            h = h0 + increments[1] * rng.standard_normal(m)
        else:
            # one independent Poisson sample of children per level-1 node
            gammas = np.cumsum(rng.standard_exponential((m, m)), axis=1)
            u2 = gammas ** (-1.0 / float(zetas[1]))
            w = (u1[:, None] * u2).reshape(-1)
            h = (h0 + increments[1] * rng.standard_normal(m)[:, None]
                 + increments[2] * rng.standard_normal((m, m))).reshape(-1)
        v = w / w.sum()
        min_rel_weight = min(min_rel_weight, float(v.min()))
        logs = spin_log_integral(h)
        mx = logs.max()
        records[r] = mx + np.log(np.dot(v, np.exp(logs - mx)))
    if np.isfinite(min_rel_weight) and min_rel_weight > 1e-6:
        zeta_last = float(zetas[-1])
        bound = zeta_last / (1.0 - zeta_last) * m * min_rel_weight
        warnings.warn(
            f"smallest kept cascade weight {min_rel_weight:.2e} exceeds 1e-6 of "
            f"the total; estimated truncated mass <= {bound:.2e}",
            TruncationWarning,
        )
    value = float(-records.mean())
    stderr = float(records.std(ddof=1) / np.sqrt(n_rep)) if n_rep > 1 else float("nan")
    return PsiValue(value=value, method="cascade_mc", stderr=stderr, n_rep=n_rep)


# ---------------------------------------------------------------------------
# the concave dual psi_*
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PsiStarValue:
    """Family-restricted dual value; an upper bound on the true infimum."""

    value: float
    argmin: DiscreteMeasure
    family_bound: bool = True


def psi_star(model: MixtureModel, chi: Callable, family: Sequence[DiscreteMeasure],
             psi_fn: Callable[[DiscreteMeasure], float] | None = None,
             divergence_probes: Sequence[float] | None = None) -> PsiStarValue:
    """min over the family of  int chi d(mu) - psi(mu).

    The true dual is an infimum over all of P_1(R_+), so the returned value
    is an upper bound, flagged as such.  When `divergence_probes` is given,
    Dirac masses at the probe atoms are evaluated first: a strictly
    decreasing objective along growing probes that undercuts the family
    minimum signals psi_*(chi) = -infinity and raises DivergenceDetected.
    """
    if not family:
        raise ValueError("family must be nonempty")
    psi_fn = psi_fn or PsiCache(model)
    objective = lambda nu: nu.integrate(chi) - psi_fn(nu)
    values = [objective(nu) for nu in family]
    best = int(np.argmin(values))
    if divergence_probes is not None and len(divergence_probes) >= 2:
        probes = [DiscreteMeasure.dirac(float(q)) for q in sorted(divergence_probes)]
        pv = [objective(nu) for nu in probes]
        decreasing = all(b < a - 1e-9 for a, b in zip(pv[:-1], pv[1:]))
        if decreasing and pv[-1] < values[best] - 1e-9:
            raise DivergenceDetected(
                f"dual objective decreases along probe atoms {list(sorted(divergence_probes))}: {pv}"
            )
    return PsiStarValue(value=float(values[best]), argmin=family[best])
