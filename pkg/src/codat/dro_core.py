"""Chi-square constrained distributionally robust optimization over class risks.

Solves the inner problem

    maximize_P  E_P[R]   subject to   chi2(P, P0) <= eta,  P on the simplex

for a discrete risk vector R over K classes.  The closed-form maximizer,
its Lagrange multiplier, the deterministic equivalent objective
mean + sqrt(eta * variance), and an independent projected-gradient-ascent
oracle are all exposed as pure functions over immutable inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

# Variance below this guard is treated as exactly zero: the risk vector is
# constant, every feasible distribution attains the same objective, and the
# center p0 is returned as the canonical maximizer.
ZERO_VARIANCE_GUARD = 1e-12

# Feasibility tolerance for the oracle's alternating projection.
_FEASIBILITY_TOL = 1e-9


def _as_readonly(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ProbabilityDistribution:
    """Discrete distribution over K >= 2 classes; entries >= 0, summing to 1."""

    weights: np.ndarray

    def __post_init__(self):
        arr = _as_readonly(self.weights)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError(f"distribution needs at least 2 classes, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("distribution weights must be finite")
        if np.min(arr) < 0.0:
            raise ValueError(f"negative weight {np.min(arr)} in distribution")
        total = float(np.sum(arr))
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"distribution weights sum to {total}, expected 1 within 1e-9")
        object.__setattr__(self, "weights", arr)

    @property
    def size(self) -> int:
        return int(self.weights.size)


def uniform_distribution(num_classes: int) -> ProbabilityDistribution:
    """The uniform distribution over `num_classes` classes."""
    return ProbabilityDistribution(np.full(num_classes, 1.0 / num_classes))


@dataclass(frozen=True)
class ClassRiskVector:
    """Per-class risk values (e.g. average adversarial cross-entropy in nats)."""

    risks: np.ndarray

    def __post_init__(self):
        arr = _as_readonly(self.risks)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError(f"risk vector needs at least 2 classes, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("risk entries must be finite")
        if np.min(arr) < 0.0:
            raise ValueError(f"negative risk {np.min(arr)}")
        object.__setattr__(self, "risks", arr)

    @property
    def size(self) -> int:
        return int(self.risks.size)


@dataclass(frozen=True)
class AmbiguityConfig:
    """Chi-square ball around a center distribution.

    `eta` must stay strictly below K - 1, the divergence of a Dirac point
    from the uniform center; at or beyond that radius the ball contains
    degenerate one-class distributions and the worst case collapses onto the
    single hardest class.  `eta == 0` is allowed and collapses the ball to
    the center itself, which downstream code uses as the plain-average limit.
    """

    p0: ProbabilityDistribution
    eta: float

    def __post_init__(self):
        eta = float(self.eta)
        if not math.isfinite(eta) or eta < 0.0:
            raise ValueError(f"ambiguity radius must be finite and >= 0, got {eta}")
        bound = self.p0.size - 1
        if eta >= bound:
            raise ValueError(
                f"ambiguity radius {eta} must be < K - 1 = {bound}; "
                "larger balls contain one-class distributions"
            )
        object.__setattr__(self, "eta", eta)

    @property
    def num_classes(self) -> int:
        return self.p0.size


@dataclass(frozen=True)
class WorstCaseSolution:
    """Result of the inner maximization.

    `closed_form_valid` is False when the analytic maximizer had a negative
    entry and the numeric oracle supplied the constrained optimum instead.
    `degenerate` marks constant-risk inputs where every feasible distribution
    is optimal and the center is returned.
    """

    distribution: ProbabilityDistribution
    objective_value: float
    alpha_star: float
    closed_form_valid: bool
    degenerate: bool = field(default=False)


def _check_paired(p0: ProbabilityDistribution, risks: ClassRiskVector) -> None:
    if p0.size != risks.size:
        raise ValueError(f"dimension mismatch: distribution K={p0.size}, risks K={risks.size}")


def chi_square_divergence(p: ProbabilityDistribution, p0: ProbabilityDistribution) -> float:
    """Discrete chi-square divergence sum((p - p0)^2 / p0).

    Evaluated in exact rational arithmetic after normalizing both inputs to
    exact unit mass, then rounded once to float.  Float-rounded weights such
    as fl(1/K) carry a representation error that a direct float sum inflates
    quadratically; normalizing first makes clean cases (Dirac versus uniform,
    identical inputs) come out exact.
    """
    if p.size != p0.size:
        raise ValueError(f"dimension mismatch: {p.size} vs {p0.size}")
    ps = [Fraction(x) for x in p.weights.tolist()]
    qs = [Fraction(x) for x in p0.weights.tolist()]
    p_mass, q_mass = sum(ps), sum(qs)
    total = Fraction(0)
    for idx, (pi, qi) in enumerate(zip(ps, qs)):
        p_hat, q_hat = pi / p_mass, qi / q_mass
        if q_hat == 0:
            if p_hat != 0:
                raise ValueError(
                    f"absolute continuity violated: p[{idx}] > 0 where p0[{idx}] = 0"
                )
            continue
        diff = p_hat - q_hat
        total += diff * diff / q_hat
    return float(total)


def _chi2_float(p: np.ndarray, p0: np.ndarray) -> float:
    # Fast float path for the oracle's inner loop, where residuals are only
    # required to close within _FEASIBILITY_TOL.
    d = p - p0
    return float(np.sum(d * d / p0))


def mean_variance_under(p0: ProbabilityDistribution, risks: ClassRiskVector) -> tuple[float, float]:
    """Mean and variance of the risk vector under `p0`, variance clamped at 0."""
    _check_paired(p0, risks)
    w, r = p0.weights, risks.risks
    mean = float(np.dot(w, r))
    variance = float(np.dot(w, r * r) - mean * mean)
    return mean, max(variance, 0.0)


def equivalent_objective(risks: ClassRiskVector, cfg: AmbiguityConfig) -> float:
    """Deterministic equivalent of the worst case: mean + sqrt(eta * variance)."""
    mean, variance = mean_variance_under(cfg.p0, risks)
    return mean + math.sqrt(cfg.eta * variance)


def equivalent_objective_gradient(risks: ClassRiskVector, cfg: AmbiguityConfig) -> np.ndarray:
    """Gradient of `equivalent_objective` with respect to the risk vector.

    Analytically this equals the worst-case distribution
    p0 * (1 + sqrt(eta / variance) * (r - mean)), so the trainer can
    backpropagate the scalar objective by re-weighting per-class risk
    gradients.  For constant risks the subgradient convention returns p0.
    Entries may be negative when the closed form is invalid; the finite
    difference identity still holds there, only the worst-case
    interpretation is lost.
    """
    mean, variance = mean_variance_under(cfg.p0, risks)
    w, r = cfg.p0.weights, risks.risks
    if variance < ZERO_VARIANCE_GUARD:
        return w.copy()
    return w + w * math.sqrt(cfg.eta / variance) * (r - mean)


def lagrange_multiplier_star(risks: ClassRiskVector, cfg: AmbiguityConfig) -> float:
    """Optimal multiplier alpha* = sqrt(variance / eta) / 2 of the ball constraint.

    The likelihood ratio it induces, L(xi) = 1 + (r_xi - mean) / (2 alpha*),
    reproduces the closed-form maximizer as p0 * L.
    """
    mean, variance = mean_variance_under(cfg.p0, risks)
    del mean
    if variance < ZERO_VARIANCE_GUARD:
        raise ValueError("alpha* is undefined for constant risks (zero variance)")
    if cfg.eta <= 0.0:
        raise ValueError("alpha* is undefined for a zero ambiguity radius")
    return 0.5 * math.sqrt(variance / cfg.eta)


def worst_case_distribution(risks: ClassRiskVector, cfg: AmbiguityConfig) -> WorstCaseSolution:
    """Maximizer of E_P[R] over the chi-square ball intersected with the simplex.

    The closed form p0 * (1 + sqrt(eta / variance) * (r - mean)) is exact
    whenever all its entries are nonnegative.  Otherwise the derivation's
    dropped nonnegativity constraint is binding and the numeric oracle
    supplies the constrained optimum (`closed_form_valid = False`).
    """
    _check_paired(cfg.p0, risks)
    mean, variance = mean_variance_under(cfg.p0, risks)
    if variance < ZERO_VARIANCE_GUARD:
        return WorstCaseSolution(
            distribution=cfg.p0,
            objective_value=mean,
            alpha_star=0.0,
            closed_form_valid=False,
            degenerate=True,
        )
    alpha = 0.5 * math.sqrt(variance / cfg.eta) if cfg.eta > 0.0 else 0.0
    if cfg.eta == 0.0:
        return WorstCaseSolution(cfg.p0, mean, alpha, True)
    w, r = cfg.p0.weights, risks.risks
    candidate = w + w * math.sqrt(cfg.eta / variance) * (r - mean)
    if np.min(candidate) >= 0.0:
        dist = ProbabilityDistribution(candidate)
        objective = mean + math.sqrt(cfg.eta * variance)
        return WorstCaseSolution(dist, objective, alpha, True)
    dist, objective = oracle_worst_case(risks, cfg)
    return WorstCaseSolution(dist, objective, alpha, False)


def simplex_project(v) -> ProbabilityDistribution:
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError(f"need a 1-d vector of length >= 2, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot project a non-finite vector")
    return ProbabilityDistribution(_simplex_project_raw(arr))


def _simplex_project_raw(arr: np.ndarray) -> np.ndarray:
    u = np.sort(arr)[::-1]
    cumulative = np.cumsum(u)
    indices = np.arange(1, arr.size + 1)
    rho = indices[u + (1.0 - cumulative) / indices > 0][-1]
    theta = (cumulative[rho - 1] - 1.0) / rho
    return np.maximum(arr - theta, 0.0)


def _project_ambiguity(point: np.ndarray, p0: np.ndarray, eta: float) -> np.ndarray:
    # Alternate simplex projection with radial scaling toward the center until
    # both the simplex and the ball constraint hold within _FEASIBILITY_TOL.
    q = _simplex_project_raw(point)
    for _ in range(200):
        divergence = _chi2_float(q, p0)
        if divergence <= eta + _FEASIBILITY_TOL:
            return q
        q = p0 + math.sqrt(eta / divergence) * (q - p0)
        q = _simplex_project_raw(q)
    raise RuntimeError(
        f"feasibility repair did not converge: residual {divergence - eta:.3e} after 200 rounds"
    )


def oracle_worst_case(
    risks: ClassRiskVector,
    cfg: AmbiguityConfig,
    iterations: int = 5000,
    step_size: float = 0.01,
) -> tuple[ProbabilityDistribution, float]:
    """Projected gradient ascent on E_P[R] over the chi-square ball.

    Independent numeric check of `worst_case_distribution`, and the fallback
    solver when the closed form goes negative.  `step_size` is the initial
    step; once iterates stop improving the step anneals by 0.3 and ascent
    resumes from the best feasible point, because a fixed step stalls at
    O(step) error whenever the optimum has entries near the simplex boundary.
    """
    if iterations < 1:
        raise ValueError(f"need at least one iteration, got {iterations}")
    if step_size <= 0.0:
        raise ValueError(f"step size must be positive, got {step_size}")
    _check_paired(cfg.p0, risks)
    p0, r = cfg.p0.weights, risks.risks
    if cfg.eta == 0.0:
        return cfg.p0, float(np.dot(p0, r))
    step = float(step_size)
    current = _project_ambiguity(p0.copy(), p0, cfg.eta)
    best = current.copy()
    best_objective = float(np.dot(current, r))
    stall = 0
    for _ in range(iterations):
        candidate = _project_ambiguity(current + step * r, p0, cfg.eta)
        objective = float(np.dot(candidate, r))
        if objective > best_objective + 1e-15:
            best_objective = objective
            best = candidate.copy()
            stall = 0
        else:
            stall += 1
        if stall >= 20 or np.array_equal(candidate, current):
            step *= 0.3
            stall = 0
            if step < 1e-9:
                break
            current = best.copy()
        else:
            current = candidate
    return ProbabilityDistribution(best), best_objective
