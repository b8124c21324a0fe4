"""Constant estimation, closed-form bound evaluation and Monte-Carlo / enumeration verifiers."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .optimizer import (
    MAX_GAMMA,
    EpochSchedule,
    ScsgConfig,
    ceil_tol,
    run_scsg,
    scsg_epoch,
)
from .problems import FiniteSumOracle, Oracle
from .sampling import ParameterError, RandomStream, derive_stream, sample_geometric


@dataclass
class BoundReport:
    theorem: str
    inputs: dict
    value: float
    epochs: int | None = None
    cost: float | None = None
    advisory: bool = False
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "inputs": self.inputs,
            "value": self.value,
            "epochs": self.epochs,
            "cost": self.cost,
            "advisory": self.advisory,
            "notes": list(self.notes),
        }


# --------------------------------------------------------------------------
# constants
# --------------------------------------------------------------------------


def estimate_h_star(oracle: Oracle, probes: Sequence[np.ndarray]) -> float:
    """Largest component-gradient variance over the probe points.

    A lower estimate of the supremum.  Streaming oracles use their held-out
    sample as the component population.  Charged to the metrics counter.
    """
    probes = list(probes)
    if not probes:
        raise ParameterError("need at least one probe point")
    best = 0.0
    for x in probes:
        G = oracle.component_gradients(np.asarray(x, dtype=float))
        dev = G - G.mean(axis=0)
        best = max(best, float(np.mean(np.sum(dev * dev, axis=1))))
    return best


def estimate_lipschitz(oracle: Oracle, stream: RandomStream, probes: int = 10, scale: float = 1.0,
                       center=None) -> float:
    """Largest observed ``|grad f_i(x) - grad f_i(y)| / |x - y|`` over random probe pairs."""
    center = np.zeros(oracle.d) if center is None else np.asarray(center, dtype=float)
    best = 0.0
    for k in range(probes):
        s = derive_stream(stream, k)
        x = center + scale * s.normal(oracle.d)
        y = x + 0.1 * scale * s.normal(oracle.d)
        dG = oracle.component_gradients(x) - oracle.component_gradients(y)
        best = max(best, float(np.max(np.linalg.norm(dG, axis=1))) / float(np.linalg.norm(x - y)))
    return best


def probe_points(oracle: Oracle, stream: RandomStream, count: int = 10, scale: float = 1.0, center=None):
    center = np.zeros(oracle.d) if center is None else np.asarray(center, dtype=float)
    return [center + scale * derive_stream(stream, k).normal(oracle.d) for k in range(count)]


# --------------------------------------------------------------------------
# closed-form evaluators
# --------------------------------------------------------------------------


def expected_cost(schedule: EpochSchedule, T: int) -> float:
    """``2 * sum_{j<=T} B_j``: mean IFO cost of ``T`` geometric epochs."""
    if T < 1:
        raise ParameterError("T must be >= 1")
    head = min(T, schedule.stationary_from or T)
    total = sum(p.B for p in schedule.take(head))
    if T > head:
        total += (T - head) * schedule(head).B
    return 2.0 * total


def _indicator(B: int, n: int | None) -> float:
    return 1.0 if n is None or B < n else 0.0


def _check_theory(schedule: EpochSchedule, T: int, L: float, gamma: float) -> list:
    if T < 1:
        raise ParameterError("T must be >= 1")
    if not 0 < gamma <= MAX_GAMMA:
        raise ParameterError(f"hypothesis gamma <= 1/3 violated: gamma={gamma}")
    if not L > 0:
        raise ParameterError("L must be positive")
    head = min(T, schedule.stationary_from or T)
    params = [_check_theory_epoch(schedule, j, L, gamma) for j in range(1, head + 1)]
    return params + [params[-1]] * (T - head)


def _check_theory_epoch(schedule: EpochSchedule, j: int, L: float, gamma: float):
    p = schedule.rule(j)
    if p.B < 8 * p.b:
        raise ParameterError(f"hypothesis B_j >= 8 b_j violated at epoch {j}: B={p.B}, b={p.b}")
    target = gamma * (p.B / p.b) ** (-2.0 / 3.0)
    if abs(p.eta * L - target) > 1e-9 * target:
        raise ParameterError(
            f"hypothesis eta_j L = gamma (B_j/b_j)^(-2/3) violated at epoch {j}: "
            f"eta L={p.eta * L:.6g}, expected {target:.6g}")
    return p


def bound_smooth(schedule: EpochSchedule, T: int, L: float, gamma: float, delta_f: float,
                 h_star: float, n: int | None) -> BoundReport:
    """Upper bound on ``E |grad f(x_out)|^2`` after ``T`` epochs with the sampled output rule."""
    params = _check_theory(schedule, T, L, gamma)
    num = 5.0 * L / gamma * delta_f
    num += 6.0 * h_star * sum(p.b ** (-1 / 3) * p.B ** (-2 / 3) * _indicator(p.B, n) for p in params)
    den = sum(p.b ** (-1 / 3) * p.B ** (1 / 3) for p in params)
    report = BoundReport(
        theorem="smooth",
        inputs={"L": L, "gamma": gamma, "delta_f": delta_f, "h_star": h_star, "n": n, "T": T,
                "schedule": schedule.name, "B_first": params[0].B, "B_last": params[-1].B},
        value=num / den,
        cost=expected_cost(schedule, T),
    )
    if any(p.b > 1 for p in params):
        report.advisory = True
        report.notes.append("mini-batch sizes above 1: check is advisory")
    return report


def pl_factor(B: int, b: int, L: float, mu: float, gamma: float) -> float:
    """Per-epoch contraction ``5 L b^(1/3) / (mu gamma B^(1/3) + 5 L b^(1/3))``."""
    c = 5.0 * L * b ** (1 / 3)
    return c / (mu * gamma * B ** (1 / 3) + c)


def _pl_offset(p, L: float, gamma: float, mu: float, h_star: float, n: int | None) -> float:
    return 6.0 * gamma * h_star * _indicator(p.B, n) / (mu * gamma * p.B + 5.0 * L * p.b ** (1 / 3) * p.B ** (2 / 3))


def bound_pl(schedule: EpochSchedule, T: int, L: float, gamma: float, mu: float, delta_f: float,
             h_star: float, n: int | None) -> BoundReport:
    """Upper bound on ``E f(x_T) - f*`` under the P-L condition (last-iterate output)."""
    if not mu > 0:
        raise ParameterError("mu must be positive")
    params = _check_theory(schedule, T, L, gamma)
    F = float(delta_f)
    for p in params:
        lam = pl_factor(p.B, p.b, L, mu, gamma)
        F = lam * F + _pl_offset(p, L, gamma, mu, h_star, n)
    return BoundReport(
        theorem="pl",
        inputs={"L": L, "gamma": gamma, "mu": mu, "delta_f": delta_f, "h_star": h_star, "n": n, "T": T,
                "schedule": schedule.name, "B_first": params[0].B, "B_last": params[-1].B},
        value=F,
        cost=expected_cost(schedule, T),
        notes=["per-epoch contraction keeps gamma in the mu term"],
    )


def epochs_to_eps_v1(epsilon: float, delta_f: float, B: int, L: float = 1.0) -> int:
    """Smallest ``T`` with ``30 L delta_f / (T B^(1/3)) <= epsilon / 2`` (at least 1).

    ``L = 1`` is the unit-smoothness normalisation used for the worked example.
    """
    if not (epsilon > 0 and B >= 1 and L > 0 and delta_f >= 0):
        raise ParameterError("need epsilon > 0, B >= 1, L > 0, delta_f >= 0")
    return max(1, ceil_tol(60.0 * L * delta_f / (epsilon * B ** (1 / 3))))


def _scan_limit(schedule: EpochSchedule, max_T: int) -> int:
    return min(max_T, schedule.stationary_from) if schedule.stationary_from else max_T


def epochs_to_eps_smooth(schedule: EpochSchedule, epsilon: float, L: float, gamma: float,
                         delta_f: float, h_star: float, n: int | None, max_T: int = 1 << 20) -> int | None:
    """Smallest ``T`` whose smooth bound is at most ``epsilon``; ``None`` if never reached.

    Epochs are scanned one at a time up to the schedule's stationary point
    (or ``max_T``); past it the bound is a ratio of two linear functions of
    ``T`` and the crossing is solved directly.
    """
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    _check_theory(schedule, 1, L, gamma)
    num = 5.0 * L / gamma * delta_f
    den = 0.0
    limit = _scan_limit(schedule, max_T)
    for j in range(1, limit + 1):
        p = _check_theory_epoch(schedule, j, L, gamma)
        num += 6.0 * h_star * p.b ** (-1 / 3) * p.B ** (-2 / 3) * _indicator(p.B, n)
        den += p.b ** (-1 / 3) * p.B ** (1 / 3)
        if num / den <= epsilon:
            return j
    if not schedule.stationary_from or limit < schedule.stationary_from:
        return None
    # epochs limit+1, limit+2, ... repeat the parameters of epoch `limit`
    p = schedule(limit)
    a = 6.0 * h_star * p.b ** (-1 / 3) * p.B ** (-2 / 3) * _indicator(p.B, n)
    c = p.b ** (-1 / 3) * p.B ** (1 / 3)
    rate = epsilon * c - a
    if rate <= 0:
        return None
    k = max(1, math.ceil((num - epsilon * den) / rate))
    while k > 1 and (num + a * (k - 1)) / (den + c * (k - 1)) <= epsilon:
        k -= 1
    while (num + a * k) / (den + c * k) > epsilon:
        k += 1
    return limit + k


def epochs_to_eps_pl(schedule: EpochSchedule, epsilon: float, L: float, gamma: float, mu: float,
                     delta_f: float, h_star: float, n: int | None, max_T: int = 1 << 20) -> int | None:
    """Smallest ``T`` whose P-L bound is at most ``epsilon``; ``None`` if never reached.

    Past the stationary point the recursion is affine with a fixed
    contraction, so the remaining epochs follow from a logarithm.
    """
    if not (epsilon > 0 and mu > 0):
        raise ParameterError("epsilon and mu must be positive")
    _check_theory(schedule, 1, L, gamma)
    F = float(delta_f)
    limit = _scan_limit(schedule, max_T)
    for j in range(1, limit + 1):
        p = _check_theory_epoch(schedule, j, L, gamma)
        F = pl_factor(p.B, p.b, L, mu, gamma) * F + _pl_offset(p, L, gamma, mu, h_star, n)
        if F <= epsilon:
            return j
    if not schedule.stationary_from or limit < schedule.stationary_from:
        return None
    p = schedule(limit)
    lam, off = pl_factor(p.B, p.b, L, mu, gamma), _pl_offset(p, L, gamma, mu, h_star, n)
    fixed = off / (1 - lam)
    # F_k = fixed + lam^k (F - fixed); F > epsilon here, so only a decreasing run can cross
    if not (fixed < epsilon and F > fixed):
        return None
    k = max(1, math.ceil(math.log((epsilon - fixed) / (F - fixed)) / math.log(lam)))
    step = lambda k: fixed + lam**k * (F - fixed)  # noqa: E731
    while k > 1 and step(k - 1) <= epsilon:
        k -= 1
    while step(k) > epsilon:
        k += 1
    return limit + k


# --------------------------------------------------------------------------
# verifiers
# --------------------------------------------------------------------------


@dataclass
class Check:
    lhs: float
    rhs: float
    passed: bool
    tolerance: float = 0.0
    details: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.lhs, self.rhs = float(self.lhs), float(self.rhs)
        self.passed, self.tolerance = bool(self.passed), float(self.tolerance)

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.passed))


def verify_lemma_sample_variance(population, m: int, atol: float = 1e-10) -> Check:
    """Exact mean of ``|subset average|^2`` over every ``m``-subset vs the closed form."""
    X = np.atleast_2d(np.asarray(population, dtype=float))
    if X.shape[0] == 1 and np.asarray(population).ndim == 1:
        X = X.T
    M = X.shape[0]
    if not 1 <= m <= M <= 12:
        raise ParameterError(f"need 1 <= m <= M <= 12, got m={m}, M={M}")
    scale = max(1.0, float(np.abs(X).max()))
    if np.abs(X.sum(axis=0)).max() > 1e-9 * scale * M:
        raise ParameterError("population must sum to zero")
    total, count = 0.0, 0
    for subset in itertools.combinations(range(M), m):
        avg = X[list(subset)].mean(axis=0)
        total += float(avg @ avg)
        count += 1
    exact = total / count
    mean_sq = float(np.mean(np.sum(X * X, axis=1)))
    formula = (M - m) / ((M - 1) * m) * mean_sq if M > 1 else 0.0
    return Check(exact, formula, abs(exact - formula) <= atol, atol, {"subsets": count})


def verify_lemma_geometric(D: Sequence[float], gamma: float, mode: str = "exact",
                           draws: int = 10**6, stream: RandomStream | None = None,
                           se_mult: float = 4.0) -> Check:
    """``E(D_N - D_{N+1})`` against ``(1/gamma - 1)(D_0 - E D_N)`` for ``N ~ Geom(gamma)``.

    Exact mode sums the series over the window ``k <= K - 2``; the two
    truncated sides then differ by exactly ``(1 - gamma) gamma^(K-2) D_{K-1}``,
    whose magnitude is the tolerance.  Monte-Carlo mode extends ``D`` by its
    last value and passes when the mean difference is within ``se_mult``
    standard errors.
    """
    if not 0 < gamma < 1:
        raise ParameterError(f"gamma must lie in (0, 1), got {gamma}")
    D = np.asarray(D, dtype=float)
    K = len(D)
    if K < 2:
        raise ParameterError("need at least two terms")
    if mode == "exact":
        k = np.arange(K - 1)
        w = gamma**k * (1 - gamma)
        lhs = float(np.sum((D[:-1] - D[1:]) * w))
        rhs = (1 / gamma - 1) * (D[0] - float(np.sum(D[:-1] * w)))
        remainder = (1 - gamma) * gamma ** (K - 2) * float(np.abs(D).max())
        tol = remainder + 1e-12 * (1 + float(np.abs(D).max())) * K
        return Check(lhs, rhs, abs(lhs - rhs) <= tol, tol, {"mode": mode, "K": K})
    if mode != "monte_carlo":
        raise ParameterError("mode must be 'exact' or 'monte_carlo'")
    stream = stream or RandomStream(0, ("lemma-geometric",))
    N = sample_geometric(stream, gamma, size=draws)
    dn = D[np.minimum(N, K - 1)]
    dn1 = D[np.minimum(N + 1, K - 1)]
    lhs = float(np.mean(dn - dn1))
    rhs = (1 / gamma - 1) * (D[0] - float(np.mean(dn)))
    z = (dn - dn1) + (1 / gamma - 1) * dn
    se = float(np.std(z, ddof=1) / math.sqrt(draws))
    tol = se_mult * se
    return Check(lhs, rhs, abs(lhs - rhs) <= tol + 1e-12, tol, {"mode": mode, "draws": draws, "se": se})


def lemma_log_threshold(eta: float, z: float) -> float:
    """``x(z) = z^(-1/eta) * max((2/eta) log(1/z), 2)^(1/(eta-1))``."""
    return z ** (-1 / eta) * max(2 / eta * math.log(1 / z), 2.0) ** (1 / (eta - 1))


def lemma_log_g(eta: float, x):
    return (1 + np.log(x)) / np.power(x, eta)


def verify_lemma_log(eta: float, z: float, grid_size: int = 100, decades: float = 8.0) -> bool:
    """``(1 + log x) / x^eta <= z`` on a log-spaced grid from ``x(z)`` over ``decades`` decades."""
    if not (eta > 1 and z > 0):
        raise ParameterError("need eta > 1 and z > 0")
    x0 = lemma_log_threshold(eta, z)
    grid = x0 * np.logspace(0.0, decades, grid_size)
    return bool(np.all(lemma_log_g(eta, grid) <= z))


@dataclass
class OneEpochCheck:
    lhs_mean: float
    rhs_mean: float
    slack: float
    passed: bool
    se: float
    advisory: bool = False


def verify_one_epoch(oracle: FiniteSumOracle, anchor, B: int, b: int, gamma: float, replicates: int,
                     seed: int = 0, se_mult: float = 3.0) -> OneEpochCheck:
    """Monte-Carlo check of the one-epoch inequality from a fixed anchor.

    Each replicate runs one geometric epoch with ``eta = gamma (B/b)^(-2/3) / L``
    and records ``|grad f(x_new)|^2`` and ``f(anchor) - f(x_new)``, both exactly.
    Passes when ``mean(lhs - rhs) <= se_mult * SE``.
    """
    if oracle.L is None or oracle.h_star is None:
        raise ParameterError("one-epoch check needs declared L and H*")
    if "L" in oracle.estimated:
        raise ParameterError("one-epoch check needs an exact L")
    if not 0 < gamma <= MAX_GAMMA:
        raise ParameterError("need gamma <= 1/3")
    if B < 8 * b:
        raise ParameterError("need B >= 8 b")
    if replicates < 2:
        raise ParameterError("need at least two replicates")
    anchor = np.asarray(anchor, dtype=float)
    L, h_star = oracle.L, oracle.h_star
    eta = gamma * (B / b) ** (-2 / 3) / L
    f0 = oracle.value(anchor)
    root = RandomStream(seed, ("one-epoch",))
    grads = np.empty(replicates)
    drops = np.empty(replicates)
    for r in range(replicates):
        x, _ = scsg_epoch(oracle, anchor, B, b, eta, derive_stream(root, r))
        f, g = oracle.diagnostics(x)
        grads[r] = g @ g
        drops[r] = f0 - f
    coef = 5 * L / gamma * (b / B) ** (1 / 3)
    floor = 6 * _indicator(B, oracle.n) / B * h_star
    z = grads - (coef * drops + floor)
    se = float(np.std(z, ddof=1) / math.sqrt(replicates))
    lhs, rhs = float(grads.mean()), float(coef * drops.mean() + floor)
    return OneEpochCheck(lhs, rhs, rhs - lhs, bool(lhs - rhs <= se_mult * se), se,
                         advisory="h_star" in oracle.estimated)


@dataclass
class DominanceCheck:
    measured: float
    se: float
    bound: float
    passed: bool
    runs: int


def verify_smooth_dominance(oracle: FiniteSumOracle, schedule: EpochSchedule, T: int, seeds: Sequence[int],
                            x0=None, se_mult: float = 3.0) -> DominanceCheck:
    """Mean ``|grad f(x_out)|^2`` over seeded runs against the smooth bound."""
    if oracle.f_star is None:
        raise ParameterError("dominance check needs f*")
    x0 = np.zeros(oracle.d) if x0 is None else np.asarray(x0, dtype=float)
    delta_f = oracle.value(x0) - oracle.f_star
    report = bound_smooth(schedule, T, oracle.L, schedule.gamma, delta_f, oracle.h_star, oracle.n)
    vals = []
    for s in seeds:
        tr = run_scsg(oracle, ScsgConfig(schedule, epochs=T, seed=int(s), diagnostics=False), x0)
        g = oracle.full_gradient(tr.output)
        vals.append(float(g @ g))
    vals = np.asarray(vals)
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
    m = float(vals.mean())
    return DominanceCheck(m, se, report.value, m <= report.value + se_mult * se, len(vals))
