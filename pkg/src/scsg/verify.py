"""Verification suites behind ``scsg verify``.

Every check uses a fixed seed so reports are reproducible.  A check is a
dict with ``name``, measured ``values``, ``tolerance`` and ``passed``.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable

import numpy as np
from scipy import stats

from . import analysis
from .optimizer import schedule_version1, schedule_version2, schedule_version3, constant_schedule
from .problems import make_least_squares
from .sampling import (
    RandomStream,
    derive_stream,
    sample_geometric,
    sample_subset,
    sample_weighted_index,
)

SUITES = ("lemmas", "sampler", "one-epoch", "bounds")

GEOM_BINS = 21  # k = 0..19 individually, k >= 20 pooled


def _check(name: str, passed: bool, tolerance=None, **values) -> dict:
    clean = {}
    for k, v in values.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        clean[k] = v
    return {"name": name, "values": clean, "tolerance": tolerance, "passed": bool(passed)}


# --------------------------------------------------------------------------
# sampler
# --------------------------------------------------------------------------


def geometric_chi_square(gamma: float, draws: int = 10**5, seed: int = 11) -> dict:
    stream = RandomStream(seed, ("chi2-geom", str(gamma)))
    N = sample_geometric(stream, gamma, size=draws)
    observed = np.bincount(np.minimum(N, GEOM_BINS - 1), minlength=GEOM_BINS)
    k = np.arange(GEOM_BINS - 1)
    probs = np.append(gamma**k * (1 - gamma), gamma ** (GEOM_BINS - 1))
    chi = stats.chisquare(observed, probs * draws)
    mean = gamma / (1 - gamma)
    se = math.sqrt(gamma) / (1 - gamma) / math.sqrt(draws)
    emp = float(N.mean())
    return _check(f"geometric gamma={gamma}", chi.pvalue > 0.01 and abs(emp - mean) <= 3 * se,
                  tolerance={"significance": 0.01, "mean_se_mult": 3},
                  p_value=float(chi.pvalue), empirical_mean=emp, expected_mean=mean, se=se)


def subset_uniformity(n: int, m: int, draws: int = 10**5, seed: int = 12) -> dict:
    stream = RandomStream(seed, ("chi2-subset", n, m))
    subsets = {s: i for i, s in enumerate(itertools.combinations(range(n), m))}
    counts = np.zeros(len(subsets))
    for _ in range(draws):
        counts[subsets[tuple(sample_subset(stream, n, m).tolist())]] += 1
    if len(subsets) == 1:
        return _check(f"subset n={n} m={m}", counts[0] == draws, p_value=1.0)
    chi = stats.chisquare(counts)
    return _check(f"subset n={n} m={m}", chi.pvalue > 0.01, tolerance={"significance": 0.01},
                  p_value=float(chi.pvalue), subsets=len(subsets))


def weighted_frequencies(weights, draws: int = 10**4, seed: int = 13, tol: float = 0.02) -> dict:
    stream = RandomStream(seed, ("weighted",) + tuple(str(w) for w in weights))
    counts = np.bincount([sample_weighted_index(stream, weights) for _ in range(draws)], minlength=len(weights))
    freq = counts / draws
    target = np.asarray(weights, dtype=float) / np.sum(weights)
    return _check(f"weighted {list(weights)}", np.all(np.abs(freq - target) <= tol), tolerance=tol,
                  frequencies=freq.tolist(), target=target.tolist())


def stream_independence(draws: int = 10**4, seed: int = 7) -> dict:
    root = RandomStream(seed)
    a = derive_stream(root, "a").uniform(draws)
    b = derive_stream(root, "b").uniform(draws)
    rho = float(np.corrcoef(a, b)[0, 1])
    return _check("derived streams uncorrelated", abs(rho) < 0.05, tolerance=0.05, correlation=rho)


def sampler_suite() -> list[dict]:
    out = [geometric_chi_square(g) for g in (0.3, 0.5, 0.9)]
    out += [subset_uniformity(n, m) for n, m in ((2, 1), (4, 2), (5, 3), (6, 2), (6, 5))]
    out += [weighted_frequencies(w) for w in ([1, 1, 1], [1, 3])]
    out.append(stream_independence())
    return out


# --------------------------------------------------------------------------
# lemmas
# --------------------------------------------------------------------------


def sample_variance_checks(count: int = 100, seed: int = 21) -> list[dict]:
    root = RandomStream(seed, ("lemma-sample-variance",))
    out = []
    for i in range(count):
        s = derive_stream(root, i)
        M = 2 + int(s.integers(11))  # 2..12
        d = 1 + int(s.integers(4))
        m = 1 + int(s.integers(M))
        X = s.normal((M, d))
        X -= X.mean(axis=0)
        c = analysis.verify_lemma_sample_variance(X, m)
        out.append(_check(f"sample variance #{i} M={M} m={m} d={d}", c.passed, c.tolerance,
                          exact=c.lhs, formula=c.rhs))
    return out


def geometric_lemma_checks(K: int = 400, draws: int = 10**6, seed: int = 22) -> list[dict]:
    out = []
    k = np.arange(K, dtype=float)
    sequences = {"k": k, "k^2": k**2, "const": np.full(K, 3.0)}
    for gamma in (0.5, 0.9):
        for label, D in sequences.items():
            c = analysis.verify_lemma_geometric(D, gamma, "exact")
            out.append(_check(f"geometric stopping exact D={label} gamma={gamma}", c.passed, c.tolerance,
                              lhs=c.lhs, rhs=c.rhs))
    for gamma in (0.5, 0.9):
        window = gamma ** (-np.arange(40) / 2)
        for label, D in (("gamma^(-k/2) window", window), ("k", k)):
            c = analysis.verify_lemma_geometric(D, gamma, "monte_carlo", draws=draws,
                                                stream=RandomStream(seed, ("lemma-geom-mc", str(gamma), label)))
            out.append(_check(f"geometric stopping monte carlo D={label} gamma={gamma}", c.passed,
                              {"se_mult": 4, "abs": c.tolerance}, lhs=c.lhs, rhs=c.rhs))
    return out


def log_lemma_checks() -> list[dict]:
    out = []
    for eta in (1.5, 2.0, 3.0):
        for z in (1.0, 1e-2, 1e-6):
            ok = analysis.verify_lemma_log(eta, z, grid_size=100)
            out.append(_check(f"log lemma eta={eta} z={z}", ok, threshold=analysis.lemma_log_threshold(eta, z)))
    return out


def lemma_suite() -> list[dict]:
    return sample_variance_checks() + geometric_lemma_checks() + log_lemma_checks()


# --------------------------------------------------------------------------
# one epoch
# --------------------------------------------------------------------------


def one_epoch_suite(replicates: int = 2000) -> list[dict]:
    oracle = make_least_squares(RandomStream(2024, ("verify", "one-epoch")), n=50, d=5, condition=4.0)
    out = []
    for gamma in (1 / 6, 1 / 3):
        c = analysis.verify_one_epoch(oracle, np.zeros(oracle.d), B=16, b=1, gamma=gamma,
                                      replicates=replicates, seed=31)
        out.append(_check(f"one-epoch inequality gamma={gamma:.4g}", c.passed, {"se_mult": 3},
                          lhs_mean=c.lhs_mean, rhs_mean=c.rhs_mean, slack=c.slack, se=c.se,
                          L=oracle.L, h_star=oracle.h_star))
    return out


# --------------------------------------------------------------------------
# bounds arithmetic
# --------------------------------------------------------------------------


def _close(a: float, b: float, rtol: float = 1e-12) -> bool:
    return abs(a - b) <= rtol * max(1.0, abs(b))


def bounds_suite() -> list[dict]:
    out = []
    v1 = schedule_version1(0.1, 1.0, 1.0, 10**6)
    B = v1(1).B
    T = analysis.epochs_to_eps_v1(0.1, 1.0, B)
    cost = analysis.expected_cost(v1, T)
    out.append(_check("version 1 worked chain", (B, T, cost) == (120, 122, 29280.0), B=B, T=T, cost=cost))
    B3 = schedule_version3(0.1, 1.0, 1.0, 0.1, 10**6)(1).B
    out.append(_check("version 3 batch", B3 == 1200, B=B3))
    lit = [p.B for p in schedule_version2(1.0, 10**6, literal=True).take(5)]
    clamped = [p.B for p in schedule_version2(1.0, 10**6).take(5)]
    out.append(_check("version 2 batches", lit == [1, 3, 6, 8, 12] and clamped == [8, 8, 8, 8, 12],
                      literal=lit, clamped=clamped))
    cost2 = analysis.expected_cost(schedule_version2(1.0, 10**6, literal=True), 3)
    out.append(_check("version 2 expected cost T=3", cost2 == 20.0, cost=cost2))

    L, gamma, df, H, n = 2.0, 1 / 6, 3.0, 5.0, 64
    svrg = constant_schedule(n, 1, gamma / (L * n ** (2 / 3)), name="svrg")
    T = 10
    val = analysis.bound_smooth(svrg, T, L, gamma, df, H, n).value
    ref = 5 * L / gamma * df / (T * n ** (1 / 3))
    out.append(_check("smooth bound at B=n", _close(val, ref), 1e-12, value=val, closed_form=ref))
    Bc = 16
    const = constant_schedule(Bc, 1, gamma / (L * Bc ** (2 / 3)))
    val = analysis.bound_smooth(const, T, L, gamma, df, H, n).value
    ref = 5 * L / gamma * df / (T * Bc ** (1 / 3)) + 6 * H / Bc
    out.append(_check("smooth bound at constant B<n", _close(val, ref), 1e-12, value=val, closed_form=ref))
    mu = 0.3
    val = analysis.bound_pl(svrg, T, L, gamma, mu, df, H, n).value
    ref = (5 * L / (mu * gamma * n ** (1 / 3) + 5 * L)) ** T * df
    out.append(_check("P-L bound at B=n", _close(val, ref), 1e-12, value=val, closed_form=ref))
    # monotone only while delta_f exceeds the fixed point 6 H* / (mu B)
    H_small = 0.5
    vals = [analysis.bound_pl(const, t, L, gamma, mu, df, H_small, n).value for t in range(1, 60)]
    out.append(_check("P-L bound non-increasing in T", all(b <= a + 1e-15 for a, b in zip(vals, vals[1:])),
                      fixed_point=6 * H_small / (mu * Bc), delta_f=df))
    far = analysis.bound_smooth(const, 10**5, L, gamma, df, H, n).value
    out.append(_check("smooth bound floor 6H*/B", abs(far - 6 * H / Bc) <= 1e-3 * 6 * H / Bc,
                      1e-3, value=far, floor=6 * H / Bc))
    return out


RUNNERS: dict[str, Callable[[], list[dict]]] = {
    "lemmas": lemma_suite,
    "sampler": sampler_suite,
    "one-epoch": one_epoch_suite,
    "bounds": bounds_suite,
}


def run_suite(selector: str) -> dict:
    names = SUITES if selector == "all" else (selector,)
    if any(name not in RUNNERS for name in names):
        raise ValueError(f"unknown suite {selector!r}; choose from {SUITES + ('all',)}")
    checks = []
    for name in names:
        for c in RUNNERS[name]():
            c["suite"] = name
            checks.append(c)
    return {"suite": selector, "checks": checks, "passed": all(c["passed"] for c in checks)}
