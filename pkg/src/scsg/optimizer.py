"""SCSG epochs and runs, theory-backed schedules, and the SGD / SVRG baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .problems import Oracle, UnsupportedOperation
from .sampling import (
    GeomParam,
    ParameterError,
    RandomStream,
    derive_stream,
    sample_geometric,
    sample_weighted_index,
)

INNER_MODES = ("geometric", "epoch_pass")
OUTPUT_RULES = ("smooth_sample", "last_iterate")
REPLACEMENTS = ("finite", "streaming")

THEORY_GAMMA = 1.0 / 6.0
MAX_GAMMA = 1.0 / 3.0


class BudgetError(RuntimeError):
    pass


def ceil_tol(x: float) -> int:
    """``ceil`` that forgives floating-point fuzz just above an integer (120.00000000000001 -> 120)."""
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return math.ceil(x)


# --------------------------------------------------------------------------
# schedules
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochParams:
    B: int
    b: int
    eta: float
    clamped: bool = False


@dataclass(frozen=True)
class EpochSchedule:
    """Map from epoch index ``j >= 1`` to ``(B_j, b_j, eta_j)``.

    ``gamma`` is set for theory-mode schedules, whose stepsizes satisfy
    ``eta_j * L = gamma * (B_j / b_j) ** (-2/3)``; for those, ``B_j >= 8 b_j``
    is enforced unless the schedule was built ``literal``.
    ``stationary_from``, when known, is an epoch from which the parameters
    never change; bound searches use it to skip ahead.
    """

    rule: Callable[[int], EpochParams]
    name: str = "custom"
    gamma: float | None = None
    L: float | None = None
    theory: bool = False
    meta: dict = field(default_factory=dict, compare=False)
    stationary_from: int | None = None

    def __call__(self, j: int) -> EpochParams:
        if j < 1:
            raise ParameterError("epochs are numbered from 1")
        p = self.rule(j)
        if not (p.B >= 1 and 1 <= p.b <= p.B):
            raise ParameterError(f"epoch {j}: need B >= 1 and 1 <= b <= B, got B={p.B}, b={p.b}")
        if not (math.isfinite(p.eta) and p.eta > 0):
            raise ParameterError(f"epoch {j}: stepsize must be positive and finite, got {p.eta}")
        if self.theory and p.B < 8 * p.b:
            raise ParameterError(f"epoch {j}: theory mode needs B >= 8 b, got B={p.B}, b={p.b}")
        return p

    def take(self, T: int) -> list[EpochParams]:
        return [self(j) for j in range(1, T + 1)]

    def with_stepsize(self, eta: float) -> "EpochSchedule":
        """Same batch sizes, constant stepsize ``eta`` (no longer theory mode)."""
        base = self.rule
        return EpochSchedule(
            rule=lambda j: replace(base(j), eta=float(eta)),
            name=f"{self.name}@eta={eta:g}",
            meta={**self.meta, "stepsize": float(eta)},
            stationary_from=self.stationary_from,
        )


def constant_schedule(B: int, b: int, eta: float, name: str = "constant") -> EpochSchedule:
    params = EpochParams(int(B), int(b), float(eta))
    return EpochSchedule(rule=lambda j: params, name=name, meta={"B": int(B), "b": int(b), "eta": float(eta)},
                         stationary_from=1)


def _check_gamma(gamma: float) -> float:
    if not 0 < gamma <= MAX_GAMMA:
        raise ParameterError(f"gamma must lie in (0, 1/3], got {gamma}")
    return float(gamma)


def theory_schedule(batch_rule: Callable[[int], int], L: float, n: int | None, b: int = 1,
                    gamma: float = THEORY_GAMMA, literal: bool = False,
                    name: str = "theory", meta: dict | None = None,
                    stationary_from: int | None = None) -> EpochSchedule:
    """Schedule with ``eta_j = gamma * (B_j / b) ** (-2/3) / L``.

    ``B_j = min(batch_rule(j), n)``, raised to ``8 b`` when smaller unless
    ``literal``; raised epochs are flagged ``clamped``.
    """
    if not L > 0:
        raise ParameterError("L must be positive")
    gamma = _check_gamma(gamma)
    b = int(b)
    if b < 1:
        raise ParameterError("mini-batch size must be >= 1")
    if not literal and n is not None and n < 8 * b:
        raise ParameterError(
            f"n={n} < 8b={8 * b}: no batch size satisfies B >= 8b; pass literal=True to skip the clamp")

    def rule(j: int) -> EpochParams:
        B = max(1, int(batch_rule(j)))
        if n is not None:
            B = min(B, n)
        clamped = False
        if not literal and B < 8 * b:
            B, clamped = 8 * b, True
        return EpochParams(B, b, gamma * (B / b) ** (-2.0 / 3.0) / L, clamped)

    return EpochSchedule(rule=rule, name=name, gamma=gamma, L=float(L), theory=not literal,
                         meta={"n": n, "b": b, "gamma": gamma, "literal": literal, **(meta or {})},
                         stationary_from=stationary_from)


def _validate_common(epsilon, h_star, L, n):
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    if not h_star >= 0:
        raise ParameterError("h_star must be non-negative")
    if not L > 0:
        raise ParameterError("L must be positive")
    if n is not None and n < 1:
        raise ParameterError("n must be >= 1")


def schedule_version1(epsilon: float, h_star: float, L: float, n: int | None,
                      gamma: float = THEORY_GAMMA, literal: bool = False) -> EpochSchedule:
    """Constant batch ``B = min(ceil(12 H* / eps), n)``, ``b = 1``, ``eta = 1 / (6 L B^(2/3))``."""
    _validate_common(epsilon, h_star, L, n)
    B = ceil_tol(12.0 * h_star / epsilon)
    return theory_schedule(lambda j: B, L, n, gamma=gamma, literal=literal, name="scsg-v1",
                           meta={"epsilon": epsilon, "h_star": h_star}, stationary_from=1)


def version2_batch(j: int, log_mu: float | None = None) -> int:
    if log_mu is None or j < 2:
        return ceil_tol(j**1.5)
    return ceil_tol(j**1.5 * math.log(j) ** (1.5 + log_mu))


def schedule_version2(L: float, n: int | None, log_mu: float | None = None,
                      gamma: float = THEORY_GAMMA, literal: bool = False) -> EpochSchedule:
    """Growing batch ``B_j = min(ceil(j^(3/2)), n)``, or with the ``(log j)^(3/2 + log_mu)`` factor."""
    if log_mu is not None and not log_mu > 0:
        raise ParameterError("log_mu must be positive")
    if n is not None and n < 1:
        raise ParameterError("n must be >= 1")
    stationary = None
    if n is not None:
        # the batch rule is non-decreasing, so B_j stays at n once it gets there
        lo, hi = 1, 1
        while version2_batch(hi, log_mu) < n:
            lo, hi = hi + 1, 2 * hi
        while lo < hi:
            mid = (lo + hi) // 2
            if version2_batch(mid, log_mu) >= n:
                hi = mid
            else:
                lo = mid + 1
        stationary = lo
    return theory_schedule(lambda j: version2_batch(j, log_mu), L, n, gamma=gamma,
                           literal=literal, name="scsg-v2", meta={"log_mu": log_mu},
                           stationary_from=stationary)


def schedule_version3(epsilon: float, h_star: float, L: float, mu: float, n: int | None,
                      gamma: float = THEORY_GAMMA, literal: bool = False) -> EpochSchedule:
    """P-L constant batch ``B = min(ceil(12 H* / (mu eps)), n)``; pair with ``last_iterate``."""
    if not (mu is not None and mu > 0):
        raise ParameterError("mu must be positive")
    _validate_common(epsilon, h_star, L, n)
    B = ceil_tol(12.0 * h_star / (mu * epsilon))
    return theory_schedule(lambda j: B, L, n, gamma=gamma, literal=literal, name="scsg-v3",
                           meta={"epsilon": epsilon, "h_star": h_star, "mu": mu}, stationary_from=1)


def practical_schedule(batch_rule: Callable[[int], int], stepsize: float, n: int | None,
                       minibatch: int | None = None, divisor: int | None = None,
                       name: str = "practical") -> EpochSchedule:
    """Tuned constant stepsize with ``b_j = minibatch`` or ``b_j = ceil(B_j / divisor)``."""
    if (minibatch is None) == (divisor is None):
        raise ParameterError("give exactly one of minibatch or divisor")

    def rule(j: int) -> EpochParams:
        B = max(1, int(batch_rule(j)))
        if n is not None:
            B = min(B, n)
        b = min(B, minibatch) if minibatch is not None else -(-B // divisor)
        return EpochParams(B, b, float(stepsize))

    return EpochSchedule(rule=rule, name=name,
                         meta={"stepsize": float(stepsize), "minibatch": minibatch, "divisor": divisor})


# --------------------------------------------------------------------------
# config and trace
# --------------------------------------------------------------------------


@dataclass
class ScsgConfig:
    schedule: EpochSchedule
    epochs: int | None = None
    ifo_budget: int | None = None
    inner_mode: str = "geometric"
    output_rule: str = "smooth_sample"
    replacement: str = "finite"
    seed: int = 0
    n_cap: int | None = None
    diagnostics: bool = True

    def __post_init__(self) -> None:
        if (self.epochs is None) == (self.ifo_budget is None):
            raise ParameterError("give exactly one of epochs or ifo_budget")
        if self.epochs is not None and self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.ifo_budget is not None and self.ifo_budget < 1:
            raise ParameterError("ifo_budget must be >= 1")
        if self.inner_mode not in INNER_MODES:
            raise ParameterError(f"inner_mode must be one of {INNER_MODES}")
        if self.output_rule not in OUTPUT_RULES:
            raise ParameterError(f"output_rule must be one of {OUTPUT_RULES}")
        if self.replacement not in REPLACEMENTS:
            raise ParameterError(f"replacement must be one of {REPLACEMENTS}")
        if self.n_cap is not None and self.n_cap < 0:
            raise ParameterError("n_cap must be non-negative")


@dataclass
class EpochRecord:
    j: int
    B: int
    b: int
    eta: float
    N: int
    ifo: int
    f_value: float = math.nan
    grad_norm_sq: float = math.nan
    batch_error_sq: float = math.nan
    clamped: bool = False
    capped: bool = False


@dataclass
class RunTrace:
    method: str
    records: list[EpochRecord] = field(default_factory=list)
    output: np.ndarray | None = None
    output_epoch: int | None = None
    initial_f: float = math.nan
    initial_grad_norm_sq: float = math.nan
    metrics_count: int = 0
    warnings: list[str] = field(default_factory=list)
    anchors: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def total_ifo(self) -> int:
        return self.records[-1].ifo if self.records else 0

    @property
    def epochs(self) -> int:
        return len(self.records)

    def accounting_total(self) -> int:
        """``sum_j (B_j + b_j N_j)``; equals ``total_ifo`` for geometric runs."""
        return sum(r.B + r.b * r.N for r in self.records)

    def best_grad_norm_sq(self, upto_ifo: int | None = None) -> float:
        vals = [r.grad_norm_sq for r in self.records if upto_ifo is None or r.ifo <= upto_ifo]
        vals.append(self.initial_grad_norm_sq)
        return float(np.nanmin(vals))


# --------------------------------------------------------------------------
# one epoch
# --------------------------------------------------------------------------


@dataclass
class EpochOutcome:
    N: int
    cost: int
    batch_grad: np.ndarray
    capped: bool = False


def draw_inner_count(stream: RandomStream, B: int, b: int, inner_mode: str = "geometric",
                     n_cap: int | None = None) -> tuple[int, bool]:
    """Inner-loop length for one epoch from that epoch's stream."""
    if inner_mode == "epoch_pass":
        return -(-B // b), False
    N = sample_geometric(derive_stream(stream, "geom"), GeomParam.from_batch(B, b))
    if n_cap is not None and N > n_cap:
        return n_cap, True
    return N, False


def scsg_epoch(oracle: Oracle, anchor: np.ndarray, B: int, b: int, eta: float, stream: RandomStream,
               inner_mode: str = "geometric", replacement: str = "finite", n_cap: int | None = None,
               num_inner: int | None = None) -> tuple[np.ndarray, EpochOutcome]:
    """One outer iteration: batch gradient at the anchor, then variance-reduced steps.

    Geometric mode runs ``N ~ Geom(B / (B + b))`` steps (``num_inner``
    overrides the draw) on fresh mini-batches from the full index set and
    costs ``B + b N``.  Epoch-pass mode shuffles the outer batch, splits it
    into ``ceil(B / b)`` consecutive pieces and steps once per piece, costing
    ``2 B``.
    """
    anchor = np.asarray(anchor, dtype=float)
    if anchor.shape != (oracle.d,):
        raise ParameterError(f"anchor has shape {anchor.shape}, expected ({oracle.d},)")
    if inner_mode not in INNER_MODES:
        raise ParameterError(f"inner_mode must be one of {INNER_MODES}")
    if not (1 <= b <= B):
        raise ParameterError("need 1 <= b <= B")
    iid = replacement == "streaming" or oracle.streaming
    if not iid and B > oracle.n:
        raise ParameterError(f"batch size {B} exceeds n={oracle.n}")

    capped = False
    if num_inner is None:
        N, capped = draw_inner_count(stream, B, b, inner_mode, n_cap)
    else:
        N = int(num_inner)

    before = oracle.counter.count
    batch = oracle.draw_batch(derive_stream(stream, "batch"), B, replace=iid)
    g = oracle.batch_gradient(batch, anchor)
    x = anchor.copy()
    inner = derive_stream(stream, "inner")

    if inner_mode == "epoch_pass":
        order = inner.generator.permutation(B)
        if isinstance(batch, np.ndarray):
            batch = batch[order]
        else:
            batch = tuple(a[order] for a in batch)
        for k in range(N):
            piece = slice(k * b, min((k + 1) * b, B))
            sub = batch[piece] if isinstance(batch, np.ndarray) else tuple(a[piece] for a in batch)
            gx, g0 = oracle.batch_gradient_pair(sub, x, anchor)
            x -= eta * (gx - g0 + g)
    elif N > 0:
        if oracle.streaming:
            rows = oracle.draw_batch(inner, N * b)
            pieces = (tuple(a[k * b:(k + 1) * b] for a in rows) for k in range(N))
        elif iid:
            pieces = iter(inner.integers(oracle.n, size=(N, b)))
        elif b == 1:
            pieces = iter(inner.integers(oracle.n, size=(N, 1)))
        else:
            pieces = (oracle.draw_batch(inner, b) for _ in range(N))
        for sub in pieces:
            gx, g0 = oracle.batch_gradient_pair(sub, x, anchor)
            x -= eta * (gx - g0 + g)

    cost = oracle.counter.count - before
    return x, EpochOutcome(N=N, cost=cost, batch_grad=g, capped=capped)


# --------------------------------------------------------------------------
# full runs
# --------------------------------------------------------------------------


def _initial_point(oracle: Oracle, x0) -> np.ndarray:
    if x0 is None:
        return np.zeros(oracle.d)
    x0 = np.array(x0, dtype=float)
    if x0.shape != (oracle.d,):
        raise ParameterError(f"x0 has shape {x0.shape}, expected ({oracle.d},)")
    return x0


def run_scsg(oracle: Oracle, config: ScsgConfig, x0=None) -> RunTrace:
    """Algorithm loop over epochs until the epoch count or IFO budget is used up.

    Epochs are atomic: each epoch's inner length is drawn before it starts, and
    an epoch whose full cost would overshoot the IFO budget is not started.
    """
    if config.replacement == "finite" and oracle.streaming:
        raise ParameterError("a streaming oracle needs replacement='streaming'")
    root = RandomStream(config.seed)
    epoch_root = derive_stream(root, "epoch")
    trace = RunTrace(method=config.schedule.name)
    metrics_before = oracle.counter.metrics_count
    start = oracle.counter.count

    x = _initial_point(oracle, x0)
    prev_grad = None
    if config.diagnostics:
        f0, prev_grad = oracle.diagnostics(x)
        trace.initial_f, trace.initial_grad_norm_sq = f0, float(prev_grad @ prev_grad)

    j = 0
    while config.epochs is None or j < config.epochs:
        j += 1
        p = config.schedule(j)
        stream = derive_stream(epoch_root, j)
        N, capped = draw_inner_count(stream, p.B, p.b, config.inner_mode, config.n_cap)
        if config.ifo_budget is not None:
            cost = 2 * p.B if config.inner_mode == "epoch_pass" else p.B + p.b * N
            if j == 1 and p.B > config.ifo_budget:
                raise BudgetError(f"budget too small: {config.ifo_budget} IFO < first batch {p.B}")
            if oracle.counter.count - start + cost > config.ifo_budget:
                break
        x, out = scsg_epoch(oracle, x, p.B, p.b, p.eta, stream, config.inner_mode,
                            config.replacement, num_inner=N)
        rec = EpochRecord(j=j, B=p.B, b=p.b, eta=p.eta, N=out.N, ifo=oracle.counter.count - start,
                          clamped=p.clamped, capped=capped)
        if config.diagnostics:
            err = out.batch_grad - prev_grad
            rec.batch_error_sq = float(err @ err)
            rec.f_value, prev_grad = oracle.diagnostics(x)
            rec.grad_norm_sq = float(prev_grad @ prev_grad)
        if p.clamped:
            trace.warnings.append(f"epoch {j}: batch size raised to {p.B} to keep B >= 8b")
        if capped:
            trace.warnings.append(f"epoch {j}: inner length capped at {config.n_cap}")
        trace.records.append(rec)
        trace.anchors.append(x.copy())

    if not trace.records:
        raise BudgetError(f"budget too small: no epoch fits in {config.ifo_budget} IFO")

    if config.output_rule == "smooth_sample":
        weights = [r.eta * r.B / r.b for r in trace.records]
        k = sample_weighted_index(derive_stream(root, "output"), weights)
    else:
        k = len(trace.records) - 1
    trace.output = trace.anchors[k].copy()
    trace.output_epoch = k + 1
    trace.metrics_count = oracle.counter.metrics_count - metrics_before
    return trace


def run_sgd(oracle: Oracle, batch: int, stepsize: float, seed: int = 0, steps: int | None = None,
            ifo_budget: int | None = None, x0=None, thin: int = 1, replacement: str = "finite",
            diagnostics: bool = True) -> RunTrace:
    """Mini-batch SGD ``x <- x - stepsize * grad_I(x)`` with a fresh batch of size ``batch`` per step."""
    if batch < 1 or not stepsize > 0:
        raise ParameterError("need batch >= 1 and stepsize > 0")
    if (steps is None) == (ifo_budget is None):
        raise ParameterError("give exactly one of steps or ifo_budget")
    if thin < 1:
        raise ParameterError("thin must be >= 1")
    if ifo_budget is not None:
        if ifo_budget < batch:
            raise BudgetError(f"budget too small: {ifo_budget} IFO < batch {batch}")
        steps = ifo_budget // batch
    iid = replacement == "streaming" or oracle.streaming
    if not iid and batch > oracle.n:
        raise ParameterError(f"batch size {batch} exceeds n={oracle.n}")

    root = derive_stream(RandomStream(seed), "sgd")
    trace = RunTrace(method="sgd")
    metrics_before = oracle.counter.metrics_count
    start = oracle.counter.count
    x = _initial_point(oracle, x0)
    if diagnostics:
        f0, g0 = oracle.diagnostics(x)
        trace.initial_f, trace.initial_grad_norm_sq = f0, float(g0 @ g0)
    for s in range(1, steps + 1):
        idx = oracle.draw_batch(derive_stream(root, s), batch, replace=iid)
        x -= stepsize * oracle.batch_gradient(idx, x)
        if s % thin == 0 or s == steps:
            rec = EpochRecord(j=s, B=batch, b=batch, eta=stepsize, N=0, ifo=oracle.counter.count - start)
            if diagnostics:
                rec.f_value, g = oracle.diagnostics(x)
                rec.grad_norm_sq = float(g @ g)
            trace.records.append(rec)
    trace.output = x
    trace.output_epoch = steps
    trace.metrics_count = oracle.counter.metrics_count - metrics_before
    return trace


def svrg_schedule(oracle: Oracle, stepsize_gamma: float) -> EpochSchedule:
    """``B_j = n``, ``b_j = 1``, ``eta = gamma / (L n^(2/3))``."""
    if oracle.streaming:
        raise UnsupportedOperation("SVRG needs a finite n")
    if oracle.L is None:
        raise ParameterError("SVRG stepsize needs L")
    n = oracle.n
    return constant_schedule(n, 1, stepsize_gamma / (oracle.L * n ** (2.0 / 3.0)), name="svrg")


def run_svrg(oracle: Oracle, stepsize_gamma: float, seed: int = 0, epochs: int | None = None,
             ifo_budget: int | None = None, x0=None, output_rule: str = "smooth_sample") -> RunTrace:
    """SCSG at the ``B = n`` corner; the batch error is zero in every epoch."""
    config = ScsgConfig(svrg_schedule(oracle, stepsize_gamma), epochs=epochs, ifo_budget=ifo_budget,
                        output_rule=output_rule, seed=seed)
    trace = run_scsg(oracle, config, x0)
    bad = [r.j for r in trace.records if r.batch_error_sq != 0.0]
    if bad:
        raise AssertionError(f"full-batch epochs {bad} show a non-zero batch error")
    return trace
