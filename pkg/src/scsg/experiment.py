"""Turn config specs into oracles and runs.

Kept separate from the CLI so scripts and tests can drive single jobs
without touching the filesystem.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

from . import analysis
from .config import ConfigError, MethodSpec, ProblemSpec
from .optimizer import (
    THEORY_GAMMA,
    EpochSchedule,
    RunTrace,
    ScsgConfig,
    constant_schedule,
    practical_schedule,
    run_scsg,
    run_sgd,
    schedule_version1,
    schedule_version2,
    schedule_version3,
    version2_batch,
)
from .problems import (
    Oracle,
    make_least_squares,
    make_mlp,
    make_nonconvex_logistic,
    make_streaming_least_squares,
)
from .sampling import RandomStream

log = logging.getLogger(__name__)


def build_problem(spec: ProblemSpec) -> Oracle:
    stream = RandomStream(spec.seed, ("problem", spec.kind))
    opt = {}
    if spec.kind == "least_squares":
        for key in ("condition", "noise"):
            if getattr(spec, key) is not None:
                opt[key] = getattr(spec, key)
        if spec.d > spec.n:
            raise ConfigError("problem: least_squares needs d <= n")
        return make_least_squares(stream, spec.n, spec.d, **opt)
    if spec.kind == "streaming_least_squares":
        for key in ("condition", "noise", "holdout"):
            if getattr(spec, key) is not None:
                opt[key] = getattr(spec, key)
        return make_streaming_least_squares(stream, spec.d, **opt)
    if spec.kind == "logistic":
        if spec.lam is not None:
            opt["lam"] = spec.lam
        return make_nonconvex_logistic(stream, spec.n, spec.d, **opt)
    if spec.noise is not None:
        opt["noise"] = spec.noise
    return make_mlp(stream, spec.n, spec.input_dim, spec.hidden_dim, **opt)


@dataclass
class Constants:
    values: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)

    @property
    def advisory(self) -> bool:
        return any(s == "estimate" for s in self.sources.values())

    def to_dict(self) -> dict:
        out = dict(self.values)
        out.update({f"{k}_source": v for k, v in self.sources.items()})
        return out


def _resolve(oracle: Oracle, name: str, requested, consts: Constants, data_seed: int) -> float:
    if name in consts.values:
        return consts.values[name]
    declared = {"L": oracle.L, "h_star": oracle.h_star, "mu": oracle.mu}[name]
    if requested is None:
        requested = "exact" if declared is not None else "estimate"
    if isinstance(requested, (int, float)):
        value, source = float(requested), "given"
    elif requested == "exact":
        if declared is None:
            raise ConfigError(f"constant {name}: problem declares no exact value; use 'estimate' or a number")
        value, source = float(declared), "exact"
    else:
        stream = RandomStream(data_seed, ("estimate", name))
        if name == "L":
            value = analysis.estimate_lipschitz(oracle, stream)
        elif name == "h_star":
            value = analysis.estimate_h_star(oracle, analysis.probe_points(oracle, stream))
        else:
            raise ConfigError("constant mu: no estimator; give a number or 'exact'")
        source = "estimate"
        log.info("estimated %s = %.6g", name, value)
    consts.values[name], consts.sources[name] = value, source
    return value


def build_schedule(oracle: Oracle, m: MethodSpec, consts: Constants, data_seed: int) -> EpochSchedule:
    version = m.version or "custom"
    gamma = m.gamma if m.gamma is not None else THEORY_GAMMA
    literal = bool(m.literal)
    n = oracle.n

    def stepsize() -> float | None:
        if m.stepsize is not None:
            return m.stepsize
        if m.stepsize_over_L is not None:
            return m.stepsize_over_L / _resolve(oracle, "L", m.L, consts, data_seed)
        return None

    practical = m.minibatch is not None or m.minibatch_divisor is not None
    if version == "custom" or practical:
        if version == "custom":
            def rule(j, B=m.batch):
                return B
        elif version == "v2":
            def rule(j):
                return version2_batch(j, m.log_mu)
        else:
            rule = build_schedule(oracle, MethodSpec(name=m.name, kind="scsg", version=version, epsilon=m.epsilon,
                                                     L=m.L, h_star=m.h_star, mu=m.mu, gamma=m.gamma,
                                                     literal=True), consts, data_seed).rule
            rule = (lambda base: (lambda j: base(j).B))(rule)
        eta = stepsize()
        if eta is None:
            raise ConfigError(f"method {m.name}: minibatch settings need stepsize or stepsize_over_L")
        divisor = m.minibatch_divisor
        minibatch = None if divisor is not None else (m.minibatch or 1)
        return practical_schedule(rule, eta, n, minibatch=minibatch, divisor=divisor, name=m.name)

    L = _resolve(oracle, "L", m.L, consts, data_seed)
    if version == "v1":
        sched = schedule_version1(m.epsilon, _resolve(oracle, "h_star", m.h_star, consts, data_seed), L, n,
                                  gamma=gamma, literal=literal)
    elif version == "v2":
        sched = schedule_version2(L, n, log_mu=m.log_mu, gamma=gamma, literal=literal)
    else:
        sched = schedule_version3(m.epsilon, _resolve(oracle, "h_star", m.h_star, consts, data_seed), L,
                                  _resolve(oracle, "mu", m.mu, consts, data_seed), n, gamma=gamma,
                                  literal=literal)
    eta = stepsize()
    if eta is not None:
        sched = sched.with_stepsize(eta)
    return dataclasses.replace(sched, name=m.name)


@dataclass
class JobResult:
    method: str
    seed: int
    trace: RunTrace
    constants: Constants
    output_f: float
    output_grad_norm_sq: float


def run_method(oracle: Oracle, m: MethodSpec, budget: dict, seed: int, data_seed: int = 0) -> JobResult:
    """Run one (method, seed) job on a fresh oracle counter."""
    oracle.counter.reset()
    consts = Constants()
    ifo = None
    if "ifo" in budget:
        ifo = int(budget["ifo"])
    elif "passes" in budget:
        ifo = int(round(budget["passes"] * oracle.n))
    epochs = budget.get("epochs")
    replacement = m.replacement or ("streaming" if oracle.streaming else "finite")

    if m.kind == "sgd":
        eta = m.stepsize if m.stepsize is not None else m.stepsize_over_L / _resolve(oracle, "L", m.L, consts,
                                                                                      data_seed)
        trace = run_sgd(oracle, m.batch, eta, seed=seed, steps=epochs, ifo_budget=ifo, thin=m.thin or 1,
                        replacement=replacement)
    elif m.kind == "svrg":
        if oracle.streaming:
            raise ConfigError(f"method {m.name}: svrg needs a finite problem")
        if m.stepsize is not None:
            eta = m.stepsize
        else:
            L = _resolve(oracle, "L", m.L, consts, data_seed)
            if m.stepsize_over_L is not None:
                eta = m.stepsize_over_L / L
            else:
                eta = (m.gamma if m.gamma is not None else THEORY_GAMMA) / (L * oracle.n ** (2.0 / 3.0))
        cfg = ScsgConfig(constant_schedule(oracle.n, 1, eta, name="svrg"), epochs=epochs, ifo_budget=ifo,
                         output_rule=m.output_rule or "smooth_sample", seed=seed)
        trace = run_scsg(oracle, cfg)
        if any(r.batch_error_sq != 0.0 for r in trace.records):
            raise AssertionError("full-batch epoch with non-zero batch error")
    else:
        sched = build_schedule(oracle, m, consts, data_seed)
        cfg = ScsgConfig(sched, epochs=epochs, ifo_budget=ifo, inner_mode=m.inner_mode or "geometric",
                         output_rule=m.output_rule or "smooth_sample", replacement=replacement, seed=seed,
                         n_cap=m.n_cap)
        trace = run_scsg(oracle, cfg)
    trace.method = m.name
    f_out, g_out = oracle.diagnostics(trace.output)
    return JobResult(m.name, seed, trace, consts, float(f_out), float(g_out @ g_out))
