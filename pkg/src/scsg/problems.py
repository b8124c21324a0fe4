"""Finite-sum test problems with counted first-order oracle access.

A problem is split into a *model*, which evaluates component values and
gradients on arrays of data rows, and an *oracle*, which owns the data (or a
data generator, for the streaming case) and the IFO counter.  Every gradient
access made by an optimizer goes through :meth:`Oracle.batch_gradient` or
:meth:`Oracle.batch_gradient_pair` and is charged one unit per sampled row.
Diagnostics (objective values and full gradients used for traces) are charged
to a separate metrics counter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import optimize

from .sampling import ParameterError, RandomStream, derive_stream, sample_subset

Data = tuple[np.ndarray, np.ndarray]


class UnsupportedOperation(RuntimeError):
    """The oracle cannot perform the requested access (e.g. a full pass when n is infinite)."""


@dataclass
class IfoCounter:
    """Algorithmic IFO units (``count``) and diagnostic accesses (``metrics_count``)."""

    count: int = 0
    metrics_count: int = 0

    def charge(self, units: int, metrics: bool = False) -> None:
        if metrics:
            self.metrics_count += int(units)
        else:
            self.count += int(units)

    def reset(self) -> None:
        self.count = 0
        self.metrics_count = 0

    def merge(self, other: "IfoCounter") -> None:
        self.count += other.count
        self.metrics_count += other.metrics_count


# --------------------------------------------------------------------------
# models: pure functions of (data rows, point)
# --------------------------------------------------------------------------


class LeastSquaresModel:
    """``f_i(x) = 0.5 * (a_i @ x - y_i)**2``."""

    name = "least_squares"

    def dim(self, data: Data) -> int:
        return data[0].shape[1]

    def values(self, data: Data, x: np.ndarray) -> np.ndarray:
        A, y = data
        return 0.5 * (A @ x - y) ** 2

    def grads(self, data: Data, x: np.ndarray) -> np.ndarray:
        A, y = data
        return (A @ x - y)[:, None] * A

    def mean_grad(self, data: Data, x: np.ndarray) -> np.ndarray:
        A, y = data
        return A.T @ (A @ x - y) / len(y)


class LogisticModel:
    """Logistic loss plus the non-convex penalty ``lam * sum(x_k**2 / (1 + x_k**2))``."""

    name = "logistic"

    def __init__(self, lam: float):
        self.lam = float(lam)

    def dim(self, data: Data) -> int:
        return data[0].shape[1]

    def _penalty(self, x):
        x2 = x * x
        return self.lam * np.sum(x2 / (1.0 + x2))

    def _penalty_grad(self, x):
        return self.lam * 2.0 * x / (1.0 + x * x) ** 2

    def values(self, data: Data, x: np.ndarray) -> np.ndarray:
        A, y = data
        return np.logaddexp(0.0, -y * (A @ x)) + self._penalty(x)

    def grads(self, data: Data, x: np.ndarray) -> np.ndarray:
        A, y = data
        # d/dm log(1 + exp(-m)) = -sigmoid(-m)
        s = -y * _sigmoid(-y * (A @ x))
        return s[:, None] * A + self._penalty_grad(x)

    def mean_grad(self, data: Data, x: np.ndarray) -> np.ndarray:
        A, y = data
        s = -y * _sigmoid(-y * (A @ x))
        return A.T @ s / len(y) + self._penalty_grad(x)


def _sigmoid(m):
    return 0.5 * (1.0 + np.tanh(0.5 * m))


class MlpModel:
    """One hidden tanh layer, scalar output, squared loss.

    The parameter vector is laid out as ``[W1 (h x p, row-major), b1 (h), w2 (h), b2]``.
    """

    name = "mlp"

    def __init__(self, input_dim: int, hidden_dim: int):
        self.p = int(input_dim)
        self.h = int(hidden_dim)

    @property
    def size(self) -> int:
        return self.h * (self.p + 1) + self.h + 1

    def dim(self, data: Data) -> int:
        return self.size

    def unpack(self, x: np.ndarray):
        h, p = self.h, self.p
        W1 = x[: h * p].reshape(h, p)
        b1 = x[h * p : h * p + h]
        w2 = x[h * p + h : h * p + 2 * h]
        b2 = x[-1]
        return W1, b1, w2, b2

    def forward(self, X: np.ndarray, x: np.ndarray):
        W1, b1, w2, b2 = self.unpack(x)
        z = np.tanh(X @ W1.T + b1)
        return z, z @ w2 + b2

    def values(self, data: Data, x: np.ndarray) -> np.ndarray:
        X, t = data
        _, out = self.forward(X, x)
        return 0.5 * (out - t) ** 2

    def grads(self, data: Data, x: np.ndarray) -> np.ndarray:
        X, t = data
        _, b1, w2, _ = self.unpack(x)
        z, out = self.forward(X, x)
        delta = out - t  # (k,)
        dz = delta[:, None] * w2 * (1.0 - z * z)  # (k, h)
        k = len(t)
        dW1 = (dz[:, :, None] * X[:, None, :]).reshape(k, -1)
        return np.concatenate([dW1, dz, delta[:, None] * z, delta[:, None]], axis=1)

    def mean_grad(self, data: Data, x: np.ndarray) -> np.ndarray:
        X, t = data
        z, out = self.forward(X, x)
        _, _, w2, _ = self.unpack(x)
        k = len(t)
        delta = (out - t) / k
        dz = delta[:, None] * w2 * (1.0 - z * z)
        return np.concatenate([(dz.T @ X).ravel(), dz.sum(axis=0), z.T @ delta, [delta.sum()]])


# --------------------------------------------------------------------------
# oracles
# --------------------------------------------------------------------------


@dataclass(eq=False)
class Oracle:
    """Common surface of finite-sum and streaming oracles.

    ``L``, ``mu``, ``f_star`` and ``h_star`` are ``None`` when unknown; names
    listed in ``estimated`` hold estimates rather than guarantees.
    """

    model: Any
    d: int
    L: float | None = None
    mu: float | None = None
    f_star: float | None = None
    h_star: float | None = None
    estimated: set = field(default_factory=set)
    counter: IfoCounter = field(default_factory=IfoCounter)
    info: dict = field(default_factory=dict)

    n: int | None = None

    @property
    def streaming(self) -> bool:
        return self.n is None

    def _rows(self, batch) -> Data:
        raise NotImplementedError

    @staticmethod
    def batch_size(batch) -> int:
        if isinstance(batch, np.ndarray):
            return len(batch)
        return len(batch[1])

    def draw_batch(self, stream: RandomStream, size: int, replace: bool = False):
        raise NotImplementedError

    # counted access -------------------------------------------------------

    def component(self, i, x: np.ndarray) -> tuple[float, np.ndarray]:
        """Value and gradient of a single component; one IFO unit."""
        rows = self._rows(np.array([i]) if np.isscalar(i) else i)
        self.counter.charge(1)
        return float(self.model.values(rows, x)[0]), self.model.grads(rows, x)[0]

    def batch_gradient(self, batch, x: np.ndarray) -> np.ndarray:
        k = self.batch_size(batch)
        if k == 0:
            raise ParameterError("batch must be non-empty")
        self.counter.charge(k)
        return self.model.mean_grad(self._rows(batch), x)

    def batch_gradient_pair(self, batch, x: np.ndarray, y: np.ndarray):
        """Mini-batch gradients at two points on the same sampled rows.

        Charged ``|batch|`` units: one per sampled row, matching the
        per-step cost ``b`` used in the expected-cost identity.
        """
        k = self.batch_size(batch)
        if k == 0:
            raise ParameterError("batch must be non-empty")
        self.counter.charge(k)
        rows = self._rows(batch)
        return self.model.mean_grad(rows, x), self.model.mean_grad(rows, y)

    # diagnostics ------------------------------------------------------------

    def diagnostics(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        """Objective value and gradient for traces; charged to the metrics counter."""
        raise NotImplementedError


@dataclass(eq=False)
class FiniteSumOracle(Oracle):
    """``f(x) = mean_i f_i(x)`` over a stored dataset of ``n`` rows."""

    data: Data | None = None

    def __post_init__(self) -> None:
        if self.data is None:
            raise ParameterError("finite-sum oracle needs data")
        self.n = len(self.data[1])
        self._all = np.arange(self.n)

    def _rows(self, batch) -> Data:
        A, y = self.data
        return A[batch], y[batch]

    def draw_batch(self, stream: RandomStream, size: int, replace: bool = False):
        if replace:
            return stream.integers(self.n, size=size)
        return sample_subset(stream, self.n, size)

    def full_gradient(self, x: np.ndarray, counted: bool = False) -> np.ndarray:
        self.counter.charge(self.n, metrics=not counted)
        return self.model.mean_grad(self._rows(self._all), x)

    def value(self, x: np.ndarray) -> float:
        self.counter.charge(self.n, metrics=True)
        return float(np.mean(self.model.values(self.data, x)))

    def component_gradients(self, x: np.ndarray) -> np.ndarray:
        """All ``n`` component gradients as rows; diagnostic access."""
        self.counter.charge(self.n, metrics=True)
        return self.model.grads(self.data, x)

    def diagnostics(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        # one (value, gradient) pair per component
        self.counter.charge(self.n, metrics=True)
        rows = self._rows(self._all)
        return float(np.mean(self.model.values(rows, x))), self.model.mean_grad(rows, x)


@dataclass(eq=False)
class StreamingOracle(Oracle):
    """``f(x) = E_xi f(x; xi)`` with fresh i.i.d. rows drawn on demand (``n`` infinite).

    Diagnostics use a held-out evaluation sample fixed at construction.
    """

    sampler: Callable[[np.random.Generator, int], Data] | None = None
    holdout: Data | None = None

    def __post_init__(self) -> None:
        if self.sampler is None or self.holdout is None:
            raise ParameterError("streaming oracle needs a sampler and a held-out sample")
        self.n = None

    def _rows(self, batch) -> Data:
        return batch

    def draw_batch(self, stream: RandomStream, size: int, replace: bool = True):
        return self.sampler(stream.generator, size)

    def full_gradient(self, x: np.ndarray, counted: bool = False) -> np.ndarray:
        raise UnsupportedOperation("full gradient is undefined for a streaming oracle")

    def diagnostics(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        k = len(self.holdout[1])
        self.counter.charge(k, metrics=True)
        return float(np.mean(self.model.values(self.holdout, x))), self.model.mean_grad(self.holdout, x)

    def component_gradients(self, x: np.ndarray) -> np.ndarray:
        self.counter.charge(len(self.holdout[1]), metrics=True)
        return self.model.grads(self.holdout, x)


def full_gradient(oracle: Oracle, x: np.ndarray, counted: bool = False) -> np.ndarray:
    if oracle.streaming:
        raise UnsupportedOperation("full gradient is undefined for a streaming oracle")
    return oracle.full_gradient(x, counted=counted)


def batch_gradient(oracle: Oracle, indices, x: np.ndarray) -> np.ndarray:
    if not oracle.streaming:
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim != 1 or indices.size == 0:
            raise ParameterError("indices must be a non-empty 1-d index set")
        if indices.min() < 0 or indices.max() >= oracle.n:
            raise ParameterError("index out of range")
    return oracle.batch_gradient(indices, x)


# --------------------------------------------------------------------------
# least squares
# --------------------------------------------------------------------------


def least_squares_h_star(A: np.ndarray, y: np.ndarray, center: np.ndarray, radius: float) -> float:
    """Exact ``sup`` of the component-gradient variance over a Euclidean ball.

    The variance is a convex quadratic in ``x``; its maximum over the ball sits
    on the sphere and is found from the trust-region secular equation.
    """
    n, d = A.shape
    M = A[:, :, None] * A[:, None, :]
    c = A * y[:, None]
    P = M - M.mean(axis=0)
    r = np.einsum("ijk,k->ij", P, center) - (c - c.mean(axis=0))
    Q = np.einsum("ikj,ikl->jl", P, P) / n
    q = np.einsum("ikj,ik->j", P, r) / n
    s = float(np.mean(np.sum(r * r, axis=1)))
    if radius == 0:
        return s
    lam, U = np.linalg.eigh(Q)
    w = U.T @ q
    top = lam[-1]
    scale = max(1.0, abs(top))
    gap = lam - top
    degenerate = np.abs(gap) <= 1e-12 * scale

    def norm2(theta):
        return float(np.sum(w**2 / (theta - lam) ** 2))

    def hard_case():
        # theta = top; the slack norm goes into the top eigenspace
        z = np.zeros(d)
        z[~degenerate] = w[~degenerate] / (top - lam[~degenerate])
        rest = radius**2 - float(np.sum(z**2))
        if rest < 0:
            return None
        z[np.flatnonzero(degenerate)[0]] = math.sqrt(rest)
        return float(np.sum(lam * z * z) + 2 * w @ z + s)

    if np.all(np.abs(w[degenerate]) <= 1e-14 * max(1.0, np.abs(w).max())):
        value = hard_case()
        if value is not None:
            return value
    hi = top + np.linalg.norm(w) / radius + scale
    while norm2(hi) > radius**2:
        hi = top + 2 * (hi - top)
    lo = top + 1e-15 * scale
    if not norm2(lo) > radius**2:
        value = hard_case()
        if value is not None:
            return value
    theta = optimize.brentq(lambda t: norm2(t) - radius**2, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    z = w / (theta - lam)
    return float(np.sum(lam * z * z) + 2 * w @ z + s)


def least_squares_oracle(A, y, h_star_center=None, h_star_radius: float | None = None) -> FiniteSumOracle:
    """Least-squares oracle on explicit data, with exact ``L``, ``mu`` and ``f*``.

    ``h_star`` is declared on the ball of radius ``h_star_radius`` around
    ``h_star_center`` (default: around the minimiser, radius
    ``2 * max(|x*|, 1)``, which contains the origin).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = A.shape
    if len(y) != n:
        raise ParameterError("A and y disagree on n")
    if d > n:
        raise ParameterError("least squares needs n >= d so that the P-L constant is positive")
    cov = A.T @ A / n
    mu = float(np.linalg.eigvalsh(cov)[0])
    if not mu > 0:
        raise ParameterError("design is rank deficient; P-L constant would be zero")
    x_star = np.linalg.solve(cov, A.T @ y / n)
    f_star = float(0.5 * np.mean((A @ x_star - y) ** 2))
    L = float(np.max(np.sum(A * A, axis=1)))
    center = x_star if h_star_center is None else np.asarray(h_star_center, dtype=float)
    radius = 2.0 * max(float(np.linalg.norm(x_star)), 1.0) if h_star_radius is None else float(h_star_radius)
    h_star = least_squares_h_star(A, y, center, radius)
    return FiniteSumOracle(
        model=LeastSquaresModel(),
        d=d,
        L=L,
        mu=mu,
        f_star=f_star,
        h_star=h_star,
        data=(A, y),
        info={"x_star": x_star, "h_star_center": center, "h_star_radius": radius},
    )


def make_least_squares(stream: RandomStream, n: int, d: int, condition: float = 10.0,
                       noise: float = 0.5, h_star_radius: float | None = None) -> FiniteSumOracle:
    """Synthetic least squares whose average Hessian has condition number ``condition``.

    Eigenvalues of ``A.T @ A / n`` are spread geometrically over
    ``[1 / condition, 1]``.
    """
    if not (n >= d >= 1):
        raise ParameterError(f"need n >= d >= 1, got n={n}, d={d}")
    if not condition >= 1:
        raise ParameterError("condition must be >= 1")
    g = derive_stream(stream, "least_squares")
    Q, _ = np.linalg.qr(g.normal((n, d)))
    V, _ = np.linalg.qr(g.normal((d, d)))
    spectrum = condition ** (-np.linspace(1.0, 0.0, d)) if d > 1 else np.array([1.0])
    A = math.sqrt(n) * (Q * np.sqrt(spectrum)) @ V.T
    x_true = g.normal(d)
    y = A @ x_true + noise * g.normal(n)
    oracle = least_squares_oracle(A, y, h_star_radius=h_star_radius)
    oracle.info["condition"] = float(condition)
    return oracle


def make_streaming_least_squares(stream: RandomStream, d: int, condition: float = 10.0,
                                 noise: float = 0.5, holdout: int = 2000) -> StreamingOracle:
    """Least squares under a population law; rows are ``V @ (s * r)`` with Rademacher ``r``.

    Every row has squared norm ``sum(s**2)``, so ``L`` is exact; the noise is
    uniform on ``[-noise, noise]``, so ``f* = noise**2 / 6``.
    """
    if d < 1 or not condition >= 1:
        raise ParameterError("need d >= 1 and condition >= 1")
    g = derive_stream(stream, "streaming_least_squares")
    V, _ = np.linalg.qr(g.normal((d, d)))
    s = np.sqrt(condition ** (-np.linspace(1.0, 0.0, d))) if d > 1 else np.array([1.0])
    x_true = g.normal(d)

    def sampler(gen: np.random.Generator, size: int) -> Data:
        r = gen.choice(np.array([-1.0, 1.0]), size=(size, d))
        A = (r * s) @ V.T
        return A, A @ x_true + gen.uniform(-noise, noise, size=size)

    held = sampler(derive_stream(g, "holdout").generator, holdout)
    return StreamingOracle(
        model=LeastSquaresModel(),
        d=d,
        L=float(np.sum(s * s)),
        mu=float(np.min(s * s)),
        f_star=noise**2 / 6.0,
        sampler=sampler,
        holdout=held,
        info={"x_star": x_true, "condition": float(condition)},
    )


# --------------------------------------------------------------------------
# non-convex logistic regression
# --------------------------------------------------------------------------


def logistic_oracle(A, y, lam: float) -> FiniteSumOracle:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if lam < 0:
        raise ParameterError("lambda must be non-negative")
    L = 0.25 * float(np.max(np.sum(A * A, axis=1))) + 2.0 * lam
    return FiniteSumOracle(model=LogisticModel(lam), d=A.shape[1], L=L, data=(A, y), info={"lambda": lam})


def make_nonconvex_logistic(stream: RandomStream, n: int, d: int, lam: float = 0.1,
                            flip: float = 0.1) -> FiniteSumOracle:
    """Separable-plus-noise binary classification with labels in {-1, +1}.

    Labels follow the sign of a random linear teacher and are flipped with
    probability ``flip``.
    """
    if n < 1 or d < 1:
        raise ParameterError("need n >= 1 and d >= 1")
    if not lam > 0:
        raise ParameterError("lambda must be positive")
    g = derive_stream(stream, "logistic")
    A = g.normal((n, d))
    w = g.normal(d)
    y = np.where(A @ w >= 0, 1.0, -1.0)
    y[g.uniform(n) <= flip] *= -1.0
    return logistic_oracle(A, y, lam)


# --------------------------------------------------------------------------
# one-hidden-layer network
# --------------------------------------------------------------------------


def make_mlp(stream: RandomStream, n: int, input_dim: int, hidden_dim: int,
             noise: float = 0.1) -> FiniteSumOracle:
    """Regression with a tanh network; targets come from a random teacher network.

    ``L`` is unknown for this problem; estimate it with
    :func:`scsg.analysis.estimate_lipschitz` if a schedule needs it.
    """
    if n < 1 or input_dim < 1 or hidden_dim < 1:
        raise ParameterError("dimensions and n must be >= 1")
    g = derive_stream(stream, "mlp")
    model = MlpModel(input_dim, hidden_dim)
    X = g.normal((n, input_dim))
    teacher = g.normal(model.size) / math.sqrt(input_dim)
    _, t = model.forward(X, teacher)
    t = t + noise * g.normal(n)
    return FiniteSumOracle(model=model, d=model.size, data=(X, t),
                           info={"input_dim": input_dim, "hidden_dim": hidden_dim})
