"""Equality-constrained stochastic test problems and LIBSVM data ingestion."""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import kernels as K
from .sampling import SampleSet


class ParseError(ValueError):
    pass


class Problem:
    """Oracle bundle for ``min E[F(x, xi)]  s.t.  c(x) = 0``.

    Subclasses implement ``f_true``, ``g_true``, ``c``, ``jac`` and either
    ``g_samples`` or ``g_sample``. ``n_samples`` is the number of terms of a
    finite sum, or ``None`` for an unbounded sampling population.
    """

    name = "problem"
    n: int
    m: int
    n_samples: Optional[int] = None
    x0: np.ndarray
    x_star: Optional[np.ndarray] = None

    def f_true(self, x) -> float:
        raise NotImplementedError

    def g_true(self, x) -> np.ndarray:
        raise NotImplementedError

    def c(self, x) -> np.ndarray:
        raise NotImplementedError

    def jac(self, x) -> np.ndarray:
        raise NotImplementedError

    def g_sample(self, x, i, rng=None) -> np.ndarray:
        """Gradient of the ``i``-th term (finite sum) or of one fresh draw."""
        idx = None if i is None else np.array([i], dtype=np.int64)
        return self.g_samples(x, SampleSet(1, idx), rng)[0]

    def g_samples(self, x, sample: SampleSet, rng) -> np.ndarray:
        """Per-sample gradients, one row per draw."""
        raise NotImplementedError


class DeterministicProblem(Problem):
    """Smooth problem whose every sample returns the exact gradient."""

    def g_samples(self, x, sample, rng):
        return np.tile(self.g_true(x), (sample.size, 1))


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray  # n x N, one column per example
    y: np.ndarray  # N labels in {-1, +1}

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[1] != y.shape[0]:
            raise ValueError(f"inconsistent dataset shapes X{X.shape}, y{y.shape}")
        if not np.all(np.abs(y) == 1.0):
            raise ValueError("labels must be exactly -1 or +1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n_features(self) -> int:
        return self.X.shape[0]

    @property
    def n_examples(self) -> int:
        return self.X.shape[1]


_PAIR = re.compile(r"^(\d+):(\S+)$")


def _map_labels(raw, path):
    values = sorted(set(raw))
    if set(values) <= {-1.0, 1.0}:
        return np.array(raw)
    if len(values) > 2:
        raise ParseError(f"{path}: expected binary labels, found {len(values)} classes")
    if len(values) == 1:
        raise ParseError(f"{path}: single label value {values[0]} cannot be mapped to +/-1")
    lo, hi = values
    return np.where(np.array(raw) == hi, 1.0, -1.0)


def load_libsvm(path, n_features: Optional[int] = None) -> Dataset:
    """Read ``label idx:val ...`` lines (1-based ascending indices) into a dense Dataset."""
    labels, rows = [], []
    width = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                label = float(tokens[0])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad label {tokens[0]!r}") from None
            feats = {}
            last = 0
            for tok in tokens[1:]:
                mt = _PAIR.match(tok)
                if mt is None:
                    raise ParseError(f"{path}:{lineno}: bad feature token {tok!r}")
                idx = int(mt.group(1))
                if idx < 1 or idx <= last:
                    raise ParseError(f"{path}:{lineno}: indices must be 1-based and ascending")
                try:
                    feats[idx] = float(mt.group(2))
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad feature value {mt.group(2)!r}") from None
                last = idx
            width = max(width, last)
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise ParseError(f"{path}: no examples")
    if n_features is not None:
        if n_features < width:
            raise ParseError(f"{path}: feature index {width} exceeds n_features={n_features}")
        width = n_features
    X = np.zeros((width, len(rows)))
    for j, feats in enumerate(rows):
        for idx, val in feats.items():
            X[idx - 1, j] = val
    return Dataset(X, _map_labels(labels, path))


def write_libsvm(path, ds: Dataset) -> None:
    with open(path, "w") as fh:
        for j in range(ds.n_examples):
            col = ds.X[:, j]
            parts = ["+1" if ds.y[j] > 0 else "-1"]
            parts += [f"{i + 1}:{float(col[i])!r}" for i in np.flatnonzero(col)]
            fh.write(" ".join(parts) + "\n")


def make_synthetic_dataset(n_examples: int, n_features: int, seed: int = 0, label_noise: float = 0.1) -> Dataset:
    """Gaussian features with labels from a noisy linear classifier."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n_features, n_examples))
    w = rng.standard_normal(n_features)
    y = np.where(w @ X >= 0, 1.0, -1.0)
    flip = rng.random(n_examples) < label_noise
    y[flip] = -y[flip]
    return Dataset(X, y)


def min_singular_value(J) -> float:
    J = np.atleast_2d(J)
    return float(np.linalg.svd(J, compute_uv=False)[-1]) if J.shape[0] else math.inf


class LogisticConstrainedProblem(Problem):
    """Finite-sum logistic loss with ``A x = b1`` and ``||x||^2 = b2``."""

    def __init__(self, ds: Dataset, A, b1, b2: float = 1.0, name: str = "logistic"):
        self.ds = ds
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b1 = np.asarray(b1, dtype=float)
        self.b2 = float(b2)
        self.name = name
        self.n = ds.n_features
        self.m = self.A.shape[0] + 1
        self.n_samples = ds.n_examples
        self.x0 = np.ones(self.n)
        self._XT = np.ascontiguousarray(ds.X.T)
        self._labels = np.ascontiguousarray(ds.y)
        sv = min_singular_value(self.jac(self.x0))
        if sv <= 1e-8:
            warnings.warn(f"{name}: constraint Jacobian is rank deficient at x0 (min sv {sv:.2e})")

    def _margins(self, x):
        return self._labels * (self._XT @ x)

    def f_true(self, x):
        return float(np.mean(np.logaddexp(0.0, -self._margins(x))))

    def g_true(self, x):
        z = np.clip(self._margins(x), -30.0, 30.0)
        coef = -self._labels / (1.0 + np.exp(z))
        return self._XT.T @ coef / self.n_samples

    def g_samples(self, x, sample, rng=None):
        if sample.indices is None:
            raise ValueError("finite-sum problem needs sample indices")
        return K.logistic_grads(self._XT, self._labels, np.ascontiguousarray(x, dtype=float), sample.indices)

    def c(self, x):
        x = np.asarray(x, dtype=float)
        return np.concatenate([self.A @ x - self.b1, [x @ x - self.b2]])

    def jac(self, x):
        x = np.asarray(x, dtype=float)
        return np.vstack([self.A, 2.0 * x])


def logistic_sample_gradient(ds: Dataset, x, i: int) -> np.ndarray:
    """Gradient of ``log(1 + exp(-y_i X_i^T x))``."""
    z = float(np.clip(ds.y[i] * (ds.X[:, i] @ x), -30.0, 30.0))
    return -ds.y[i] * ds.X[:, i] / (1.0 + math.exp(z))


def build_logistic_problem(ds: Dataset, m_lin: Optional[int] = None, seed: int = 0, b2: float = 1.0,
                           name: str = "logistic") -> LogisticConstrainedProblem:
    """Attach standard-normal linear constraints and a norm constraint to ``ds``."""
    n = ds.n_features
    if m_lin is None:
        m_lin = math.ceil(n / 4)
    if m_lin + 1 > n:
        raise ValueError(f"{m_lin} linear constraints plus the norm constraint exceed n={n}")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m_lin, n))
    b1 = rng.standard_normal(m_lin)
    if m_lin and not linear_sphere_feasible(A, b1, b2):
        warnings.warn(f"{name}: A x = b1 misses the sphere ||x||^2 = {b2}; the instance is infeasible")
    return LogisticConstrainedProblem(ds, A, b1, b2, name=name)


def linear_sphere_feasible(A, b1, b2: float) -> bool:
    """True when the minimum-norm solution of ``A x = b1`` lies inside ``||x||^2 <= b2``."""
    x_min = np.linalg.lstsq(np.atleast_2d(A), b1, rcond=None)[0]
    return float(x_min @ x_min) <= b2


class AdditiveNoiseProblem(Problem):
    """Wraps a deterministic problem: each draw returns ``grad f(x) + N(0, eps I)``."""

    def __init__(self, inner: Problem, eps_noise: float = 0.1):
        if eps_noise < 0:
            raise ValueError("eps_noise must be nonnegative")
        self.inner = inner
        self.eps_noise = float(eps_noise)
        self.name = inner.name
        self.n, self.m = inner.n, inner.m
        self.n_samples = None
        self.x0 = inner.x0
        self.x_star = inner.x_star

    def f_true(self, x):
        return self.inner.f_true(x)

    def g_true(self, x):
        return self.inner.g_true(x)

    def c(self, x):
        return self.inner.c(x)

    def jac(self, x):
        return self.inner.jac(x)

    def g_samples(self, x, sample, rng):
        g = self.inner.g_true(x)
        if self.eps_noise == 0.0:
            return np.tile(g, (sample.size, 1))
        return g + math.sqrt(self.eps_noise) * rng.standard_normal((sample.size, self.n))


def noisy_sample_gradient(p: AdditiveNoiseProblem, x, rng) -> np.ndarray:
    return p.g_samples(x, SampleSet(1), rng)[0]


# ---------------------------------------------------------------------------
# synthetic suite


class QuadraticProblem(DeterministicProblem):
    """``min 1/2 x'Qx + q'x  s.t.  Ax = b`` with its KKT point precomputed."""

    def __init__(self, Q, q, A, b, x0, name="qp"):
        self.Q, self.q, self.A, self.b = (np.asarray(a, dtype=float) for a in (Q, q, A, b))
        self.n, self.m = self.Q.shape[0], self.A.shape[0]
        self.x0 = np.asarray(x0, dtype=float)
        self.name = name
        kkt = np.block([[self.Q, self.A.T], [self.A, np.zeros((self.m, self.m))]])
        sol = np.linalg.solve(kkt, np.concatenate([-self.q, self.b]))
        self.x_star = sol[: self.n]
        self.y_star = sol[self.n:]

    def f_true(self, x):
        return float(0.5 * x @ self.Q @ x + self.q @ x)

    def g_true(self, x):
        return self.Q @ x + self.q

    def c(self, x):
        return self.A @ x - self.b

    def jac(self, x):
        return self.A


class RosenbrockProblem(DeterministicProblem):
    """Chained Rosenbrock objective (scaled by 1/n) with linear equality constraints."""

    def __init__(self, A, b, x0, name="rosen"):
        self.A, self.b = np.asarray(A, dtype=float), np.asarray(b, dtype=float)
        self.n, self.m = self.A.shape[1], self.A.shape[0]
        self.x0 = np.asarray(x0, dtype=float)
        self.name = name
        self._scale = 1.0 / self.n

    def f_true(self, x):
        u = x[1:] - x[:-1] ** 2
        v = 1.0 - x[:-1]
        return float(self._scale * np.sum(100.0 * u * u + v * v))

    def g_true(self, x):
        u = x[1:] - x[:-1] ** 2
        v = 1.0 - x[:-1]
        g = np.zeros_like(x)
        g[:-1] += -400.0 * x[:-1] * u - 2.0 * v
        g[1:] += 200.0 * u
        return self._scale * g

    def c(self, x):
        return self.A @ x - self.b

    def jac(self, x):
        return self.A


class SphereQuadraticProblem(DeterministicProblem):
    """``min 1/2 x'Qx + q'x  s.t.  ||x||^2 = radius^2`` with its global minimizer."""

    def __init__(self, Q, q, radius, x0, name="sphere"):
        self.Q, self.q = np.asarray(Q, dtype=float), np.asarray(q, dtype=float)
        self.radius = float(radius)
        self.n, self.m = self.Q.shape[0], 1
        self.x0 = np.asarray(x0, dtype=float)
        self.name = name
        self.x_star = self._global_solution()

    def _global_solution(self):
        lam, V = np.linalg.eigh(self.Q)
        qt = V.T @ self.q
        if np.any(np.abs(qt) < 1e-10):
            return None

        # stationary points: (Q + 2 mu I) x = -q; the global one has Q + 2 mu I psd
        def excess(mu):
            return float(np.sum((qt / (lam + 2.0 * mu)) ** 2)) - self.radius**2

        lo = -lam[0] / 2.0 + 1e-14 * max(1.0, abs(lam[0]))
        hi = lo + 1.0
        while excess(hi) > 0.0:
            hi = lo + 2.0 * (hi - lo)
        if excess(lo) < 0.0:
            return None
        mu = brentq(excess, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
        return V @ (-qt / (lam + 2.0 * mu))

    def f_true(self, x):
        return float(0.5 * x @ self.Q @ x + self.q @ x)

    def g_true(self, x):
        return self.Q @ x + self.q

    def c(self, x):
        return np.array([x @ x - self.radius**2])

    def jac(self, x):
        return 2.0 * np.asarray(x, dtype=float)[None, :]


def _full_rank_matrix(rng, m, n):
    while True:
        A = rng.standard_normal((m, n))
        if min_singular_value(A) > 1e-8:
            return A


def make_qp(n: int, m: int, seed: int = 0, identity: bool = False, name: Optional[str] = None) -> QuadraticProblem:
    """Random equality-constrained QP; ``identity=True`` gives ``Q = I, q = 0``."""
    rng = np.random.default_rng(seed)
    A = _full_rank_matrix(rng, m, n)
    b = rng.standard_normal(m)
    if identity:
        Q, q = np.eye(n), np.zeros(n)
    else:
        M = rng.standard_normal((n, n)) / math.sqrt(n)
        Q = M.T @ M + 0.5 * np.eye(n)
        q = rng.standard_normal(n)
    x0 = rng.standard_normal(n)
    return QuadraticProblem(Q, q, A, b, x0, name=name or f"qp{n}")


def make_rosenbrock(n: int, m: int, seed: int = 0, name: Optional[str] = None) -> RosenbrockProblem:
    rng = np.random.default_rng(seed)
    A = _full_rank_matrix(rng, m, n)
    b = A @ np.ones(n) + 0.1 * rng.standard_normal(m)
    x0 = np.where(np.arange(n) % 2 == 0, -1.2, 1.0)
    return RosenbrockProblem(A, b, x0, name=name or f"rosen{n}")


def make_sphere(n: int, seed: int = 0, name: Optional[str] = None) -> SphereQuadraticProblem:
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n)) / math.sqrt(n)
    Q = 0.5 * (M + M.T)
    q = rng.standard_normal(n)
    x0 = rng.standard_normal(n)
    x0 /= np.linalg.norm(x0)
    return SphereQuadraticProblem(Q, q, 1.0, x0, name=name or f"sphere{n}")


SUITE_SIZES = (10, 50, 100)


def get_synthetic(name: str, seed: int = 0) -> Problem:
    """Build one suite member by id: ``qp<n>``, ``qpi<n>``, ``rosen<n>``, ``sphere<n>``."""
    mt = re.fullmatch(r"(qpi|qp|rosen|sphere)(\d+)", name)
    if mt is None:
        raise KeyError(f"unknown synthetic problem {name!r}")
    family, n = mt.group(1), int(mt.group(2))
    if n < 2:
        raise KeyError(f"synthetic problem {name!r} needs n >= 2")
    if family == "qp":
        return make_qp(n, max(1, n // 4), seed, name=name)
    if family == "qpi":
        return make_qp(n, max(1, n // 4), seed, identity=True, name=name)
    if family == "rosen":
        return make_rosenbrock(n, max(1, n // 10), seed, name=name)
    return make_sphere(n, seed, name=name)


def suite_names():
    return [f"{fam}{n}" for fam in ("qp", "rosen", "sphere") for n in SUITE_SIZES]


def synthetic_suite(seed: int = 0):
    """Deterministic list of suite problems, all satisfying LICQ at their start point."""
    return [get_synthetic(name, seed) for name in suite_names()]
