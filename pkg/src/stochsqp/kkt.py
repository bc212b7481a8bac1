"""Dense symmetric-indefinite KKT linear algebra.

The saddle-point system solved at every SQP iteration is::

    [ H  J^T ] [ d     ]   [ top    ]          top    = -(g + J^T y)
    [ J   0  ] [ delta ] = [ bottom ],         bottom = -c

and an inexact solution is judged through its residual split
``rho = H d + J^T delta - top`` and ``r = J d - bottom``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import kernels as K


class KktError(Exception):
    """Base class for linear-algebra failures."""


class SingularSystemError(KktError):
    pass


class NumericalBreakdownError(KktError):
    def __init__(self, iteration: int, message: str = "non-finite value in Lanczos recurrence"):
        super().__init__(f"{message} at MINRES iteration {iteration}")
        self.iteration = iteration


class TerminationCase(enum.Enum):
    A = "A"
    B = "B"
    FALLBACK = "Fallback"


_CODE_TO_CASE = {K.CASE_A: TerminationCase.A, K.CASE_B: TerminationCase.B, K.FALLBACK: TerminationCase.FALLBACK}


def _vec(a, name):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class KktSystem:
    H: np.ndarray
    J: np.ndarray

    def __post_init__(self):
        H = np.ascontiguousarray(np.atleast_2d(self.H), dtype=np.float64)
        J = np.ascontiguousarray(np.atleast_2d(self.J), dtype=np.float64)
        n = H.shape[0]
        if H.shape != (n, n):
            raise ValueError(f"H must be square, got {H.shape}")
        if J.shape[1] != n:
            raise ValueError(f"J has {J.shape[1]} columns but H is {n}x{n}")
        if J.shape[0] > n:
            raise ValueError(f"more constraints than variables (m={J.shape[0]}, n={n})")
        scale = max(1.0, float(np.abs(H).max(initial=0.0)))
        if np.abs(H - H.T).max(initial=0.0) > 1e-12 * scale:
            raise ValueError("H is not symmetric")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "J", J)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.J.shape[0]

    def matrix(self) -> np.ndarray:
        m = self.m
        return np.block([[self.H, self.J.T], [self.J, np.zeros((m, m))]])


@dataclass(frozen=True)
class KktRhs:
    top: np.ndarray
    bottom: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "top", _vec(self.top, "top"))
        object.__setattr__(self, "bottom", _vec(self.bottom, "bottom"))

    @classmethod
    def from_iterate(cls, g, J, y, c) -> "KktRhs":
        """Right-hand side ``-(g + J^T y), -c`` at a primal-dual iterate."""
        J = np.atleast_2d(J)
        return cls(-(np.asarray(g, dtype=float) + J.T @ np.asarray(y, dtype=float)), -np.asarray(c, dtype=float))

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.top, self.bottom])


@dataclass(frozen=True)
class KktSolution:
    d: np.ndarray
    delta: np.ndarray


@dataclass(frozen=True)
class ResidualPair:
    rho: np.ndarray
    r: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt(self.rho @ self.rho + self.r @ self.r))


@dataclass(frozen=True)
class TerminationVerdict:
    case: TerminationCase
    iterations_used: int
    residual_norms: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


def _check_rhs(sys: KktSystem, rhs: KktRhs):
    if rhs.top.shape[0] != sys.n or rhs.bottom.shape[0] != sys.m:
        raise ValueError(
            f"rhs sizes ({rhs.top.shape[0]}, {rhs.bottom.shape[0]}) do not match system ({sys.n}, {sys.m})"
        )


def apply_kkt(sys: KktSystem, v) -> np.ndarray:
    """Return ``[H v1 + J^T v2; J v1]`` for ``v = [v1; v2]``."""
    v = _vec(v, "v")
    if v.shape[0] != sys.n + sys.m:
        raise ValueError(f"vector has length {v.shape[0]}, expected {sys.n + sys.m}")
    return K.kkt_matvec(sys.H, sys.J, v)


def residuals(sys: KktSystem, rhs: KktRhs, sol: KktSolution) -> ResidualPair:
    """Recompute the residual split of ``sol`` from scratch (two matvecs)."""
    rho, r = K.kkt_residual(sys.H, sys.J, _vec(sol.d, "d"), _vec(sol.delta, "delta"), rhs.top, rhs.bottom)
    return ResidualPair(rho, r)


Predicate = Callable[[KktSolution, ResidualPair, int], Union[bool, TerminationCase, None]]


def minres_solve(
    sys: KktSystem,
    rhs: KktRhs,
    terminate: Optional[Predicate] = None,
    max_iters: Optional[int] = None,
    tol: float = 1e-8,
):
    """MINRES from the zero vector with a per-iteration stopping predicate.

    ``terminate(solution, residuals, t)`` is called at t = 0 (the zero
    iterate) and after every Lanczos step with exactly recomputed residuals.
    Returning a :class:`TerminationCase` stops the solve with that verdict; a
    bare ``True`` is read as case A. When the predicate never fires, the solve
    stops with a ``FALLBACK`` verdict once the full residual drops to
    ``tol * ||rhs||`` or after ``max_iters`` steps (default ``4 (n + m)``).

    Returns ``(KktSolution, ResidualPair, TerminationVerdict)``.
    """
    _check_rhs(sys, rhs)
    n, m = sys.n, sys.m
    if max_iters is None:
        max_iters = 4 * (n + m)
    if max_iters < 1:
        raise ValueError("max_iters must be positive")
    if tol < 0:
        raise ValueError("tol must be nonnegative")

    b = rhs.stacked()
    bnorm = float(np.linalg.norm(b))
    V, s = K.minres_init(b)
    norms = [bnorm]

    def snapshot():
        sol = KktSolution(V[4, :n].copy(), V[4, n:].copy())
        return sol, residuals(sys, rhs, sol)

    def verdict(case, t):
        return TerminationVerdict(case, t, np.array(norms))

    sol, res = snapshot()
    t = 0
    status = K.OK
    while True:
        if terminate is not None:
            hit = terminate(sol, res, t)
            if hit:
                case = hit if isinstance(hit, TerminationCase) else TerminationCase.A
                return sol, res, verdict(case, t)
        if norms[-1] <= tol * bnorm or t >= max_iters or status == K.KRYLOV_EXHAUSTED:
            return sol, res, verdict(TerminationCase.FALLBACK, t)
        t += 1
        status = K.minres_step(sys.H, sys.J, V, s, t)
        if status == K.NONFINITE:
            raise NumericalBreakdownError(t)
        sol, res = snapshot()
        norms.append(res.norm())


def minres_sqp(sys: KktSystem, rhs: KktRhs, gbar, params: np.ndarray, max_iters: int, tol: float):
    """Compiled MINRES stopped by the built-in SQP termination cases.

    ``params`` follows the layout of ``kernels.P_*``. Semantically identical to
    :func:`minres_solve` with the predicate from ``sqp.case_predicate``.
    """
    _check_rhs(sys, rhs)
    x, code, iters, status, norms = K.minres_sqp(
        sys.H, sys.J, rhs.top, rhs.bottom, _vec(gbar, "gbar"), params, int(max_iters), float(tol)
    )
    if status == K.NONFINITE:
        raise NumericalBreakdownError(iters)
    sol = KktSolution(x[: sys.n], x[sys.n:])
    return sol, residuals(sys, rhs, sol), TerminationVerdict(_CODE_TO_CASE[code], iters, norms)


def _rank_tol(J):
    sv = np.linalg.svd(J, compute_uv=False)
    return sv, 1e-12 * max(1.0, sv[0] if sv.size else 0.0)


def direct_solve(sys: KktSystem, rhs: KktRhs) -> KktSolution:
    """Exact KKT solution by dense factorization; used as the oracle for MINRES."""
    _check_rhs(sys, rhs)
    if sys.m:
        sv, tol = _rank_tol(sys.J)
        if sv[-1] <= tol:
            raise SingularSystemError(f"constraint Jacobian is rank deficient (min singular value {sv[-1]:.3e})")
    b = rhs.stacked()
    try:
        x = np.linalg.solve(sys.matrix(), b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    sol = KktSolution(x[: sys.n], x[sys.n:])
    bnorm = max(float(np.linalg.norm(b)), 1.0)
    if residuals(sys, rhs, sol).norm() > 1e-10 * bnorm:
        raise SingularSystemError("KKT matrix is numerically singular")
    return sol


def least_squares_multipliers(J, g) -> np.ndarray:
    """Multipliers minimizing ``||g + J^T y||_2``, i.e. ``(J J^T) y = -J g``."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    g = np.asarray(g, dtype=float)
    if J.shape[0] == 0:
        return np.zeros(0)
    # QR of J^T avoids squaring the condition number
    Q, R = np.linalg.qr(J.T)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-12 * max(1.0, diag.max()):
        raise SingularSystemError("J J^T is singular; multipliers are not unique")
    return -np.linalg.solve(R, Q.T @ g)
