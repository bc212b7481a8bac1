"""Budgeted experiment runs, profile-point selection, performance profiles and CSV I/O."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .kkt import KktError
from .sampling import SamplingController
from .sqp import (
    BudgetExhausted,
    IterationRecord,
    SqpParams,
    feasibility_error,
    initial_state,
    merit_value,
    sqp_step,
    stationarity_error,
)

FEASIBLE_TOL = 1e-6
NOMINAL_POPULATION = 1024
CSV_COLUMNS = (
    "run_id", "problem", "solver", "seed", "k", "feasibility", "stationarity", "tau_bar", "alpha",
    "batch", "ls_iters_cum", "grad_evals_cum", "case", "merit", "delta_l",
)
_MAGIC = "# stochsqp-run v1"

__all__ = [
    "RunConfig", "RunRecord", "ProfileSpec", "ProfileCurve", "SchemaError",
    "feasibility_error", "stationarity_error", "parse_variant", "canonical_variant", "make_controller",
    "run_experiment", "select_profile_point", "performance_profile",
    "write_run", "read_run", "write_runs", "read_runs", "run_grid",
]


class SchemaError(ValueError):
    pass


_VARIANT = re.compile(r"(exact|inexact)-(fixed(\d+|N)|adaptive|predetermined)")
_REVERSED = re.compile(r"(fixed(?:\d+|N)|adaptive|predetermined)-(exact|inexact)")


def canonical_variant(name: str) -> str:
    """Accept ``adaptive-inexact`` as a spelling of ``inexact-adaptive``."""
    mt = _REVERSED.fullmatch(name)
    return f"{mt.group(2)}-{mt.group(1)}" if mt else name


def parse_variant(name: str) -> Tuple[bool, str, Optional[int]]:
    """Split ``{exact|inexact}-{fixed<k>|fixedN|adaptive|predetermined}``.

    Returns ``(early_termination, mode, fixed_size)``; ``fixed_size`` is ``None``
    for ``fixedN`` (the whole population) and non-fixed modes.
    """
    mt = _VARIANT.fullmatch(canonical_variant(name))
    if mt is None:
        raise ValueError(f"unknown solver variant {name!r}")
    inexact = mt.group(1) == "inexact"
    if mt.group(3) is not None:
        size = None if mt.group(3) == "N" else int(mt.group(3))
        if size is not None and size < 1:
            raise ValueError("fixed batch size must be positive")
        return inexact, "fixed", size
    return inexact, mt.group(2), None


def nominal_population(problem) -> int:
    return problem.n_samples if problem.n_samples is not None else NOMINAL_POPULATION


@dataclass(frozen=True)
class RunConfig:
    problem: str
    variant: str = "inexact-adaptive"
    seed: int = 0
    params: SqpParams = field(default_factory=SqpParams)
    max_epochs: Optional[float] = None
    init_size: int = 2
    nu: float = 1.5
    problem_args: dict = field(default_factory=dict)

    def __post_init__(self):
        parse_variant(self.variant)
        object.__setattr__(self, "variant", canonical_variant(self.variant))
        if self.max_epochs is not None and self.max_epochs <= 0:
            raise ValueError("max_epochs must be positive")
        if self.init_size < 1:
            raise ValueError("init_size must be positive")

    @property
    def run_id(self) -> str:
        return f"{self.problem}__{self.variant}__s{self.seed}"

    def effective_params(self, problem) -> SqpParams:
        """Params with the variant's solve mode and the epoch budget folded in."""
        inexact, _, _ = parse_variant(self.variant)
        budget = self.params.grad_eval_budget
        if self.max_epochs is not None:
            budget = min(budget, int(math.floor(self.max_epochs * nominal_population(problem))))
        return dataclasses.replace(self.params, early_termination=inexact, grad_eval_budget=max(budget, 1))

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        d = json.loads(text)
        d["params"] = SqpParams(**d["params"])
        return cls(**d)


def make_controller(cfg: RunConfig, problem) -> SamplingController:
    _, mode, size = parse_variant(cfg.variant)
    pop = nominal_population(problem)
    p = cfg.params
    if mode == "fixed":
        size = pop if size is None else size
        if problem.n_samples is not None:
            size = min(size, problem.n_samples)
        return SamplingController.fixed(size)
    init = min(cfg.init_size, pop)
    if mode == "adaptive":
        return SamplingController.adaptive(init, pop, p.theta1, p.beta, p.sigma)
    return SamplingController.predetermined(init, cfg.nu, pop)


@dataclass
class RunRecord:
    config: RunConfig
    problem_name: str
    initial: Dict[str, float]
    iterations: List[IterationRecord] = field(default_factory=list)
    terminal_reason: str = ""

    @property
    def run_id(self) -> str:
        return self.config.run_id

    @property
    def solver(self) -> str:
        return self.config.variant

    @property
    def seed(self) -> int:
        return self.config.seed

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.iterations])


def run_experiment(cfg: RunConfig, problem, on_step: Optional[Callable] = None,
                   lipschitz: Optional[Tuple[float, float]] = None) -> RunRecord:
    """Iterate :func:`sqp_step` until a budget trips.

    Lipschitz estimates come from a fixed probe stream so that every solver
    and seed sees the same values for a given problem. ``on_step`` receives
    ``(IterationRecord, Direction)`` after each accepted iteration.
    """
    params = cfg.effective_params(problem)
    controller = make_controller(cfg, problem)
    state = initial_state(problem, params, controller, lipschitz=lipschitz,
                          lipschitz_rng=np.random.default_rng(0))
    x0 = state.x
    c0 = problem.c(x0)
    initial = {
        "feasibility": feasibility_error(c0),
        "stationarity": stationarity_error(problem.g_true(x0), problem.jac(x0)),
        "merit": merit_value(params.tau_init, problem.f_true(x0), c0),
        "L_est": state.L_est,
        "Gamma_est": state.Gamma_est,
        "grad_budget": params.grad_eval_budget,
        "ls_budget": params.ls_iter_budget,
    }
    rec = RunRecord(cfg, problem.name, initial)
    rng = np.random.default_rng(cfg.seed)
    while True:
        try:
            state, it, direction = sqp_step(state, problem, controller, params, rng)
        except BudgetExhausted as exc:
            rec.terminal_reason = f"budget:{exc.kind}"
            break
        except (KktError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            rec.terminal_reason = f"error:{type(exc).__name__}: {exc}"
            break
        rec.iterations.append(it)
        if on_step is not None:
            on_step(it, direction)
    return rec


# ---------------------------------------------------------------------------
# profiles


def select_profile_point(rec: RunRecord) -> IterationRecord:
    """Least stationarity among points with feasibility <= 1e-6, else least infeasibility."""
    its = rec.iterations if isinstance(rec, RunRecord) else list(rec)
    if not its:
        raise ValueError("cannot select a profile point from an empty record")
    feasible = [r for r in its if r.feasibility <= FEASIBLE_TOL]
    if feasible:
        return min(feasible, key=lambda r: r.stationarity)
    return min(its, key=lambda r: r.feasibility)


@dataclass(frozen=True)
class ProfileSpec:
    eps_pp: float
    metric: str = "stationarity"
    cost: str = "grad_evals"

    def __post_init__(self):
        if not 0.0 < self.eps_pp < 1.0:
            raise ValueError("eps_pp must lie in (0, 1)")
        if self.metric not in ("feasibility", "stationarity"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.cost not in ("grad_evals", "ls_iters"):
            raise ValueError(f"unknown cost axis {self.cost!r}")


@dataclass
class ProfileCurve:
    solver: str
    spec: ProfileSpec
    solved_fraction: float
    fractions: np.ndarray
    curve: np.ndarray
    solved: Dict[Tuple[str, int], bool]


def solved(m0: float, mpp: float, mb: float, eps_pp: float) -> bool:
    return m0 - mpp >= (1.0 - eps_pp) * (m0 - mb)


def _budget(rec: RunRecord, cost: str) -> float:
    return float(rec.initial["grad_budget" if cost == "grad_evals" else "ls_budget"])


def performance_profile(records: Dict[Tuple[str, int, str], RunRecord], spec: ProfileSpec,
                        x0_metrics: Optional[Dict[Tuple[str, int], Dict[str, float]]] = None,
                        fractions: Optional[Sequence[float]] = None) -> Dict[str, ProfileCurve]:
    """Solved fractions per solver under ``m0 - m_pp >= (1 - eps_pp)(m0 - m_best)``.

    ``records`` maps ``(problem, seed, solver)`` to a run. The best value for a
    ``(problem, seed)`` is the smallest profile-point metric over all solvers,
    never worse than the starting value. The curve gives the solved fraction
    when only runs whose profile point cost at most ``fraction * budget`` count,
    with the budget taken from each run's own configuration.
    """
    if fractions is None:
        fractions = np.linspace(0.0, 1.0, 101)
    fractions = np.asarray(fractions, dtype=float)
    solvers = sorted({s for (_, _, s) in records})
    pairs = sorted({(p, sd) for (p, sd, _) in records})
    for pair in pairs:
        for s in solvers:
            if (pair[0], pair[1], s) not in records:
                raise ValueError(f"missing run for problem={pair[0]!r} seed={pair[1]} solver={s!r}")
    cost_field = "grad_evals_cum" if spec.cost == "grad_evals" else "ls_iters_cum"

    points = {}
    for key, rec in records.items():
        m0 = (x0_metrics[key[:2]] if x0_metrics else rec.initial)[spec.metric]
        if rec.iterations:
            pp = select_profile_point(rec)
            points[key] = (m0, getattr(pp, spec.metric), float(getattr(pp, cost_field)))
        else:
            points[key] = (m0, m0, 0.0)

    out = {}
    for s in solvers:
        flags, costs = {}, []
        for pair in pairs:
            m0, mpp, cost = points[(pair[0], pair[1], s)]
            mb = min([m0] + [points[(pair[0], pair[1], o)][1] for o in solvers])
            ok = solved(m0, mpp, mb, spec.eps_pp)
            flags[pair] = ok
            if ok:
                costs.append(cost / _budget(records[(pair[0], pair[1], s)], spec.cost))
        costs = np.array(costs)
        curve = np.array([np.count_nonzero(costs <= f) for f in fractions], dtype=float) / len(pairs)
        out[s] = ProfileCurve(s, spec, sum(flags.values()) / len(pairs), fractions, curve, flags)
    return out


def write_profiles(path, curves: Iterable[ProfileCurve]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["solver", "eps_pp", "metric", "cost", "budget_fraction", "solved_fraction"])
        for pc in curves:
            for f, v in zip(pc.fractions, pc.curve):
                w.writerow([pc.solver, _fmt(pc.spec.eps_pp), pc.spec.metric, pc.spec.cost, _fmt(f), _fmt(v)])


# ---------------------------------------------------------------------------
# CSV persistence


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.17g" % v


def write_run(path, rec: RunRecord) -> None:
    """One row per iteration under a ``#`` header block that echoes the config."""
    with open(path, "w", newline="") as fh:
        fh.write(_MAGIC + "\n")
        fh.write("# config " + rec.config.to_json() + "\n")
        fh.write("# problem " + json.dumps(rec.problem_name) + "\n")
        fh.write("# initial " + json.dumps(rec.initial, sort_keys=True) + "\n")
        fh.write("# terminal " + json.dumps(rec.terminal_reason) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        cfg = rec.config
        for r in rec.iterations:
            w.writerow([cfg.run_id, cfg.problem, cfg.variant, cfg.seed, r.k, _fmt(r.feasibility),
                        _fmt(r.stationarity), _fmt(r.tau_bar), _fmt(r.alpha), r.batch, r.ls_iters_cum,
                        r.grad_evals_cum, r.case, _fmt(r.merit), _fmt(r.delta_l)])


_INT_FIELDS = {"k", "batch", "ls_iters_cum", "grad_evals_cum"}


def read_run(path) -> RunRecord:
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise SchemaError(f"{path}: not a run file (missing {_MAGIC!r})")
    meta = {}
    i = 1
    while i < len(lines) and lines[i].startswith("# "):
        key, _, payload = lines[i][2:].partition(" ")
        meta[key] = payload
        i += 1
    for key in ("config", "problem", "initial", "terminal"):
        if key not in meta:
            raise SchemaError(f"{path}: header block lacks {key!r}")
    try:
        cfg = RunConfig.from_json(meta["config"])
    except (TypeError, ValueError, KeyError) as exc:
        raise SchemaError(f"{path}: bad config line: {exc}") from exc
    reader = csv.reader(lines[i:])
    header = next(reader, None)
    if header is None:
        raise SchemaError(f"{path}: missing column header")
    for j, expected in enumerate(CSV_COLUMNS):
        got = header[j] if j < len(header) else None
        if got != expected:
            raise SchemaError(f"{path}: column {j} should be {expected!r}, found {got!r}")
    if len(header) > len(CSV_COLUMNS):
        raise SchemaError(f"{path}: unexpected column {header[len(CSV_COLUMNS)]!r}")
    its = []
    rec_fields = [f.name for f in dataclasses.fields(IterationRecord)]
    for row in reader:
        vals = dict(zip(CSV_COLUMNS, row))
        kw = {}
        for name in rec_fields:
            v = vals[name]
            kw[name] = v if name == "case" else (int(v) if name in _INT_FIELDS else float(v))
        its.append(IterationRecord(**kw))
    return RunRecord(cfg, json.loads(meta["problem"]), json.loads(meta["initial"]), its,
                     json.loads(meta["terminal"]))


def write_runs(directory, records: Iterable[RunRecord]) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for rec in records:
        p = directory / f"{rec.run_id}.csv"
        write_run(p, rec)
        paths.append(p)
    return paths


def read_runs(source) -> List[RunRecord]:
    """Read every ``*.csv`` run file in a directory, or an explicit list of paths."""
    if isinstance(source, (str, os.PathLike)) and Path(source).is_dir():
        paths = sorted(Path(source).glob("*.csv"))
    else:
        paths = [Path(source)] if isinstance(source, (str, os.PathLike)) else [Path(p) for p in source]
    return [read_run(p) for p in paths]


def run_grid(configs: Sequence[RunConfig], problem_factory: Callable[[str], object],
             workers: Optional[int] = None) -> List[RunRecord]:
    """Run independent configurations, optionally on a thread pool.

    ``workers`` defaults to the ``STOCH_SQP_THREADS`` environment variable (1
    when unset). Results keep the order of ``configs``.
    """
    if workers is None:
        workers = int(os.environ.get("STOCH_SQP_THREADS", "1") or 1)
    problems = {}
    for cfg in configs:
        if cfg.problem not in problems:
            problems[cfg.problem] = problem_factory(cfg.problem)

    def one(cfg):
        return run_experiment(cfg, problems[cfg.problem])

    if workers <= 1:
        return [one(cfg) for cfg in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, configs))
