"""Command-line front end: ``solve``, ``bench`` and ``profile``."""
from __future__ import annotations

import argparse
import dataclasses
import itertools
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

from . import bench as B
from . import problems as P
from .sqp import SqpParams

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# name -> (type, legal range shown in --help)
PARAM_TABLE = {
    "tau_init": (float, "> 0"),
    "omega1": (float, "(0, 1)"),
    "omega2": (float, "(0, 1)"),
    "eta": (float, "(0, 1)"),
    "eps_tau": (float, "(0, 1)"),
    "omega_a": (float, "> 0"),
    "omega_b": (float, "> 0"),
    "alpha_u": (float, "> 0"),
    "beta": (float, "(0, 1]"),
    "sigma": (float, "[2, 4]"),
    "eps_d": (float, "(0, 1/2)"),
    "theta1": (float, "> 0"),
    "minres_tol": (float, ">= 0"),
    "minres_max_iters": (int, ">= 1, default 4(n+m)"),
}


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(t) for t in str(text).split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class CliConfig:
    subcommand: str
    params: SqpParams
    synthetic: List[str]
    libsvm: List[str]
    variants: List[str]
    seeds: List[int]
    out: Path
    noise: float = 0.1
    m_lin: Optional[int] = None
    constraint_seed: int = 0
    max_epochs: Optional[float] = None
    runs: Optional[Path] = None
    eps_pp: Sequence[float] = (1e-1, 1e-3, 1e-5)


def _add_common(p: argparse.ArgumentParser, multi: bool):
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--out", default="out", help="output directory")
    if multi:
        p.add_argument("--synthetic", type=_csv_list(str), default=[], help="comma-separated suite ids")
        p.add_argument("--libsvm", type=_csv_list(str), default=[], help="comma-separated LIBSVM files")
        p.add_argument("--variants", type=_csv_list(str), default=["inexact-adaptive"],
                       help="comma-separated {exact|inexact}-{fixed<k>|fixedN|adaptive|predetermined}")
        p.add_argument("--seeds", type=_csv_list(int), default=[0], help="comma-separated seeds")
    else:
        p.add_argument("--synthetic", help="suite id: qp<n>, qpi<n>, rosen<n>, sphere<n>, logreg<N>x<n>")
        p.add_argument("--libsvm", help="LIBSVM data file for constrained logistic regression")
        p.add_argument("--variant", default="inexact-adaptive",
                       help="{exact|inexact}-{fixed<k>|fixedN|adaptive|predetermined}")
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.1, help="additive gradient noise variance for suite problems")
    p.add_argument("--m-lin", type=int, default=None, help="linear constraint rows (default ceil(n/4))")
    p.add_argument("--constraint-seed", type=int, default=0, help="seed for A, b1 of logistic problems")
    p.add_argument("--max-epochs", type=float, default=None, help="gradient budget in epochs")
    p.add_argument("--grad-budget", type=int, default=SqpParams.grad_eval_budget)
    p.add_argument("--ls-budget", type=int, default=SqpParams.ls_iter_budget)
    p.add_argument("--max-iters", type=int, default=SqpParams.max_outer_iters)
    p.add_argument("--strict-case-a", type=_bool, default=False, help="also require g'd + quad <= 0 in case (a)")
    grp = p.add_argument_group("method parameters")
    for name, (kind, legal) in PARAM_TABLE.items():
        default = getattr(SqpParams, name)
        grp.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=default,
                         help=f"legal range {legal}")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="stochsqp", description="Adaptive inexact stochastic SQP solver and benchmark",
                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    _add_common(sub.add_parser("solve", help="run one problem with one variant", formatter_class=fmt), multi=False)
    _add_common(sub.add_parser("bench", help="problems x variants x seeds grid", formatter_class=fmt), multi=True)
    prof = sub.add_parser("profile", help="aggregate run CSVs into performance profiles", formatter_class=fmt)
    prof.add_argument("--config", help="flat key=value file; flags override it")
    prof.add_argument("--runs", required=False, help="directory of run CSVs")
    prof.add_argument("--out", default="profiles", help="output directory")
    prof.add_argument("--eps-pp", type=_csv_list(float), default=[1e-1, 1e-3, 1e-5])
    return parser


def read_config_file(path) -> dict:
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        return action.choices[name]


def parse_config(argv: Sequence[str]) -> CliConfig:
    """Resolve defaults < config file < flags into a validated :class:`CliConfig`."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    if getattr(ns, "config", None):
        sub = _subparser(parser, ns.subcommand)
        known = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
        file_values = read_config_file(ns.config)
        converted = {}
        for key, raw in file_values.items():
            if key not in known:
                raise UsageError(f"unknown config key {key!r}")
            action = known[key]
            try:
                converted[key] = action.type(raw) if action.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
        sub.set_defaults(**converted)
        ns = parser.parse_args(argv)
    return _to_config(ns)


def _to_config(ns) -> CliConfig:
    if ns.subcommand == "profile":
        eps = list(ns.eps_pp)
        for e in eps:
            if not 0.0 < e < 1.0:
                raise UsageError(f"eps_pp={e} must lie in (0, 1)")
        if not ns.runs:
            raise UsageError("profile needs --runs DIR")
        return CliConfig("profile", SqpParams(), [], [], [], [], Path(ns.out), runs=Path(ns.runs), eps_pp=eps)

    kw = {name: getattr(ns, name) for name in PARAM_TABLE}
    kw.update(strict_case_a=ns.strict_case_a, max_outer_iters=ns.max_iters,
              grad_eval_budget=ns.grad_budget, ls_iter_budget=ns.ls_budget)
    try:
        params = SqpParams(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if ns.noise < 0:
        raise UsageError("noise must be nonnegative")
    if ns.max_epochs is not None and ns.max_epochs <= 0:
        raise UsageError("max_epochs must be positive")
    if ns.subcommand == "solve":
        synthetic = [ns.synthetic] if ns.synthetic else []
        libsvm = [ns.libsvm] if ns.libsvm else []
        variants, seeds = [ns.variant], [ns.seed]
        if len(synthetic) + len(libsvm) != 1:
            raise UsageError("solve needs exactly one of --synthetic or --libsvm")
    else:
        synthetic, libsvm, variants, seeds = ns.synthetic, ns.libsvm, ns.variants, ns.seeds
        if not synthetic and not libsvm:
            raise UsageError("bench needs --synthetic and/or --libsvm problems")
    for v in variants:
        try:
            B.parse_variant(v)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return CliConfig(ns.subcommand, params, synthetic, libsvm, variants, seeds, Path(ns.out), noise=ns.noise,
                     m_lin=ns.m_lin, constraint_seed=ns.constraint_seed, max_epochs=ns.max_epochs)


_LOGREG = re.compile(r"logreg(\d+)x(\d+)")


def resolve_problem(pid: str, cfg: CliConfig):
    """Map a problem id (suite name or LIBSVM stem) to a problem instance."""
    for path in cfg.libsvm:
        if Path(path).stem == pid:
            try:
                ds = P.load_libsvm(path)
            except (OSError, P.ParseError) as exc:
                raise DataError(str(exc)) from exc
            return P.build_logistic_problem(ds, cfg.m_lin, cfg.constraint_seed, name=pid)
    mt = _LOGREG.fullmatch(pid)
    if mt:
        ds = P.make_synthetic_dataset(int(mt.group(1)), int(mt.group(2)), seed=cfg.constraint_seed)
        m_lin = cfg.m_lin if cfg.m_lin is not None else math.ceil(int(mt.group(2)) / 4)
        return P.build_logistic_problem(ds, m_lin, cfg.constraint_seed, name=pid)
    try:
        inner = P.get_synthetic(pid, cfg.constraint_seed)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    return P.AdditiveNoiseProblem(inner, cfg.noise)


def _problem_ids(cfg: CliConfig) -> List[str]:
    return list(cfg.synthetic) + [Path(p).stem for p in cfg.libsvm]


def _run(cfg: CliConfig) -> int:
    pids = _problem_ids(cfg)
    problems = {pid: resolve_problem(pid, cfg) for pid in pids}
    source = {"noise": cfg.noise, "m_lin": cfg.m_lin, "constraint_seed": cfg.constraint_seed}
    configs = [B.RunConfig(pid, v, s, cfg.params, cfg.max_epochs, problem_args=source)
               for pid, v, s in itertools.product(pids, cfg.variants, cfg.seeds)]
    records = B.run_grid(configs, problems.__getitem__)
    paths = B.write_runs(cfg.out, records)
    failed = [r for r in records if r.terminal_reason.startswith("error:")]
    for rec, path in zip(records, paths):
        last = rec.iterations[-1] if rec.iterations else None
        summary = f"feas={last.feasibility:.3e} stat={last.stationarity:.3e}" if last else "no iterations"
        print(f"{path}: {len(rec.iterations)} iterations, {rec.terminal_reason}, {summary}")
    if failed:
        for rec in failed:
            print(f"{rec.run_id}: {rec.terminal_reason}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


def _profile(cfg: CliConfig) -> int:
    try:
        records = B.read_runs(cfg.runs)
    except (OSError, B.SchemaError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    if not records:
        raise DataError(f"no run CSVs under {cfg.runs}")
    keyed = {(r.config.problem, r.config.seed, r.config.variant): r for r in records}
    cfg.out.mkdir(parents=True, exist_ok=True)
    for eps in cfg.eps_pp:
        curves = []
        for metric in ("feasibility", "stationarity"):
            for cost in ("grad_evals", "ls_iters"):
                try:
                    result = B.performance_profile(keyed, B.ProfileSpec(eps, metric, cost))
                except ValueError as exc:
                    raise DataError(str(exc)) from exc
                curves.extend(result[s] for s in sorted(result))
        path = cfg.out / f"profile_eps{eps:g}.csv"
        B.write_profiles(path, curves)
        print(f"{path}: " + ", ".join(f"{c.solver}/{c.spec.metric}/{c.spec.cost}={c.solved_fraction:.3f}"
                                       for c in curves))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_config(argv)
        if cfg.subcommand == "profile":
            return _profile(cfg)
        return _run(cfg)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, ValueError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
