"""Command-line entry point binding models, designs, and evaluation.

Subcommands: ``design`` (fss / three / four-hat / four-check / sprt),
``run`` (execute one design on a seeded simulated path), ``evaluate``
(Monte Carlo reports over a parameter grid), ``sweep`` (level-regime
campaigns), ``rates`` (rate-function grids), and ``figures`` (re-emit all
figure data CSVs).  Options may come from flags or from an INI-style config
file; flags win.  Exit codes: 0 success, 2 configuration error, 3 design
infeasible within budget, 4 internal numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import io
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional

from .errors import (
    ConfigError,
    ConstructionError,
    DomainError,
    InfeasibleBudgetError,
    MstageError,
    NumericError,
    RangeError,
)
from .fss import FssSolver, SimBudget, design_fss
from .harness import (
    CSV_COLUMNS,
    _model_name,
    SWEEP_COLUMNS,
    Regime,
    RegimeSpec,
    evaluate,
    report_row,
    sweep,
    write_csv,
)
from .models import (
    Ar1,
    GaussianMean,
    ModelSpec,
    Statistic,
    TwoStateMarkov,
    new_state,
    simulate_step,
)
from .multistage import (
    design_four_stage_check,
    design_four_stage_hat,
    design_sprt,
    design_three_stage,
    run_four_stage_check,
    run_four_stage_hat,
    run_sprt,
    run_three_stage,
)
from .ratefn import are, psi, rate_functions
from . import streams

_SCHEMA: Dict[str, Dict[str, type]] = {
    "model": {"kind": str, "statistic": str, "eta": float, "mu0": float,
              "mu1": float, "p": float, "x_star": float},
    "levels": {"alpha": float, "beta": float, "regime": str, "betas": str},
    "budget": {"reps": int, "seed": int, "max_n": int, "threads": int},
    "output": {"directory": str, "prefix": str},
}

_TEST_KINDS = ("fss", "three", "four-hat", "four-check", "sprt")


class RunConfig:
    """Validated key/section configuration with stable serialization."""

    def __init__(self, values: Optional[Dict[str, Dict[str, str]]] = None):
        self.values: Dict[str, Dict[str, str]] = values or {}
        for section, keys in self.values.items():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section: {section}")
            for key in keys:
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown config key: {section}.{key}")

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        values = {s: dict(parser.items(s)) for s in parser.sections()}
        return cls(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        return cls.parse(text)

    def serialize(self) -> str:
        parser = configparser.ConfigParser()
        for section in sorted(self.values):
            parser[section] = {k: self.values[section][k]
                               for k in sorted(self.values[section])}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def get(self, section: str, key: str, default=None):
        raw = self.values.get(section, {}).get(key)
        if raw is None:
            return default
        typ = _SCHEMA[section][key]
        try:
            return typ(raw)
        except ValueError as exc:
            raise ConfigError(
                f"bad value for config key {section}.{key}: {raw!r}") from exc


def _merged(args, config: RunConfig, section: str, key: str, default=None):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    return config.get(section, key, default)


def _require(value, name: str):
    if value is None:
        raise ConfigError(f"missing required key: {name}")
    return value


def _build_model(args, config: RunConfig) -> ModelSpec:
    kind = getattr(args, "model_kind", None)
    if kind is None:
        kind = config.get("model", "kind")
    _require(kind, "model.kind")
    stat_name = _merged(args, config, "model", "statistic")
    x_star = _merged(args, config, "model", "x_star", 0.0)
    try:
        if kind == "gaussian":
            eta = _require(_merged(args, config, "model", "eta"), "model.eta")
            stat = Statistic(stat_name) if stat_name else Statistic.AVG_LLR
            return ModelSpec(GaussianMean(eta), stat, x_star)
        if kind == "ar1":
            mu0 = _require(_merged(args, config, "model", "mu0"), "model.mu0")
            mu1 = _require(_merged(args, config, "model", "mu1"), "model.mu1")
            stat = Statistic(stat_name) if stat_name else Statistic.AVG_LLR
            return ModelSpec(Ar1(mu0, mu1), stat)
        if kind == "markov":
            p = _require(_merged(args, config, "model", "p"), "model.p")
            mu0 = _require(_merged(args, config, "model", "mu0"), "model.mu0")
            mu1 = _require(_merged(args, config, "model", "mu1"), "model.mu1")
            stat = Statistic(stat_name) if stat_name else Statistic.AVG_LLR
            return ModelSpec(TwoStateMarkov(p, mu0, mu1), stat)
    except ValueError as exc:
        raise ConfigError(f"bad value for config key model.statistic: "
                          f"{stat_name!r}") from exc
    raise ConfigError(f"bad value for config key model.kind: {kind!r} "
                      f"(expected gaussian | ar1 | markov)")


def _build_budget(args, config: RunConfig) -> SimBudget:
    return SimBudget(
        reps=int(_merged(args, config, "budget", "reps", 10_000)),
        seed=int(_merged(args, config, "budget", "seed", 0)),
        max_n=int(_merged(args, config, "budget", "max_n", 10_000)),
    )


def _levels(args, config: RunConfig):
    alpha = _require(_merged(args, config, "levels", "alpha"), "levels.alpha")
    beta = _require(_merged(args, config, "levels", "beta"), "levels.beta")
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise ConfigError("levels.alpha and levels.beta must lie in (0, 1)")
    return float(alpha), float(beta)


def _out_dir(args, config: RunConfig) -> Optional[Path]:
    d = _merged(args, config, "output", "directory")
    if d is None:
        return None
    path = Path(d)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _prefix(args, config: RunConfig) -> str:
    return _merged(args, config, "output", "prefix", "") or ""


def _make_design(kind: str, model: ModelSpec, alpha: float, beta: float,
                 budget: SimBudget, solver: Optional[FssSolver] = None):
    if kind == "fss":
        return design_fss(model, alpha, beta, budget)
    if kind == "three":
        return design_three_stage(model, alpha, beta, budget, solver)
    if kind == "four-hat":
        return design_four_stage_hat(model, alpha, beta, budget, solver)
    if kind == "four-check":
        return design_four_stage_check(model, alpha, beta, budget, solver)
    if kind == "sprt":
        return design_sprt(alpha, beta)
    raise ConfigError(f"unknown test kind: {kind!r} (expected one of "
                      f"{', '.join(_TEST_KINDS)})")


def _design_lines(kind: str, model: ModelSpec, design, seed: int) -> List[str]:
    lines = [f"test: {kind}"]
    lines.append(f"model: {_model_name(model)}")
    lines.append(f"statistic: {model.statistic.value}")
    for name, value in vars(design).items():
        if name in ("provenance", "evidence"):
            continue
        if isinstance(value, float):
            lines.append(f"{name}: {value:.10g}")
        elif isinstance(value, (int, str)):
            lines.append(f"{name}: {value}")
        else:
            lines.append(f"{name}: {getattr(value, 'value', value)}")
    lines.append(f"seed: {seed}")
    return lines


def _statistic_feed(model: ModelSpec, param: float, rng, llr: bool = False):
    state = new_state(model)
    while True:
        simulate_step(model, param, state, rng)
        yield state.llr_value if llr else state.statistic_value


def _cmd_design(args) -> int:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    model = _build_model(args, config)
    alpha, beta = _levels(args, config)
    budget = _build_budget(args, config)
    design = _make_design(args.kind, model, alpha, beta, budget)
    lines = _design_lines(args.kind, model, design, budget.seed)
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    out = _out_dir(args, config)
    if out is not None:
        (out / f"{_prefix(args, config)}design.txt").write_text(text)
    return 0


def _cmd_run(args) -> int:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    model = _build_model(args, config)
    alpha, beta = _levels(args, config)
    budget = _build_budget(args, config)
    true_param = args.true_param if args.true_param is not None else model.mu0
    model.check_param(true_param)
    design = _make_design(args.kind, model, alpha, beta, budget)
    rng = streams.substream(budget.seed, "run-path", 0)
    llr = args.kind == "sprt"
    feed = _statistic_feed(model, true_param, rng, llr=llr)
    runner = {"three": run_three_stage, "four-hat": run_four_stage_hat,
              "four-check": run_four_stage_check, "sprt": run_sprt}
    if args.kind == "fss":
        state = new_state(model)
        for _ in range(design.n_star):
            simulate_step(model, true_param, state, rng)
        decision = "reject" if state.statistic_value > design.kappa_star else "accept"
        outcome_lines = [f"decision: {decision}",
                         f"sample_size: {design.n_star}", "stage_reached: 1"]
    else:
        out = runner[args.kind](design, feed)
        outcome_lines = [f"decision: {out.decision.value}",
                         f"sample_size: {out.sample_size}",
                         f"stage_reached: {out.stage_reached}"]
        if out.capped:
            outcome_lines.append("capped: true")
    sys.stdout.write("\n".join(outcome_lines) + "\n")
    return 0


def _parse_float_list(raw: str, name: str) -> List[float]:
    try:
        return [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def _cmd_evaluate(args) -> int:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    model = _build_model(args, config)
    alpha, beta = _levels(args, config)
    budget = _build_budget(args, config)
    threads = int(_merged(args, config, "budget", "threads", 1))
    kinds = [k.strip() for k in args.tests.split(",") if k.strip()]
    for k in kinds:
        if k not in _TEST_KINDS:
            raise ConfigError(f"unknown test kind: {k!r}")
    params = (_parse_float_list(args.true_params, "--true-params")
              if args.true_params else [model.mu0, model.mu1])
    solver = FssSolver(model, budget)
    rows = []
    for kind in kinds:
        design = _make_design(kind, model, alpha, beta, budget, solver)
        for param in params:
            report = evaluate(design, model, param, budget.reps, budget.seed,
                              threads)
            row = report_row(report)
            rows.append(row)
            sys.stdout.write(
                f"{kind} at {param:g}: ess={report.ess:.4g} (se {report.ess_se:.3g}) "
                f"reject={report.reject_rate:.4g} (se {report.reject_se:.3g})\n")
    out = _out_dir(args, config)
    if out is not None:
        write_csv(out / f"{_prefix(args, config)}robustness.csv", rows)
    return 0


def _cmd_sweep(args) -> int:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    model = _build_model(args, config)
    budget = _build_budget(args, config)
    threads = int(_merged(args, config, "budget", "threads", 1))
    regime_name = _require(
        args.regime or config.get("levels", "regime"), "levels.regime")
    try:
        regime = Regime(regime_name)
    except ValueError as exc:
        raise ConfigError(f"bad value for levels.regime: {regime_name!r}") from exc
    betas_raw = args.betas or config.get("levels", "betas")
    betas = (_parse_float_list(betas_raw, "levels.betas") if betas_raw
             else [10.0 ** -k for k in range(1, 5)])
    spec = RegimeSpec(regime, tuple(betas))
    kinds = [k.strip() for k in args.tests.split(",") if k.strip()]
    solvers: dict = {}

    def design_fn(kind, a, b):
        key = (a, b)
        if key not in solvers:
            solvers[key] = FssSolver(model, budget)
        return _make_design(kind, model, a, b, budget, solvers[key])

    rows = sweep(spec, model, kinds, design_fn, budget.reps, budget.seed,
                 threads)
    out = _out_dir(args, config)
    path = (out or Path(".")) / f"{_prefix(args, config)}sweep_{regime.value}.csv"
    write_csv(path, rows, SWEEP_COLUMNS)
    sys.stdout.write(f"wrote {path}\n")
    return 0


def _rates_rows(model: ModelSpec, points: int) -> List[dict]:
    rf = rate_functions(model)
    rows = []
    include_zeta = model.statistic != Statistic.AVG_LLR
    if include_zeta:
        llr_model = ModelSpec(model.kind, Statistic.AVG_LLR, model.x_star)
        zf = rate_functions(llr_model)
    span = rf.j1 - rf.j0
    for i in range(points):
        kappa = rf.j0 + span * (i + 0.5) / points
        row = {"kappa": f"{kappa:.10g}",
               "psi0": f"{psi(rf, 0, kappa):.10g}",
               "psi1": f"{psi(rf, 1, kappa):.10g}"}
        if include_zeta:
            if zf.j0 < kappa < zf.j1:
                row["zeta0"] = f"{psi(zf, 0, kappa):.10g}"
                row["zeta1"] = f"{psi(zf, 1, kappa):.10g}"
            else:
                row["zeta0"] = row["zeta1"] = ""
        rows.append(row)
    return rows


def _cmd_rates(args) -> int:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    model = _build_model(args, config)
    rows = _rates_rows(model, args.points)
    cols = ["kappa", "psi0", "psi1"]
    if model.statistic != Statistic.AVG_LLR:
        cols += ["zeta0", "zeta1"]
    out = _out_dir(args, config)
    path = (out or Path(".")) / f"{_prefix(args, config)}rates.csv"
    write_csv(path, rows, cols)
    sys.stdout.write(f"wrote {path}\n")
    return 0


def _are_rows_gaussian(points: int) -> List[dict]:
    rows = []
    for i in range(points):
        eta = 0.05 + (3.0 - 0.05) * i / (points - 1)
        model = ModelSpec(GaussianMean(eta), Statistic.BINARIZED)
        a0, a1 = are(rate_functions(model))
        rows.append({"param": f"{eta:.10g}", "are0": f"{a0:.10g}",
                     "are1": f"{a1:.10g}"})
    return rows


def _are_rows_ar1(points: int) -> List[dict]:
    rows = []
    for i in range(points):
        mu1 = 0.05 + (0.9 - 0.05) * i / (points - 1)
        model = ModelSpec(Ar1(-mu1, mu1), Statistic.YULE_WALKER)
        a0, a1 = are(rate_functions(model))
        rows.append({"param": f"{mu1:.10g}", "are0": f"{a0:.10g}",
                     "are1": f"{a1:.10g}"})
    return rows


def _are_rows_markov(points: int) -> List[dict]:
    rows = []
    for i in range(points):
        mu0 = 0.05 + (0.45 - 0.05) * i / (points - 1)
        model = ModelSpec(TwoStateMarkov(0.5, mu0, 1 - mu0),
                          Statistic.SAMPLE_MEAN)
        a0, a1 = are(rate_functions(model))
        rows.append({"param": f"{mu0:.10g}", "are0": f"{a0:.10g}",
                     "are1": f"{a1:.10g}"})
    return rows


def _cmd_figures(args) -> int:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    budget = _build_budget(args, config)
    threads = int(_merged(args, config, "budget", "threads", 1))
    out = _out_dir(args, config) or Path(".")
    prefix = _prefix(args, config)
    points = args.points

    figure_models = {
        "gaussian": ModelSpec(GaussianMean(0.5), Statistic.BINARIZED),
        "ar1": ModelSpec(Ar1(-0.5, 0.5), Statistic.YULE_WALKER),
        "markov": ModelSpec(TwoStateMarkov(0.5, 0.25, 0.75),
                            Statistic.SAMPLE_MEAN),
    }
    for name, model in figure_models.items():
        rows = _rates_rows(model, points)
        write_csv(out / f"{prefix}rates_{name}.csv",
                  rows, ["kappa", "psi0", "psi1", "zeta0", "zeta1"])
    write_csv(out / f"{prefix}are_gaussian.csv", _are_rows_gaussian(points),
              ["param", "are0", "are1"])
    write_csv(out / f"{prefix}are_ar1.csv", _are_rows_ar1(points),
              ["param", "are0", "are1"])
    write_csv(out / f"{prefix}are_markov.csv", _are_rows_markov(points),
              ["param", "are0", "are1"])

    # ratio sweep and robustness curves on the Gaussian testing problem
    model = ModelSpec(GaussianMean(0.5))
    spec = RegimeSpec(Regime.LOG_OVER_BETA, tuple(10.0 ** -k for k in range(1, 5)))
    solver_memo: dict = {}

    def design_fn(kind, a, b):
        key = (a, b)
        if key not in solver_memo:
            solver_memo[key] = FssSolver(model, budget)
        return _make_design(kind, model, a, b, budget, solver_memo[key])

    rows = sweep(spec, model, ["three", "four-hat", "sprt"], design_fn,
                 budget.reps, budget.seed, threads)
    write_csv(out / f"{prefix}sweep_{spec.regime.value}.csv", rows,
              SWEEP_COLUMNS)

    alpha = beta = 1e-4
    solver = FssSolver(model, budget)
    rows = []
    mus = [model.mu0 + (model.mu1 - model.mu0) * i / 8 for i in range(9)]
    extra = [model.mu0 - 0.25, model.mu1 + 0.25]
    for kind in ("fss", "three", "four-hat", "four-check", "sprt"):
        design = _make_design(kind, model, alpha, beta, budget, solver)
        for mu in sorted(mus + extra):
            report = evaluate(design, model, mu, budget.reps, budget.seed,
                              threads)
            rows.append(report_row(report))
    write_csv(out / f"{prefix}robustness.csv", rows)
    sys.stdout.write(f"figure data written under {out}\n")
    return 0


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="INI config file; flags override it")
    parser.add_argument("--model", dest="model_kind",
                        choices=["gaussian", "ar1", "markov"])
    # model block
    parser.add_argument("--eta", type=float)
    parser.add_argument("--mu0", type=float)
    parser.add_argument("--mu1", type=float)
    parser.add_argument("--p", type=float)
    parser.add_argument("--x-star", dest="x_star", type=float)
    parser.add_argument("--statistic", choices=[s.value for s in Statistic])
    # budget block
    parser.add_argument("--reps", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--max-n", dest="max_n", type=int)
    parser.add_argument("--threads", type=int)
    # output block
    parser.add_argument("--out", dest="directory")
    parser.add_argument("--prefix")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mstage",
        description="design and evaluate multistage sequential tests")
    sub = parser.add_subparsers(dest="command", required=True)

    p_design = sub.add_parser("design", help="compute a test design")
    p_design.add_argument("kind", choices=_TEST_KINDS)
    p_design.add_argument("--alpha", type=float)
    p_design.add_argument("--beta", type=float)
    _add_common(p_design)
    p_design.set_defaults(fn=_cmd_design)

    p_run = sub.add_parser("run", help="run one design on a simulated path")
    p_run.add_argument("kind", choices=_TEST_KINDS)
    p_run.add_argument("--alpha", type=float)
    p_run.add_argument("--beta", type=float)
    p_run.add_argument("--true-mu", dest="true_param", type=float)
    _add_common(p_run)
    p_run.set_defaults(fn=_cmd_run)

    p_eval = sub.add_parser("evaluate", help="Monte Carlo evaluation reports")
    p_eval.add_argument("--tests", default="three,four-hat,four-check,sprt")
    p_eval.add_argument("--alpha", type=float)
    p_eval.add_argument("--beta", type=float)
    p_eval.add_argument("--true-params",
                        help="comma list of true parameter values")
    _add_common(p_eval)
    p_eval.set_defaults(fn=_cmd_evaluate)

    p_sweep = sub.add_parser("sweep", help="level-regime sweep with ratios")
    p_sweep.add_argument("--regime", choices=[r.value for r in Regime])
    p_sweep.add_argument("--betas", help="comma list of beta values")
    p_sweep.add_argument("--tests", default="three,four-hat,sprt")
    _add_common(p_sweep)
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_rates = sub.add_parser("rates", help="rate-function grid CSV")
    p_rates.add_argument("--points", type=int, default=200)
    _add_common(p_rates)
    p_rates.set_defaults(fn=_cmd_rates)

    p_fig = sub.add_parser("figures", help="emit all figure data CSVs")
    p_fig.add_argument("--points", type=int, default=60)
    _add_common(p_fig)
    p_fig.set_defaults(fn=_cmd_figures)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2
    except (ConstructionError, DomainError, RangeError) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2
    except InfeasibleBudgetError as exc:
        sys.stderr.write(f"infeasible budget: {exc}\n")
        return 3
    except (NumericError, MstageError) as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return 4


if __name__ == "__main__":
    sys.exit(main())
