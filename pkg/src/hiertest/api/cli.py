"""
hiertest command-line driver.

    hiertest <command> [--config PATH] [--seed N] [--out DIR] [--format json|csv] ...

Exit codes: 0 ok, 1 unexpected failure, 2 config error, 3 validation or
precondition error, 4 size guard exceeded.
"""
import argparse
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from hiertest.analysis import ctf, markov, search, verify, vine
from hiertest.core.exception import AppException, ConfigError
from hiertest.core.logger import setup_logger
from hiertest.model.costmodel import CostModel, PowerFunction
from hiertest.model.hierarchy import Hierarchy, augment, build_hierarchy, dyadic, vine as vine_hierarchy
from hiertest.model.strategy import (
    TestModel,
    covering_decomposition,
    expected_cost,
    strategy_from_dict,
    strategy_to_dict,
    usage_cost,
)
from hiertest.utils.io import make_manifest, write_csv, write_json
from hiertest.utils.params import get_settings, load_params

logger = setup_logger(name="Cli", log_file_name=get_settings().log_file("cli"))


# --- config ----------------------------------------------------------------------


class ScanBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    a: Optional[float] = None
    b: Optional[List[float]] = None
    x_max: Optional[float] = None
    y_max: Optional[float] = None
    points: Optional[int] = Field(default=None, ge=2)


class MarkovBlock(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    beta1: float
    gamma: float
    lambda_: float = Field(alias="lambda")
    n_samples: int = Field(default=100_000, ge=1)
    strategies: int = Field(default=5000, ge=0)
    stop_probability: Optional[float] = None


class ExperimentConfig(BaseModel):
    """One experiment: a hierarchy source, its test or cost model, and command parameters."""

    model_config = ConfigDict(extra="forbid")

    hierarchy: Optional[Any] = None
    dyadic: Optional[int] = Field(default=None, ge=1)
    vine: Optional[int] = Field(default=None, ge=1)
    augment: bool = False
    c_star: float = Field(default=1.0, ge=0.0)

    cost_model: Optional[Dict[str, Any]] = None
    tests: Optional[Dict[str, Any]] = None

    strategy: Optional[Any] = None
    strategy_file: Optional[str] = None
    target: Optional[str] = None
    coverings: bool = False
    R: Optional[float] = None
    log_base: Optional[float] = None

    seed: Optional[int] = Field(default=None, ge=0)
    n: Optional[int] = Field(default=None, ge=1)
    stop_probability: Optional[float] = None
    order: str = "breadth"
    scan: ScanBlock = Field(default_factory=ScanBlock)
    markov: Optional[MarkovBlock] = None
    vine_tests: Optional[str] = None

    @model_validator(mode="after")
    def _one_hierarchy_source(self) -> "ExperimentConfig":
        given = [k for k in ("hierarchy", "dyadic", "vine") if getattr(self, k) is not None]
        if len(given) > 1:
            raise ValueError(f"give exactly one hierarchy source, got {', '.join(given)}")
        if self.strategy is not None and self.strategy_file is not None:
            raise ValueError("give the strategy inline or as a file, not both")
        return self


def _read_document(path: Path) -> Any:
    """JSON or YAML; YAML parses both."""
    try:
        return load_params(str(path))
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}", field="config") from e
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"malformed document {path}", field="config",
                          line=mark.line + 1 if mark is not None else None) from e


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    doc: Dict[str, Any] = {}
    if args.config:
        loaded = _read_document(Path(args.config))
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError("config must be a mapping", field="config")
        doc = dict(loaded or {})
        if doc.get("strategy_file"):
            doc["strategy_file"] = str(Path(args.config).parent / doc["strategy_file"])
    overrides = {
        "seed": args.seed,
        "dyadic": args.dyadic,
        "vine": args.vine,
        "c_star": args.cstar,
        "log_base": args.log_base,
        "vine_tests": args.tests,
        "n": args.n,
    }
    for key, value in overrides.items():
        if value is not None:
            doc[key] = value
    if args.dyadic is not None or args.vine is not None:
        doc.pop("hierarchy", None)
        doc.pop("vine" if args.dyadic is not None else "dyadic", None)
    if args.psi is not None:
        doc.setdefault("cost_model", {})
        doc["cost_model"] = dict(doc["cost_model"] or {}, psi=args.psi)
    try:
        return ExperimentConfig(**doc)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigError(first["msg"], field=field) from e


# --- builders ----------------------------------------------------------------------


def _hierarchy(cfg: ExperimentConfig, augmented: Optional[bool] = None) -> Hierarchy:
    if cfg.dyadic is not None:
        h = dyadic(cfg.dyadic, unit_post_cost=cfg.c_star)
    elif cfg.vine is not None:
        h = vine_hierarchy(cfg.vine, unit_post_cost=cfg.c_star)
    elif cfg.hierarchy is not None:
        h = build_hierarchy(cfg.hierarchy, unit_post_cost=cfg.c_star)
    else:
        raise ConfigError("no hierarchy given", field="hierarchy")
    want = cfg.augment if augmented is None else augmented
    return augment(h) if want else h


def _cost_model(cfg: ExperimentConfig) -> CostModel:
    block = dict(cfg.cost_model or {})
    block.setdefault("c_star", cfg.c_star)
    return CostModel.from_config(block)


def _test_model(cfg: ExperimentConfig, h: Hierarchy) -> TestModel:
    if cfg.tests is not None:
        return TestModel.fixed(h, cfg.tests)
    if cfg.cost_model is not None:
        return TestModel.variable(_cost_model(cfg))
    raise ConfigError("give fixed tests or a cost model", field="tests")


def _require_seed(cfg: ExperimentConfig) -> int:
    if cfg.seed is None:
        raise ConfigError("stochastic command needs a seed", field="seed")
    return cfg.seed


class Output:
    def __init__(self, args: argparse.Namespace, cfg: ExperimentConfig):
        self.dir = Path(args.out)
        self.fmt = args.format
        self.command = args.command
        self.manifest = make_manifest(args.command, cfg.model_dump(by_alias=True), cfg.seed)

    def emit(self, payload: Any, header: List[str], rows: List[list], name: Optional[str] = None) -> Path:
        stem = name or self.command
        if self.fmt == "csv":
            path = write_csv(self.dir / f"{stem}.csv", header, rows, self.manifest)
        else:
            path = write_json(self.dir / f"{stem}.json", payload, self.manifest)
        logger.info("wrote %s", path)
        return path


# --- commands ----------------------------------------------------------------------


def cmd_evaluate(cfg: ExperimentConfig, out: Output) -> int:
    h = _hierarchy(cfg)
    t = _test_model(cfg, h)
    if cfg.strategy_file is not None:
        doc = _read_document(Path(cfg.strategy_file))
    elif cfg.strategy is not None:
        doc = cfg.strategy
    else:
        raise ConfigError("evaluate needs a strategy", field="strategy")
    s = strategy_from_dict(doc, h)
    report = covering_decomposition(s, h, t) if cfg.coverings else expected_cost(s, h, t, target=cfg.target)
    payload = report.to_dict(h)
    header, rows = report.csv_rows()
    if cfg.R is not None or cfg.log_base is not None:
        base = cfg.log_base if cfg.log_base is not None else float(np.e)
        payload["usage_cost"] = usage_cost(s, h, t, R=cfg.R if cfg.R is not None else 1.0, base=base)
        header, rows = header + ["usage_cost"], [rows[0] + [payload["usage_cost"]]]
    out.emit(payload, header, rows)
    print(f"total={report.total!r}")
    return 0


def cmd_ctf(cfg: ExperimentConfig, out: Output) -> int:
    if cfg.tests is not None:
        h = _hierarchy(cfg)
        t = TestModel.fixed(h, cfg.tests)
        total = ctf.ctf_cost_fixed(h, t)
        s = ctf.ctf_strategy(h, t, order=cfg.order)
        payload: Dict[str, Any] = {"total_cost": total, "strategy": strategy_to_dict(s, h)}
        if not h.augmented:
            payload["false_alarm"] = ctf.false_alarm_prob(h, t)
        out.emit(payload, ["total_cost"], [[total]])
        print(f"total={total!r}")
        return 0
    h = _hierarchy(cfg, augmented=True)
    result = ctf.assign_optimal_powers(h, _cost_model(cfg))
    header, rows = result.csv_rows()
    out.emit(result.to_dict(), header, rows)
    print(f"total={result.total_cost!r}")
    return 0


def cmd_check(cfg: ExperimentConfig, out: Output) -> int:
    h = _hierarchy(cfg, augmented=True)
    reports: List[verify.ConditionReport] = []
    if cfg.tests is not None:
        t = TestModel.fixed(h, cfg.tests)
        reports += [verify.check_prop1(h, t), verify.check_corollary1(h, t), verify.check_theorem3(h, t)]
    if cfg.cost_model is not None:
        m = _cost_model(cfg)
        powers = ctf.assign_optimal_powers(h, m).per_attribute_power
        reports.append(verify.check_corollary2(h, m, powers))
    if not reports:
        raise ConfigError("check needs fixed tests or a cost model", field="tests")
    rows = [[r.condition, r.holds, r.margin, r.witness] for r in reports]
    out.emit([r.to_dict() for r in reports], ["condition", "holds", "margin", "witness"], rows)
    for r in reports:
        print(f"{r.condition}: holds={r.holds} margin={r.margin!r}")
    return 0


def cmd_scan(cfg: ExperimentConfig, out: Output) -> int:
    psi = _cost_model(cfg).psi
    block = cfg.scan
    report = verify.switching_scan(psi, a=block.a, bs=block.b, x_max=block.x_max, y_max=block.y_max, points=block.points)
    header, rows = report.csv_rows()
    write_csv(out.dir / "scan_surface.csv", header, rows, out.manifest)
    out.emit(report.to_dict(), ["max_delta", "violations"], [[report.details["max_delta"], report.details["violations"]]])
    print(f"max_delta={report.details['max_delta']!r} violations={report.details['violations']}")
    return 0


def cmd_sample(cfg: ExperimentConfig, out: Output) -> int:
    seed = _require_seed(cfg)
    h = _hierarchy(cfg)
    t = _test_model(cfg, h)
    report = search.random_sample(h, t, cfg.n or 1000, seed, stop_probability=cfg.stop_probability)
    payload = report.to_dict()
    payload["best_strategy"] = strategy_to_dict(report.best_strategy, h)
    header, rows = report.csv_rows()
    out.emit(payload, header, rows)
    print(f"min={report.min_cost!r} ctf={report.ctf_cost!r}")
    return 0


def cmd_markov(cfg: ExperimentConfig, out: Output) -> int:
    seed = _require_seed(cfg)
    if cfg.markov is None:
        raise ConfigError("markov needs a markov block", field="markov")
    h = _hierarchy(cfg)
    m = _cost_model(cfg)
    block = cfg.markov
    field = markov.MarkovTestField(block.beta1, block.gamma, block.lambda_)
    stop = block.stop_probability
    if stop is None:
        stop = float(get_settings().module("search")["stop_probability"])
    strategies = [ctf.ctf_strategy(h)]
    for i in range(block.strategies):
        rng = np.random.default_rng([seed, 1, i])
        strategies.append(search.sample_skeleton(h, rng, stop))
    report = markov.markov_simulate(h, field, m, strategies, block.n_samples, seed)
    payload = report.to_dict(h)
    best = min(range(len(strategies)), key=lambda i: (report.estimates[i].mean, i))
    payload["ctf_beaten"] = report.beats(best, 0)
    payload["best_strategy"] = strategy_to_dict(strategies[best], h)
    header, rows = report.csv_rows()
    out.emit(payload, header, rows)
    print(f"ctf={report.estimates[0].mean!r} best={report.estimates[best].mean!r} ctf_beaten={payload['ctf_beaten']}")
    return 0


def cmd_dp(cfg: ExperimentConfig, out: Output) -> int:
    h = _hierarchy(cfg)
    t = _test_model(cfg, h)
    result = search.exact_optimum_dp(h, t)
    payload = {"total_cost": result.cost, "states": result.states, "strategy": strategy_to_dict(result.strategy, h)}
    out.emit(payload, ["total_cost", "states"], [[result.cost, result.states]])
    print(f"total={result.cost!r}")
    return 0


def cmd_vine(cfg: ExperimentConfig, out: Output) -> int:
    if cfg.vine_tests is None:
        raise ConfigError("vine needs --tests c1:b1,c2:b2,...", field="vine_tests")
    v = vine.VineInstance.parse(cfg.vine_tests, cfg.c_star)
    ordering, cost = vine.optimal_order(v)
    names = [("perfect" if k == v.perfect else f"t{k + 1}") for k in ordering]
    payload: Dict[str, Any] = {"ordering": names, "cost": cost}
    if len(v.tests) <= get_settings().guards.brute_force_vine:
        payload["brute_force_cost"] = vine.brute_force_order(v)[1]
    out.emit(payload, ["ordering", "cost"], [[" ".join(names), cost]])
    print(f"ordering={' '.join(names)} cost={cost!r}")
    return 0


COMMANDS: Dict[str, Callable[[ExperimentConfig, Output], int]] = {
    "evaluate": cmd_evaluate,
    "ctf": cmd_ctf,
    "check": cmd_check,
    "scan": cmd_scan,
    "sample": cmd_sample,
    "markov": cmd_markov,
    "dp": cmd_dp,
    "vine": cmd_vine,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiertest", description="Hierarchical testing strategies and their costs.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="experiment config (JSON or YAML)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--format", choices=("json", "csv"), default="json")
    parser.add_argument("--dyadic", type=int, metavar="L", help="regular binary hierarchy with L levels")
    parser.add_argument("--vine", type=int, metavar="L", help="single-pattern chain with L levels")
    parser.add_argument("--tests", help="vine tests as cost:power pairs, comma separated")
    parser.add_argument("--cstar", type=float, help="postprocessing cost per pattern")
    parser.add_argument("--psi", help="power function kind (psi1..psi7, harmonic)")
    parser.add_argument("--n", type=int, help="number of sampled strategies")
    parser.add_argument("--log-base", dest="log_base", type=float, help="logarithm base of the usage cost")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logger.info("hiertest %s started", args.command)
    try:
        cfg = load_config(args)
        code = COMMANDS[args.command](cfg, Output(args, cfg))
    except AppException as e:
        logger.error("%s failed: %s", args.command, e)
        return e.exit_code
    except Exception:
        logger.exception("%s failed unexpectedly", args.command)
        return 1
    logger.info("hiertest %s finished", args.command)
    return code


if __name__ == "__main__":
    sys.exit(main())
