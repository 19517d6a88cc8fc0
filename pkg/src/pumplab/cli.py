"""Command-line pipeline: ingest, featurize, train, evaluate, backtest, simulate.

Every command is a pure function of (input files, resolved config, seed):
identical inputs produce byte-identical outputs regardless of --threads.
Each run writes its outputs plus a manifest.json recording the tool version,
the resolved config and its hash, and checksums of all inputs and outputs.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 model error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field, fields
from decimal import Decimal
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .backtest import (
    StrategyConfig,
    backtest_summary,
    run_strategy,
    serialize_backtest,
)
from .errors import ConfigError, DataError, ModelError, PumplabError
from .evaluation import serialize_curve, threshold_sweep
from .events import PumpEvent, dedup_events, parse_announcements, serialize_events
from .features import (
    FEATURE_NAMES,
    Dataset,
    SplitTag,
    build_dataset,
    chrono_split,
    parse_dataset,
    serialize_dataset,
)
from .forest import RF_PRESETS, Forest, RFConfig, feature_importance, predict_votes, train_forest
from .glm import GLM_PRESETS, GlmConfig, GlmModel, fit_lasso_logit, predict_probs
from .marketdata import (
    CandleStore,
    parse_candles,
    parse_coin_meta,
    parse_iso,
    parse_ticks,
    validate_series,
)
from .model_io import deserialize_model, serialize_model
from .synth import SynthConfig, gen_scenario

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass
class RunConfig:
    # inputs
    candles: Optional[str] = None
    ticks: Optional[str] = None
    announcements: Optional[str] = None
    coins: Optional[str] = None
    dataset: Optional[str] = None
    model: Optional[str] = None
    # run
    out: Optional[str] = None
    seed: int = 0
    threads: int = 1
    force: bool = False
    # model selection
    preset: Optional[str] = None
    kind: Optional[str] = None          # "rf" | "glm" for explicit parameters
    n_true: Optional[int] = None
    n_false: Optional[int] = None
    n_trees: Optional[int] = None
    mtry: Optional[int] = None
    min_leaf: Optional[int] = None
    max_depth: Optional[int] = None
    lam: Optional[float] = None
    tolerance: Optional[float] = None
    max_iterations: Optional[int] = None
    # chronological split
    train_end: Optional[str] = None
    validation_end: Optional[str] = None
    part: Optional[str] = None          # train | validation | test | all
    # strategy
    threshold: float = 0.3
    baseline_qty: str = "0.37"
    gain_haircut: str = "0.5"
    fee_rate: str = "0.002"
    sweep_step: float = 0.01
    # synthetic scenario
    synth: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        out = {}
        for f in fields(self):
            out[f.name] = getattr(self, f.name)
        return out


_TOML_SECTIONS = {
    "inputs": ("candles", "ticks", "announcements", "coins", "dataset", "model"),
    "run": ("out", "seed", "threads", "force"),
    "model": ("preset", "kind", "n_true", "n_false", "n_trees", "mtry",
              "min_leaf", "max_depth", "lam", "tolerance", "max_iterations"),
    "split": ("train_end", "validation_end", "part"),
    "strategy": ("threshold", "baseline_qty", "gain_haircut", "fee_rate", "sweep_step"),
}


def load_config(path: Optional[str], flags: argparse.Namespace) -> RunConfig:
    """Build the resolved config: TOML file first, CLI flags win."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"bad config file {path}: {exc}") from None
        for section, keys in _TOML_SECTIONS.items():
            body = doc.get(section, {})
            if not isinstance(body, dict):
                raise ConfigError(f"config section [{section}] must be a table")
            for key, value in body.items():
                if key == "lambda":
                    key = "lam"
                if key not in keys:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                setattr(cfg, key, value)
        synth = doc.get("synth", {})
        if not isinstance(synth, dict):
            raise ConfigError("config section [synth] must be a table")
        cfg.synth = dict(synth)
    for name, value in vars(flags).items():
        if name in ("command", "config", "func") or value is None:
            continue
        if name == "force":
            if value:
                cfg.force = True
            continue
        setattr(cfg, name, value)
    if cfg.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg


# --------------------------------------------------------------------------
# manifest plumbing

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(value):
    if isinstance(value, Decimal):
        return str(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


class Run:
    """Output directory plus manifest bookkeeping for one command."""

    def __init__(self, command: str, cfg: RunConfig, require_out: bool = True):
        self.command = command
        self.cfg = cfg
        if cfg.out is None:
            if require_out:
                raise ConfigError("--out DIR is required")
            self.out = None
        else:
            self.out = Path(cfg.out)
            self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, dict] = {}
        self.outputs: list[Path] = []

    def note_input(self, name: str, path: Optional[str]) -> Optional[Path]:
        if path is None:
            return None
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"input {name} does not exist: {path}")
        self.inputs[name] = {"path": path, "sha256": _sha256(p)}
        return p

    def write_text(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        self.outputs.append(path)
        return path

    def register(self, path: Path) -> None:
        self.outputs.append(path)

    def finish(self) -> None:
        config = _jsonable(self.cfg.resolved())
        config_hash = hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()).hexdigest()
        manifest = {
            "tool": "pumplab",
            "version": __version__,
            "command": self.command,
            "seed": self.cfg.seed,
            "config_hash": config_hash,
            "config": config,
            "inputs": {k: self.inputs[k] for k in sorted(self.inputs)},
            "outputs": {p.name: _sha256(p) for p in sorted(self.outputs)},
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


# --------------------------------------------------------------------------
# shared loading steps

def _load_candles(run: Run, cfg: RunConfig) -> CandleStore:
    path = run.note_input("candles", cfg.candles)
    if path is None:
        raise ConfigError("a candles CSV is required (--candles or [inputs] candles)")
    return CandleStore(parse_candles(path.read_text()))


def _load_events(run: Run, cfg: RunConfig) -> list[PumpEvent]:
    path = run.note_input("announcements", cfg.announcements)
    if path is None:
        raise ConfigError("an announcements JSONL is required (--announcements)")
    events = dedup_events(parse_announcements(path.read_text()))
    if not events:
        raise DataError("no events after deduplication")
    return events


def _load_dataset(run: Run, cfg: RunConfig) -> Dataset:
    path = run.note_input("dataset", cfg.dataset)
    if path is None:
        raise ConfigError("a dataset CSV is required (--dataset)")
    return parse_dataset(path.read_text())


def _split_part(dataset: Dataset, cfg: RunConfig, default_part: str) -> Dataset:
    part = (cfg.part or default_part).lower()
    if part == "all":
        return dataset
    if cfg.train_end is None or cfg.validation_end is None:
        if part == default_part and cfg.part is None:
            return dataset
        raise ConfigError("split boundaries (train_end, validation_end) are required "
                          f"to select the {part!r} part")
    b1, b2 = parse_iso(cfg.train_end), parse_iso(cfg.validation_end)
    train, validation, test = chrono_split(dataset, (b1, b2))
    try:
        return {"train": train, "validation": validation, "test": test}[part]
    except KeyError:
        raise ConfigError(f"unknown split part {part!r}") from None


def _model_config(cfg: RunConfig):
    """Resolve the preset or explicit parameters into an RF or GLM config."""
    if cfg.preset is not None:
        name = cfg.preset.lower()
        if name in RF_PRESETS:
            base = RF_PRESETS[name]
            return RFConfig(
                n_true_per_tree=cfg.n_true or base.n_true_per_tree,
                n_false_per_tree=base.n_false_per_tree if cfg.n_false is None else cfg.n_false,
                n_trees=cfg.n_trees or base.n_trees,
                mtry=cfg.mtry or base.mtry,
                min_leaf=cfg.min_leaf or base.min_leaf,
                max_depth=base.max_depth if cfg.max_depth is None else cfg.max_depth,
                seed=cfg.seed,
            )
        if name in GLM_PRESETS:
            base = GLM_PRESETS[name]
            return GlmConfig(
                lam=base.lam if cfg.lam is None else cfg.lam,
                tolerance=cfg.tolerance or base.tolerance,
                max_iterations=cfg.max_iterations or base.max_iterations,
                seed=cfg.seed,
            )
        raise ConfigError(f"unknown preset {cfg.preset!r}; "
                          f"expected one of {sorted(RF_PRESETS) + sorted(GLM_PRESETS)}")
    kind = (cfg.kind or "").lower()
    if kind == "rf":
        if None in (cfg.n_true, cfg.n_false, cfg.n_trees):
            raise ConfigError("explicit rf model needs n_true, n_false and n_trees")
        return RFConfig(
            n_true_per_tree=cfg.n_true,
            n_false_per_tree=cfg.n_false,
            n_trees=cfg.n_trees,
            mtry=cfg.mtry or 7,
            min_leaf=cfg.min_leaf or 1,
            max_depth=cfg.max_depth,
            seed=cfg.seed,
        )
    if kind == "glm":
        if cfg.lam is None:
            raise ConfigError("explicit glm model needs lambda")
        return GlmConfig(
            lam=cfg.lam,
            tolerance=cfg.tolerance or 1e-7,
            max_iterations=cfg.max_iterations or 10_000,
            seed=cfg.seed,
        )
    raise ConfigError("select a model: --preset rf1|rf2|rf3|glm1|glm2|glm3, "
                      "or kind = 'rf'/'glm' with explicit parameters")


def _predict(model, dataset: Dataset) -> np.ndarray:
    X = np.vstack([obs.features.values for obs in dataset.observations]) \
        if dataset.observations else np.empty((0, len(FEATURE_NAMES)))
    if isinstance(model, Forest):
        return predict_votes(model, X)
    return predict_probs(model, X)


# --------------------------------------------------------------------------
# commands

def cmd_ingest(cfg: RunConfig) -> int:
    run = Run("ingest", cfg)
    store = _load_candles(run, cfg)
    reports = [validate_series(s) for s in store.all()]

    events = []
    if cfg.announcements is not None:
        events = _load_events(run, cfg)
        run.write_text("events.jsonl", serialize_events(events))
    n_ticks = 0
    if cfg.ticks is not None:
        tick_path = run.note_input("ticks", cfg.ticks)
        ticks = parse_ticks(tick_path.read_text())
        n_ticks = sum(len(v) for v in ticks.values())
    n_coins = 0
    if cfg.coins is not None:
        coin_path = run.note_input("coins", cfg.coins)
        n_coins = len(parse_coin_meta(coin_path.read_text()))

    lines = ["coin,exchange,candles,span_hours,missing_hours,gaps,zero_volume_runs,breaches"]
    for r in reports:
        lines.append(f"{r.coin},{r.exchange},{r.candle_count},{r.span_hours},"
                     f"{r.missing_hours},{len(r.gaps)},{len(r.zero_volume_runs)},"
                     f"{len(r.invariant_breaches)}")
    run.write_text("validation.csv", "\n".join(lines) + "\n")
    summary = {
        "series": len(reports),
        "candles": sum(r.candle_count for r in reports),
        "missing_hours": sum(r.missing_hours for r in reports),
        "invariant_breaches": sum(len(r.invariant_breaches) for r in reports),
        "events": len(events),
        "ticks": n_ticks,
        "coins": n_coins,
    }
    run.write_text("validation.json", json.dumps(summary, indent=2) + "\n")
    run.finish()
    print(f"ingest: {summary['series']} series, {summary['candles']} candles, "
          f"{summary['missing_hours']} missing hours, {summary['events']} events")
    return 0


def cmd_featurize(cfg: RunConfig) -> int:
    run = Run("featurize", cfg)
    store = _load_candles(run, cfg)
    events = _load_events(run, cfg)
    coin_path = run.note_input("coins", cfg.coins)
    if coin_path is None:
        raise ConfigError("a coin metadata JSONL is required (--coins)")
    metas = parse_coin_meta(coin_path.read_text())

    universes = []
    for event in events:
        universes.append([m for m in metas
                          if event.exchange in m.listed_on
                          and m.launch_time <= event.event_time])
    dataset = build_dataset(events, universes, store)
    run.write_text("dataset.csv", serialize_dataset(dataset))
    report = dataset.build_report
    summary = {
        "observations": len(dataset),
        "positives": dataset.n_positive,
        "events": len(events),
        "dropped_pumped_observations": len(report.dropped_events),
        "mean_candidates_per_event": (
            round(sum(report.candidate_counts.values()) / len(report.candidate_counts), 2)
            if report.candidate_counts else 0),
    }
    run.write_text("featurize.json", json.dumps(summary, indent=2) + "\n")
    run.finish()
    print(f"featurize: {summary['observations']} observations, "
          f"{summary['positives']} positive")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    run = Run("train", cfg)
    dataset = _split_part(_load_dataset(run, cfg), cfg, default_part="train")
    model_cfg = _model_config(cfg)

    if isinstance(model_cfg, RFConfig):
        model = train_forest(dataset, model_cfg, threads=cfg.threads)
        importance = feature_importance(model)
        lines = ["feature,mean_decrease_gini"]
        for name, value in zip(FEATURE_NAMES, importance):
            lines.append(f"{name},{value!r}")
        run.write_text("importance.csv", "\n".join(lines) + "\n")
        from .figures import plot_feature_weights
        fig_path = run.out / "importance.png"
        plot_feature_weights(FEATURE_NAMES, list(importance), fig_path,
                             "feature importance (mean decrease in Gini)")
        run.register(fig_path)
        echo = {
            "kind": "forest",
            "n_true_per_tree": model_cfg.n_true_per_tree,
            "n_false_per_tree": model_cfg.n_false_per_tree,
            "n_trees": model_cfg.n_trees,
            "mtry": model_cfg.mtry,
            "min_leaf": model_cfg.min_leaf,
            "max_depth": model_cfg.max_depth,
        }
    else:
        model = fit_lasso_logit(dataset, model_cfg)
        lines = ["feature,coefficient"]
        for name, value, std in zip(FEATURE_NAMES, model.coefficients, model.std_coefficients):
            cell = "-" if std == 0.0 else repr(float(value))
            lines.append(f"{name},{cell}")
        lines.append(f"(Intercept),{model.intercept!r}")
        run.write_text("coefficients.csv", "\n".join(lines) + "\n")
        from .figures import plot_feature_weights
        fig_path = run.out / "coefficients.png"
        plot_feature_weights(FEATURE_NAMES, [float(v) for v in model.coefficients],
                             fig_path, "unstandardized coefficients")
        run.register(fig_path)
        echo = {"kind": "lasso_logit", "lambda": model_cfg.lam,
                "tolerance": model_cfg.tolerance,
                "max_iterations": model_cfg.max_iterations,
                "active_coefficients": int(len(model.active_set))}

    run.write_text("model.json", serialize_model(model))
    echo.update({"preset": cfg.preset, "training_rows": len(dataset),
                 "training_positives": dataset.n_positive})
    run.write_text("train.json", json.dumps(echo, indent=2) + "\n")
    run.finish()
    print(f"train: {echo['kind']} on {len(dataset)} rows "
          f"({dataset.n_positive} positive), preset={cfg.preset or 'explicit'}")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    run = Run("evaluate", cfg)
    dataset = _split_part(_load_dataset(run, cfg), cfg, default_part="all")
    model_path = run.note_input("model", cfg.model)
    if model_path is None:
        raise ConfigError("a model file is required (--model)")
    model = deserialize_model(model_path.read_text())
    scores = _predict(model, dataset)
    labels = [obs.label for obs in dataset.observations]
    curve = threshold_sweep(labels, scores, step=cfg.sweep_step)
    run.write_text("threshold_sweep.csv", serialize_curve(curve))
    from .figures import plot_threshold_curve
    fig_path = run.out / "metrics.png"
    plot_threshold_curve(curve, fig_path)
    run.register(fig_path)
    run.finish()
    print(f"evaluate: {len(dataset)} rows, AUC = {curve.auc:.6f}")
    return 0


def cmd_backtest(cfg: RunConfig) -> int:
    run = Run("backtest", cfg)
    dataset = _split_part(_load_dataset(run, cfg), cfg, default_part="all")
    model_path = run.note_input("model", cfg.model)
    if model_path is None:
        raise ConfigError("a model file is required (--model)")
    model = deserialize_model(model_path.read_text())
    store = _load_candles(run, cfg)

    scores = _predict(model, dataset)
    by_event: dict[str, tuple[PumpEvent, dict]] = {}
    for obs, score in zip(dataset.observations, scores):
        if obs.event_id not in by_event:
            _, exchange, pumped = obs.event_id.split("/")
            event = PumpEvent(pumped, exchange, obs.event_time,
                              channels=frozenset(["backtest"]))
            by_event[obs.event_id] = (event, {})
        by_event[obs.event_id][1][obs.coin] = float(score)

    strategy = StrategyConfig(
        threshold=cfg.threshold,
        baseline_qty=Decimal(cfg.baseline_qty),
        gain_haircut=Decimal(cfg.gain_haircut),
        fee_rate=Decimal(cfg.fee_rate),
    )
    report = run_strategy(list(by_event.values()), store, strategy)
    run.write_text("backtest.csv", serialize_backtest(report))
    run.write_text("backtest.json", backtest_summary(report))
    from .figures import plot_backtest
    fig_path = run.out / "backtest.png"
    plot_backtest(report, fig_path)
    run.register(fig_path)
    run.finish()
    if report.no_trades:
        print("backtest: no trades (no vote cleared the threshold)")
    else:
        print(f"backtest: {len(report.positions)} positions, invested "
              f"{report.total_invested} BTC, gained {report.total_gained} BTC, "
              f"return {float(report.return_ratio) * 100:.2f}%")
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.out is None:
        raise ConfigError("--out DIR is required")
    out = Path(cfg.out)
    if out.exists() and any(out.iterdir()) and not cfg.force:
        raise ConfigError(f"output directory {out} is not empty; pass --force to overwrite")
    known = {f.name for f in fields(SynthConfig) if f.name != "seed"}
    unknown = set(cfg.synth) - known
    if unknown:
        raise ConfigError(f"unknown [synth] keys: {sorted(unknown)}")
    params = dict(cfg.synth)
    for key in ("cap_range", "spike_range"):
        if key in params:
            params[key] = tuple(params[key])
    try:
        synth_cfg = SynthConfig(seed=cfg.seed, **params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    run = Run("simulate", cfg)
    scenario = gen_scenario(synth_cfg, run.out)
    for name in ("candles.csv", "ticks.csv", "announcements.jsonl",
                 "coins.jsonl", "ground_truth.jsonl"):
        run.register(run.out / name)
    run.finish()
    print(f"simulate: {len(scenario.coins)} coins, {len(scenario.ground_truth)} events, "
          f"seed {cfg.seed}")
    return 0


# --------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse exits 2 by default; usage errors are exit code 1 here
        raise ConfigError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="pumplab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file; flags override it")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--threads", type=int, help="worker cap; never affects results")
        p.add_argument("--force", action="store_true", default=None,
                       help="overwrite a non-empty output directory")

    p = sub.add_parser("ingest", help="parse and validate input files")
    common(p)
    p.add_argument("--candles")
    p.add_argument("--ticks")
    p.add_argument("--announcements")
    p.add_argument("--coins")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("featurize", help="build the labeled feature dataset")
    common(p)
    p.add_argument("--candles")
    p.add_argument("--announcements")
    p.add_argument("--coins")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a forest or lasso-logit model")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--preset", help="rf1|rf2|rf3|glm1|glm2|glm3")
    p.add_argument("--n-true", dest="n_true", type=int)
    p.add_argument("--n-false", dest="n_false", type=int)
    p.add_argument("--n-trees", dest="n_trees", type=int)
    p.add_argument("--mtry", type=int)
    p.add_argument("--min-leaf", dest="min_leaf", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--kind", help="rf or glm, for explicit parameters")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--train-end", dest="train_end")
    p.add_argument("--validation-end", dest="validation_end")
    p.add_argument("--part", help="train|validation|test|all (default train)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="threshold sweep and ROC AUC for a model")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--model")
    p.add_argument("--train-end", dest="train_end")
    p.add_argument("--validation-end", dest="validation_end")
    p.add_argument("--part", help="train|validation|test|all (default all)")
    p.add_argument("--sweep-step", dest="sweep_step", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("backtest", help="run the vote-proportional strategy")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--model")
    p.add_argument("--candles")
    p.add_argument("--threshold", type=float)
    p.add_argument("--baseline-qty", dest="baseline_qty")
    p.add_argument("--gain-haircut", dest="gain_haircut")
    p.add_argument("--fee-rate", dest="fee_rate")
    p.add_argument("--train-end", dest="train_end")
    p.add_argument("--validation-end", dest="validation_end")
    p.add_argument("--part", help="train|validation|test|all (default all)")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("simulate", help="generate a synthetic market scenario")
    common(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, args)
        return args.func(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 3
    except PumplabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
