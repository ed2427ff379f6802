"""Command-line entry point: ``fairtab {ingest|train|generate|evaluate|repair|sweep}``.

Settings resolve in this order, later winning: built-in defaults, the
recipe's per-dataset defaults, ``<out>/run.cfg`` (for commands that consume
an earlier run), ``--config FILE``, explicit flags.

Config files are flat ``key = value`` lines; ``#`` starts a comment. Lists
(``grid``, ``classifiers``) are comma-separated. Keys:

  recipe, data, seed, replicates, split_fraction, split_seed, subsample,
  classifiers, grid, n_generate, crdi_lambda, t1, t2, n_crit, batch_size,
  lambda_p, lambda_f, alpha, beta1, beta2, tau, output_distribution

``subsample = 0`` and ``n_generate = 0`` mean "all rows" and "as many rows
as the training split".
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd

from . import crdi
from .evalharness import CLASSIFIERS, accuracy, evaluate, format_table, reports_frame, split
from .fairness import FairnessSpec, UndefinedMetricError, data_ds
from .nets import load_params, save_params
from .recipes import RecipeError, get_recipe
from .tabular import FittedTransformer, TableSchema
from .train import TrainConfig, Trainer, generate

log = logging.getLogger("fairtab")

CONFIG_FILE = "run.cfg"
TRANSFORMER_FILE = "transformer.json"
PARAMS_FILE = "params.npz"
TRAINLOG_FILE = "trainlog.csv"
SYNTHETIC_FILE = "synthetic.csv"
REPAIRED_FILE = "repaired.csv"
REPORT_FILE = "report.csv"
SWEEP_FILE = "sweep.csv"
SWEEP_RUNS_FILE = "sweep_runs.csv"


class CommandError(RuntimeError):
    """A user-facing failure: bad config, missing artifacts, unreadable input."""


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in _str_list(text))


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


def _optional_str(text: str) -> str | None:
    return None if text.strip().lower() in ("", "none") else text.strip()


RUN_KEYS: dict[str, Callable[[str], Any]] = {
    "recipe": str,
    "data": _optional_str,
    "seed": int,
    "replicates": int,
    "split_fraction": float,
    "split_seed": int,
    "subsample": int,
    "classifiers": _str_list,
    "grid": _float_list,
    "n_generate": int,
    "crdi_lambda": _optional_float,
}
TRAIN_KEYS: dict[str, Callable[[str], Any]] = {
    "t1": int,
    "t2": int,
    "n_crit": int,
    "batch_size": int,
    "lambda_p": float,
    "lambda_f": float,
    "alpha": float,
    "beta1": float,
    "beta2": float,
    "tau": float,
    "output_distribution": str,
}
CONFIG_KEYS = {**RUN_KEYS, **TRAIN_KEYS}


@dataclass
class RunConfig:
    recipe: str = "adult"
    data: str | None = None
    seed: int = 0
    replicates: int = 1
    split_fraction: float = 0.9
    split_seed: int = 0
    subsample: int = 0
    classifiers: tuple[str, ...] = ("dtc",)
    grid: tuple[float, ...] = ()
    n_generate: int = 0
    crdi_lambda: float | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    out: Path = Path("run")

    def validate(self) -> None:
        get_recipe(self.recipe)
        if self.replicates < 1:
            raise CommandError("replicates must be >= 1")
        if self.subsample < 0 or self.n_generate < 0:
            raise CommandError("subsample and n_generate must be >= 0")
        if self.crdi_lambda is not None and not 0.0 <= self.crdi_lambda <= 1.0:
            raise CommandError("crdi_lambda must lie in [0, 1]")
        unknown = [c for c in self.classifiers if c not in CLASSIFIERS]
        if unknown or not self.classifiers:
            raise CommandError(f"classifiers must be drawn from {sorted(CLASSIFIERS)}, got {list(self.classifiers)}")
        if self.data is not None and not Path(self.data).exists():
            raise CommandError(f"data file {self.data} does not exist")
        self.train.validate()

    def as_values(self) -> dict[str, Any]:
        values = {f.name: getattr(self, f.name) for f in fields(self) if f.name in RUN_KEYS}
        values.update({k: v for k, v in asdict(self.train).items() if k in TRAIN_KEYS})
        return values

    @property
    def repair_lambda(self) -> float:
        if self.crdi_lambda is not None:
            return self.crdi_lambda
        return get_recipe(self.recipe).defaults.crdi_lambda

    def seeds(self) -> list[int]:
        return [self.seed + r for r in range(self.replicates)]


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_config(path: str | Path) -> dict[str, Any]:
    """Parse a flat ``key = value`` file into typed values."""
    path = Path(path)
    if not path.exists():
        raise CommandError(f"config file {path} does not exist")
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, text = line.partition("=")
        key = key.strip()
        if not sep:
            raise CommandError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        if key not in CONFIG_KEYS:
            raise CommandError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](text.strip())
        except ValueError as exc:
            raise CommandError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
    return values


def write_config(path: str | Path, cfg: RunConfig) -> None:
    lines = [f"{key} = {_format_value(value)}" for key, value in cfg.as_values().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def resolve_config(layers: Sequence[dict[str, Any]], out: Path) -> RunConfig:
    """Merge value layers (later wins) on top of the recipe defaults."""
    merged: dict[str, Any] = {}
    for layer in layers:
        merged.update(layer)
    recipe = get_recipe(merged.get("recipe", RunConfig.recipe))
    train_values = {
        "t1": recipe.defaults.t1,
        "t2": recipe.defaults.t2,
        "lambda_f": recipe.defaults.lambda_f,
        **{k: v for k, v in merged.items() if k in TRAIN_KEYS},
        "seed": merged.get("seed", RunConfig.seed),
    }
    run_values = {k: v for k, v in merged.items() if k in RUN_KEYS}
    try:
        cfg = RunConfig(**run_values, train=TrainConfig(**train_values), out=out)
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Pipeline pieces
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    spec: FairnessSpec
    schema: TableSchema
    table: pd.DataFrame
    train: pd.DataFrame
    test: pd.DataFrame


def prepare(cfg: RunConfig) -> PreparedData:
    """Ingest, optionally subsample, and split; deterministic in the config."""
    table, _ = get_recipe(cfg.recipe).ingest(cfg.data)
    if cfg.subsample and cfg.subsample < len(table):
        table = table.sample(n=cfg.subsample, random_state=cfg.split_seed).reset_index(drop=True)
    recipe = get_recipe(cfg.recipe)
    schema = TableSchema.infer(
        table,
        categorical=recipe.categorical,
        protected=recipe.protected,
        underprivileged=recipe.underprivileged,
        label=recipe.label,
        favorable=recipe.favorable,
    )
    train, test = split(table, cfg.split_fraction, cfg.split_seed)
    return PreparedData(FairnessSpec.from_schema(schema), schema, table, train, test)


def _conform(table: pd.DataFrame, like: pd.DataFrame) -> pd.DataFrame:
    """Cast columns of a CSV read back from disk to the dtypes of ``like``."""
    if list(table.columns) != list(like.columns):
        raise CommandError(f"columns {list(table.columns)} do not match the training table {list(like.columns)}")
    return table.astype(like.dtypes.to_dict())


def _safe_ds(table: pd.DataFrame, spec: FairnessSpec) -> tuple[float, str]:
    try:
        return data_ds(table, spec), ""
    except UndefinedMetricError as exc:
        return float("nan"), str(exc)


@dataclass
class SweepCell:
    seed: int
    lambda_f: float
    ds: float
    accuracy: float
    real_accuracy: float
    error: str = ""

    @property
    def layoff(self) -> float:
        return self.real_accuracy - self.accuracy


def lambda_sweep(
    data: PreparedData,
    train_config: TrainConfig,
    grid: Sequence[float],
    seeds: Sequence[int],
    classifier: str = "dtc",
    n_generate: int = 0,
) -> list[SweepCell]:
    """Phase I once per seed, then one Phase II continuation per ``lambda_f``.

    Phase I does not depend on ``lambda_f``, so forking after it gives
    exactly the runs that full trainings would.
    """
    if not grid:
        raise CommandError("the lambda_f grid is empty")
    truth = (data.test[data.spec.label] == data.spec.favorable).to_numpy()
    real_model = CLASSIFIERS[classifier](data.train, data.spec, 0)
    real_acc = accuracy(truth, real_model.predict_favorable(data.test))
    n = n_generate or len(data.train)
    cells = []
    for seed in seeds:
        config = TrainConfig(**{**asdict(train_config), "seed": seed})
        base = Trainer(data.train, data.schema, config)
        base.run_phase("I", config.t1)
        for lf in grid:
            try:
                run = base.clone()
                run.config.lambda_f = float(lf)
                run.run_phase("II", config.t2)
                synthetic = generate(run.generator, run.fitted, n, seed=seed)
                ds, err = _safe_ds(synthetic, data.spec)
                model = CLASSIFIERS[classifier](synthetic, data.spec, 0)
                acc = accuracy(truth, model.predict_favorable(data.test))
                cells.append(SweepCell(seed, float(lf), ds, acc, real_acc, err))
            except Exception as exc:  # one failed cell must not sink the sweep
                log.warning("sweep cell seed=%d lambda_f=%s failed: %s", seed, lf, exc)
                cells.append(SweepCell(seed, float(lf), float("nan"), float("nan"), real_acc, f"{type(exc).__name__}: {exc}"))
            log.info("seed %d lambda_f %s: DS %.4f accuracy %.4f", seed, lf, cells[-1].ds, cells[-1].accuracy)
    return cells


def summarize_sweep(cells: Sequence[SweepCell]) -> pd.DataFrame:
    frame = pd.DataFrame(
        [{**asdict(c), "layoff": c.layoff, "abs_ds": abs(c.ds)} for c in cells]
    )
    rows = []
    for lf, group in frame.groupby("lambda_f", sort=False):
        row = {"lambda_f": lf, "replicates": len(group)}
        for col in ("ds", "abs_ds", "accuracy", "layoff"):
            row[f"{col}_mean"] = float(np.nanmean(group[col])) if group[col].notna().any() else float("nan")
            row[f"{col}_std"] = float(np.nanstd(group[col])) if group[col].notna().any() else float("nan")
        row["real_accuracy"] = float(group["real_accuracy"].iloc[0])
        row["errors"] = "; ".join(e for e in group["error"] if e)
        rows.append(row)
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _write_csv(table: pd.DataFrame, path: Path) -> None:
    table.to_csv(path, index=False, lineterminator="\n")


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise CommandError(f"{path} not found; {hint}")
    return path


def cmd_ingest(cfg: RunConfig) -> None:
    """Clean the input and write table, train and test CSVs."""
    data = prepare(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_csv(data.table, cfg.out / "table.csv")
    _write_csv(data.train, cfg.out / "train.csv")
    _write_csv(data.test, cfg.out / "test.csv")
    write_config(cfg.out / CONFIG_FILE, cfg)
    ds, _ = _safe_ds(data.train, data.spec)
    print(f"{cfg.recipe}: {len(data.table)} rows x {data.table.shape[1]} columns "
          f"(train {len(data.train)}, test {len(data.test)}); training DS {ds:.4f}")


def cmd_train(cfg: RunConfig) -> None:
    """Fit the transformer and run both training phases."""
    data = prepare(cfg)
    trainer = Trainer(data.train, data.schema, cfg.train).fit()
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_config(cfg.out / CONFIG_FILE, cfg)
    trainer.fitted.save(cfg.out / TRANSFORMER_FILE)
    save_params(cfg.out / PARAMS_FILE, trainer.generator, trainer.critic, meta={"config": {
        k: list(v) if isinstance(v, tuple) else v for k, v in cfg.as_values().items()
    }})
    trainer.log.to_csv(cfg.out / TRAINLOG_FILE)
    last = trainer.log.records[-1] if trainer.log.records else None
    summary = f"; last epoch {last.epoch} ({last.phase}) batch DS {last.batch_ds:.4f}" if last else ""
    print(f"trained {len(trainer.log)} epochs on {len(data.train)} rows{summary}; artifacts in {cfg.out}")


def cmd_generate(cfg: RunConfig) -> None:
    """Sample synthetic rows from a trained generator."""
    hint = "run `fairtab train` with the same --out first"
    fitted = FittedTransformer.load(_require(cfg.out / TRANSFORMER_FILE, hint))
    gen, _, _ = load_params(_require(cfg.out / PARAMS_FILE, hint))
    n = cfg.n_generate or len(prepare(cfg).train)
    synthetic = generate(gen, fitted, n, seed=cfg.seed)
    _write_csv(synthetic, cfg.out / SYNTHETIC_FILE)
    print(f"wrote {n} synthetic rows to {cfg.out / SYNTHETIC_FILE}")


def cmd_repair(cfg: RunConfig) -> None:
    """Write a CRDI-repaired copy of the training split."""
    data = prepare(cfg)
    repaired = crdi.repair(data.train, data.spec, lam=cfg.repair_lambda)
    cfg.out.mkdir(parents=True, exist_ok=True)
    if not (cfg.out / CONFIG_FILE).exists():
        write_config(cfg.out / CONFIG_FILE, cfg)
    _write_csv(repaired, cfg.out / REPAIRED_FILE)
    ds, _ = _safe_ds(repaired, data.spec)
    print(f"repaired {len(repaired)} rows at lambda {cfg.repair_lambda}; DS {ds:.4f}")


def cmd_evaluate(cfg: RunConfig) -> None:
    """Compare original, synthetic and repaired training tables on the test split."""
    data = prepare(cfg)
    path = _require(cfg.out / SYNTHETIC_FILE, "run `fairtab generate` with the same --out first")
    synthetic = _conform(pd.read_csv(path), data.train)
    repaired = crdi.repair(data.train, data.spec, lam=cfg.repair_lambda)
    reports = []
    for variant, table in (("original", data.train), ("synthetic", synthetic), ("repaired", repaired)):
        reports += evaluate(table, data.test, data.spec, cfg.classifiers, cfg.seeds(), variant)
    _write_csv(reports_frame(reports), cfg.out / REPORT_FILE)
    print(format_table(reports))


def cmd_sweep(cfg: RunConfig) -> None:
    """Train across a grid of fairness weights and summarise DS and accuracy."""
    data = prepare(cfg)
    cells = lambda_sweep(data, cfg.train, cfg.grid, cfg.seeds(), cfg.classifiers[0], cfg.n_generate)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_config(cfg.out / CONFIG_FILE, cfg)
    _write_csv(pd.DataFrame([{**asdict(c), "layoff": c.layoff} for c in cells]), cfg.out / SWEEP_RUNS_FILE)
    summary = summarize_sweep(cells)
    _write_csv(summary, cfg.out / SWEEP_FILE)
    print(summary.to_string(index=False))


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "repair": cmd_repair,
    "sweep": cmd_sweep,
}
# commands that read artifacts of an earlier run start from its config
CONSUMERS = {"generate", "evaluate", "repair"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", help="run directory (default: ./run)")
    common.add_argument("--recipe", help="adult, bank, compas or law")
    common.add_argument("--data", help="input CSV (adult defaults to the bundled copy)")
    common.add_argument("--seed", type=int)
    common.add_argument("--replicates", type=int)
    common.add_argument("--split-fraction", dest="split_fraction", type=float)
    common.add_argument("--split-seed", dest="split_seed", type=int)
    common.add_argument("--subsample", type=int, help="keep this many rows before splitting (0 = all)")
    common.add_argument("--classifiers", type=_str_list, help="comma-separated: dtc,lr,mlp")
    common.add_argument("--grid", type=_float_list, help="comma-separated lambda_f values for sweep")
    common.add_argument("--n", dest="n_generate", type=int, help="rows to generate (0 = training size)")
    common.add_argument("--crdi-lambda", dest="crdi_lambda", type=float)
    common.add_argument("--t1", type=int)
    common.add_argument("--t2", type=int)
    common.add_argument("--lambda-f", dest="lambda_f", type=float)
    common.add_argument("--lambda-p", dest="lambda_p", type=float)
    common.add_argument("--batch-size", dest="batch_size", type=int)
    common.add_argument("--n-crit", dest="n_crit", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--output-distribution", dest="output_distribution", choices=("uniform", "normal"))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fairtab", description="Fair tabular data synthesis.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__ or name.replace("_", " "))
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    verbose = args.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(name)s: %(message)s")
    out = Path(args.pop("out", "run"))
    config_path = args.pop("config", None)
    try:
        layers = []
        if command in CONSUMERS and (out / CONFIG_FILE).exists():
            layers.append(read_config(out / CONFIG_FILE))
        if config_path is not None:
            layers.append(read_config(config_path))
        layers.append(args)
        cfg = resolve_config(layers, out)
        COMMANDS[command](cfg)
    except (CommandError, RecipeError, FileNotFoundError) as exc:
        print(f"fairtab: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("unhandled failure", exc_info=True)
        print(f"fairtab: {command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
