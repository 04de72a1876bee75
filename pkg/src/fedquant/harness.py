"""Experiment harness: config files, CSV output, metrics, and sweeps.

Configs are INI files with sections ``[model]``, ``[data]``,
``[federation]``, ``[lr]``, ``[quantization]``, and ``[run]``; the full
grammar is documented in the README.  Every run is reproducible from its
config alone, and baseline sweeps reuse one master seed so that all legs
share the dataset, the partition, the initial weights, and the minibatch
draws.
"""

from __future__ import annotations

import configparser
import csv
import os
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from . import fedsim
from .config import AdaquantMode, FileData, FixedMode, SyntheticData, TrainingConfig
from .controller import LrSchedule
from .fedsim import RoundRecord, TrainingRun
from .objectives import ModelSpec, accuracy

__all__ = [
    "ConfigError",
    "ExperimentSummary",
    "CSV_COLUMNS",
    "parse_config",
    "load_config",
    "run_experiment",
    "bits_to_threshold",
    "grid_search_s0",
    "emit_csv",
    "sweep",
    "reference_config",
    "format_summary_table",
]

CSV_COLUMNS = (
    "round",
    "cumulative_bits",
    "train_loss",
    "eval_metric",
    "s",
    "b",
    "eta",
    "interval",
    "feasibility",
)

SWEEP_FIXED_BITS = (2, 4, 8, 16)


class ConfigError(ValueError):
    """A config document that cannot be turned into a TrainingConfig."""


@dataclass(frozen=True)
class ExperimentSummary:
    """Per-run results, one row of a comparison table.

    ``bits_to_threshold`` is None when the run never reached the
    configured loss threshold (or no threshold was set).
    """

    rounds: int
    final_loss: float
    final_eval_metric: float | None
    cumulative_bits: int
    bits_to_threshold: int | None
    s_trajectory: tuple[int, ...]


# ---------------------------------------------------------------------------
# config parsing


_SCHEMA = {
    "model": ("kind", "features", "hidden", "classes"),
    "data": ("source", "kind", "samples", "noise", "eval_samples", "path"),
    "federation": ("clients", "partition", "local_steps", "batch_size"),
    "lr": ("eta0", "decay_factor", "decay_every"),
    "quantization": ("mode", "bits", "s0", "interval_bits", "s_max", "f_star"),
    "run": (
        "rounds",
        "bit_budget",
        "loss_threshold",
        "seed",
        "eval_every",
        "loss_estimate",
        "smoothness",
        "output",
    ),
}

_MISSING = object()


class _Doc:
    """Typed, key-tracking view over a parsed INI document."""

    def __init__(self, parser: configparser.ConfigParser) -> None:
        self.sections = {name: dict(parser.items(name)) for name in parser.sections()}
        self._seen: dict[str, set[str]] = {name: set() for name in self.sections}

    def raw(self, section: str, key: str, default=_MISSING):
        values = self.sections.get(section, {})
        if key in values:
            self._seen[section].add(key)
            return values[key].strip()
        if default is _MISSING:
            raise ConfigError(f"missing required key {section}.{key}")
        return default

    def choice(self, section: str, key: str, choices: tuple[str, ...], default=_MISSING):
        value = self.raw(section, key, default)
        value = str(value).lower()
        if value not in choices:
            raise ConfigError(
                f"{section}.{key}: expected one of {', '.join(choices)}, got {value!r}"
            )
        return value

    def integer(self, section: str, key: str, default=_MISSING):
        value = self.raw(section, key, default)
        if not isinstance(value, str):
            return value
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}") from None

    def number(self, section: str, key: str, default=_MISSING):
        value = self.raw(section, key, default)
        if not isinstance(value, str):
            return value
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected a number, got {value!r}") from None

    def forbid(self, section: str, keys: Iterable[str], reason: str) -> None:
        present = [k for k in keys if k in self.sections.get(section, {})]
        if present:
            raise ConfigError(f"{section}.{present[0]} is not allowed {reason}")

    def check_exhausted(self) -> None:
        for name, values in self.sections.items():
            if name not in _SCHEMA:
                raise ConfigError(f"unknown section [{name}]")
            for key in values:
                if key not in _SCHEMA[name]:
                    raise ConfigError(f"unknown key {name}.{key}")


def parse_config(text: str) -> TrainingConfig:
    """Parse an INI config document into a validated TrainingConfig."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    doc = _Doc(parser)
    doc.check_exhausted()
    for required in ("model", "data", "federation", "lr", "quantization", "run"):
        if required not in doc.sections:
            raise ConfigError(f"missing required section [{required}]")
    try:
        return _build(doc)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _build(doc: _Doc) -> TrainingConfig:
    kind = doc.choice("model", "kind", ("quadratic", "logistic", "mlp"))
    features = doc.integer("model", "features")
    if kind == "mlp":
        model = ModelSpec.mlp(
            features, doc.integer("model", "hidden"), doc.integer("model", "classes")
        )
    else:
        doc.forbid("model", ("hidden", "classes"), f"for kind={kind}")
        model = ModelSpec(kind=kind, n_features=features)

    source = doc.choice("data", "source", ("synthetic", "file"), default="synthetic")
    data_kind = doc.choice(
        "data",
        "kind",
        ("regression", "classification"),
        default="regression" if kind == "quadratic" else "classification",
    )
    if source == "synthetic":
        doc.forbid("data", ("path",), "for synthetic data")
        data = SyntheticData(
            kind=data_kind,
            samples=doc.integer("data", "samples"),
            n_features=features,
            noise=doc.number("data", "noise", 0.0),
            n_classes=model.n_classes if kind == "mlp" else 2,
            eval_samples=doc.integer("data", "eval_samples", 0),
        )
    else:
        doc.forbid("data", ("samples", "noise"), "for file data")
        data = FileData(
            path=doc.raw("data", "path"),
            kind=data_kind,
            eval_samples=doc.integer("data", "eval_samples", 0),
        )

    lr = LrSchedule(
        eta0=doc.number("lr", "eta0"),
        decay_factor=doc.number("lr", "decay_factor", 1.0),
        decay_every=doc.integer("lr", "decay_every", None),
    )

    mode = doc.choice("quantization", "mode", ("fixed", "adaquant"))
    if mode == "fixed":
        doc.forbid(
            "quantization", ("s0", "interval_bits", "s_max", "f_star"), "with mode=fixed"
        )
        quant: FixedMode | AdaquantMode = FixedMode(bits=doc.integer("quantization", "bits"))
    else:
        doc.forbid("quantization", ("bits",), "with mode=adaquant")
        quant = AdaquantMode(
            s0=doc.integer("quantization", "s0", 2),
            interval_bits=doc.integer("quantization", "interval_bits", None),
            s_max=doc.integer("quantization", "s_max", 2**16 - 1),
            f_star=doc.number("quantization", "f_star", 0.0),
        )

    return TrainingConfig(
        model=model,
        data=data,
        n_clients=doc.integer("federation", "clients"),
        partition_mode=doc.choice(
            "federation", "partition", ("iid", "sorted_label"), default="iid"
        ),
        local_steps=doc.integer("federation", "local_steps"),
        batch_size=doc.integer("federation", "batch_size"),
        lr=lr,
        quantization=quant,
        rounds=doc.integer("run", "rounds"),
        bit_budget=doc.integer("run", "bit_budget", None),
        loss_threshold=doc.number("run", "loss_threshold", None),
        master_seed=doc.integer("run", "seed", 0),
        eval_every=doc.integer("run", "eval_every", 1),
        loss_estimate=doc.choice(
            "run", "loss_estimate", ("full", "minibatch"), default="full"
        ),
        smoothness=doc.number("run", "smoothness", None),
        output=doc.raw("run", "output", None),
    )


def load_config(path: str) -> TrainingConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# CSV emission


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_row(record: RoundRecord) -> list[str]:
    return [
        _csv_cell(record.round_index),
        _csv_cell(record.cumulative_bits),
        _csv_cell(record.train_loss),
        _csv_cell(record.eval_metric),
        _csv_cell(record.s),
        _csv_cell(record.element_bits),
        _csv_cell(record.eta),
        _csv_cell(record.interval),
        _csv_cell(record.feasible),
    ]


class _CsvStream:
    """Streaming CSV writer, flushed per row so partial runs stay valid."""

    def __init__(self, path: str) -> None:
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(CSV_COLUMNS)
        self._fh.flush()

    def write(self, record: RoundRecord) -> None:
        self._writer.writerow(_csv_row(record))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def emit_csv(records: Sequence[RoundRecord], path: str) -> None:
    """Write the standard per-round CSV (header row even when empty)."""
    stream = _CsvStream(path)
    try:
        for record in records:
            stream.write(record)
    finally:
        stream.close()


# ---------------------------------------------------------------------------
# metrics and runs


def bits_to_threshold(records: Sequence[RoundRecord], threshold: float) -> int | None:
    """Uplink bits spent up to the first record at or below ``threshold``."""
    for record in records:
        if record.train_loss <= threshold:
            return record.cumulative_bits
    return None


def _summarize(config: TrainingConfig, run: TrainingRun) -> ExperimentSummary:
    problem = run.problem
    final_w = run.final_state.w
    final_loss = fedsim.global_loss(problem.model, problem.shards, final_w)
    final_metric = None
    if problem.eval_data is not None and problem.model.kind != "quadratic":
        final_metric = accuracy(problem.model, final_w, problem.eval_data)
    crossed = (
        bits_to_threshold(run.records, config.loss_threshold)
        if config.loss_threshold is not None
        else None
    )
    return ExperimentSummary(
        rounds=len(run.records),
        final_loss=final_loss,
        final_eval_metric=final_metric,
        cumulative_bits=run.final_state.cumulative_bits,
        bits_to_threshold=crossed,
        s_trajectory=tuple(r.s for r in run.records),
    )


def run_experiment(
    config: TrainingConfig, csv_path: str | None = None
) -> tuple[ExperimentSummary, tuple[RoundRecord, ...]]:
    """Run one configured experiment, streaming CSV if a path is set.

    On divergence the rows written so far remain on disk as a valid CSV
    prefix, and the error propagates.
    """
    path = csv_path if csv_path is not None else config.output
    stream = _CsvStream(path) if path is not None else None
    try:
        run = fedsim.run_training(
            config, on_record=stream.write if stream is not None else None
        )
    finally:
        if stream is not None:
            stream.close()
    return _summarize(config, run), run.records


def grid_search_s0(
    config: TrainingConfig, candidates: Sequence[int]
) -> tuple[int, dict[int, ExperimentSummary]]:
    """Try each starting level with shared seeds; rank by bits-to-threshold,
    then final loss, with smaller candidates winning ties."""
    cands = sorted(set(int(c) for c in candidates))
    if not cands:
        raise ValueError("candidates must be non-empty")
    if cands[0] < 1:
        raise ValueError("candidates must be at least 1")
    base = (
        config.quantization
        if isinstance(config.quantization, AdaquantMode)
        else AdaquantMode()
    )
    summaries: dict[int, ExperimentSummary] = {}
    for s0 in cands:
        quant = replace(base, s0=s0, s_max=max(base.s_max, s0))
        summary, _ = run_experiment(
            replace(config, quantization=quant, output=None), csv_path=None
        )
        summaries[s0] = summary
    infinity = float("inf")
    best = min(
        cands,
        key=lambda c: (
            summaries[c].bits_to_threshold
            if summaries[c].bits_to_threshold is not None
            else infinity,
            summaries[c].final_loss,
            c,
        ),
    )
    return best, summaries


def sweep(config: TrainingConfig, out_dir: str) -> dict[str, ExperimentSummary]:
    """Fixed-level baselines (2, 4, 8, 16 bits) plus the adaptive run.

    All legs share ``config.master_seed``, hence the same dataset,
    partition, initial weights, and minibatch order.  Each leg writes
    ``<out_dir>/<name>.csv``.
    """
    os.makedirs(out_dir, exist_ok=True)
    legs: list[tuple[str, FixedMode | AdaquantMode]] = [
        (f"fixed_b{b}", FixedMode(bits=b)) for b in SWEEP_FIXED_BITS
    ]
    adaptive = (
        config.quantization
        if isinstance(config.quantization, AdaquantMode)
        else AdaquantMode()
    )
    legs.append(("adaquant", adaptive))
    results: dict[str, ExperimentSummary] = {}
    for name, quant in legs:
        leg_config = replace(config, quantization=quant, output=None)
        path = os.path.join(out_dir, f"{name}.csv")
        summary, _ = run_experiment(leg_config, csv_path=path)
        results[name] = summary
    return results


def reference_config(**overrides) -> TrainingConfig:
    """The in-repo desk-scale task: logistic regression, 20 parameters
    (19 features plus bias), 2,000 training rows over 8 clients.

    The adaptive schedule's loss floor (``f_star = 0.40``) was calibrated
    offline: long fine-quantization runs on this task plateau between
    0.405 and 0.425 across seeds, so 0.40 sits safely below every
    achievable training loss while keeping the measured gap small enough
    that the level schedule climbs as the run approaches its floor.  The
    bit budget is deep enough that every fixed-width baseline reaches its
    stationary loss before the budget expires, which makes budget-matched
    comparisons measure variance floors rather than descent speed.
    """
    config = TrainingConfig(
        model=ModelSpec.logistic(19),
        data=SyntheticData(
            kind="classification",
            samples=2000,
            n_features=19,
            noise=0.1,
            n_classes=2,
            eval_samples=400,
        ),
        n_clients=8,
        local_steps=10,
        batch_size=32,
        lr=LrSchedule.constant(0.05),
        quantization=AdaquantMode(s0=2, s_max=64, f_star=0.40),
        rounds=1600,
        partition_mode="iid",
        bit_budget=128_000,
        master_seed=0,
        eval_every=10,
    )
    return replace(config, **overrides) if overrides else config


def format_summary_table(summaries: dict[str, ExperimentSummary]) -> str:
    """Fixed-width comparison table for terminal output."""
    header = f"{'run':<12} {'rounds':>6} {'final_loss':>12} {'eval':>8} {'bits':>12} {'bits_to_thr':>12}"
    lines = [header, "-" * len(header)]
    for name, s in summaries.items():
        metric = f"{s.final_eval_metric:.4f}" if s.final_eval_metric is not None else "-"
        crossed = str(s.bits_to_threshold) if s.bits_to_threshold is not None else "-"
        lines.append(
            f"{name:<12} {s.rounds:>6} {s.final_loss:>12.6f} {metric:>8} "
            f"{s.cumulative_bits:>12} {crossed:>12}"
        )
    return "\n".join(lines)
