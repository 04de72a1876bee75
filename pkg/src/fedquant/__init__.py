"""Federated training with quantized uplinks.

Clients run local SGD, quantize their parameter deltas with a stochastic
uniform quantizer, and ship them in a compact bit-packed format; the
server aggregates and meters every uplink bit.  A controller can adapt
the quantization level as the loss falls, trading per-round precision
against the number of rounds a bit budget affords.

The pieces, bottom-up: :mod:`fedquant.quantizer` and :mod:`fedquant.wire`
(lossy encoding and its byte format), :mod:`fedquant.objectives` (models
and data), :mod:`fedquant.fedsim` (the training loop),
:mod:`fedquant.controller` (level schedules and convergence bounds), and
:mod:`fedquant.harness` / :mod:`fedquant.cli` (experiments, CSV, CLI).
"""

from .config import (
    AdaquantMode,
    FileData,
    FixedMode,
    SyntheticData,
    TrainingConfig,
)
from .controller import BoundConstants, LrSchedule, QuantSchedule
from .fedsim import (
    GlobalState,
    RoundRecord,
    TrainingDiverged,
    TrainingRun,
    run_training,
)
from .harness import ConfigError, ExperimentSummary, run_experiment
from .objectives import ClientShard, Dataset, ModelSpec
from .quantizer import BitCost, QuantizedUpdate, dequantize, quantize
from .wire import DecodeError, decode, encode

__version__ = "0.1.0"

__all__ = [
    "AdaquantMode",
    "BitCost",
    "BoundConstants",
    "ClientShard",
    "ConfigError",
    "Dataset",
    "DecodeError",
    "ExperimentSummary",
    "FileData",
    "FixedMode",
    "GlobalState",
    "LrSchedule",
    "ModelSpec",
    "QuantSchedule",
    "QuantizedUpdate",
    "RoundRecord",
    "SyntheticData",
    "TrainingConfig",
    "TrainingDiverged",
    "TrainingRun",
    "decode",
    "dequantize",
    "encode",
    "quantize",
    "run_experiment",
    "run_training",
    "__version__",
]
