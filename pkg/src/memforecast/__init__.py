"""Action-sequence forecasting with one external neural memory per input stream."""

from .errors import (ConfigError, ContractError, DimensionError, FormatError,
                     NumericalError, ProtocolError)
from .forecaster import (Forecaster, ForecasterConfig, ForecasterParams, RolloutPolicy,
                         build, build_ablation, forward_loss, load_checkpoint, observe,
                         predict_step, rollout, save_checkpoint)
from .memory import MemoryConfig, attend, memory_step, read_step, write_step

__version__ = "0.1.0"
