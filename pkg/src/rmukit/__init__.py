"""Reinforcement Memory Unit toolkit.

A numpy implementation of the Reinforcement Memory Unit recurrent cell and
LSTM/GRU baselines with exact backpropagation through time, an assessment
network (projection, cell, linear head), ADAM training, rank-correlation
metrics and dataset tooling for sequential quality-assessment regression.
"""

from .cells import (CELL_KINDS, CellParams, backward, gru_step, init_params, lstm_step, memory_estimate,
                    param_count, rmu_step, unroll, zero_state)
from .data import FeatureSequence, SyntheticSpec, load_dataset, save_dataset, synth_generate, variance_split
from .errors import (CheckpointError, ConfigurationError, DatasetError, InputError, IntegrityError,
                     MetricsUndefinedError, RMUKitError, SchemaError, TrainingDivergence, UnsupportedSchemeError)
from .losses import mse_loss
from .metrics import MetricReport, compute_metrics
from .network import AssessmentNet, build_net, net_backward, net_forward
from .persist import load_checkpoint, memory_trace, save_checkpoint
from .training import AdamState, TrainConfig, TrainLog, adam_step, grad_check, predict, train

__version__ = "0.1.0"
