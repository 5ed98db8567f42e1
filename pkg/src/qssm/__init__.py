"""Quantum-gated selective state space forecaster, in numpy."""
from .ablation import classical_gate_ablation
from .backbone import BackboneParams, calendar_scalar, encode, encode_backward, layer_norm, step
from .data import (Normalizer, RawSeries, WindowSample, add_calendar_features, apply_normalizer,
                   chronological_split, denormalize, fit_normalizer, load_csv, make_windows, prepare,
                   write_sine_csv)
from .decoder import DecoderParams, decode, decode_backward
from .engine import (ModelSpec, ParameterStore, TrainConfig, TrainState, adam_step, backward,
                     build_store, early_stop_check, forward_loss, kaiming_init, scheduler_step, train)
from .errors import ContractViolation
from .evaluation import ForecastReport, evaluate, mae, mse, naive_last_value
from .qgate import (GateOutput, GateParams, QubitState, expect_z, gate_backward, gate_forward,
                    param_shift_grad, prepare_state)

__version__ = "0.1.0"
