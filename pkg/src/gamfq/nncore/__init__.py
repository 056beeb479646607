"""Small reverse-mode autodiff engine and the layers the learners need."""

from gamfq.nncore.autodiff import Tape, TapeError, Tensor, constant
from gamfq.nncore.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from gamfq.nncore.gradcheck import GradCheckReport, grad_check
from gamfq.nncore.layers import fc_forward, gat_attention, gat_layer, gumbel_softmax, lstm_cell, mlp
from gamfq.nncore.params import OptimizerError, ParamStore, adam_step, soft_update

__all__ = [
    "CheckpointError", "GradCheckReport", "OptimizerError", "ParamStore", "Tape", "TapeError",
    "Tensor", "adam_step", "constant", "fc_forward", "gat_attention", "gat_layer", "grad_check",
    "gumbel_softmax", "load_checkpoint", "lstm_cell", "mlp", "save_checkpoint", "soft_update",
]
