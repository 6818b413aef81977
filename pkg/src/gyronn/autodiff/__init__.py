"""Reverse-mode differentiation engine."""
from . import functions
from .core import (ORACLE_ONLY_OPS, Tape, Tensor, as_tensor, backward, grad, is_tensor,
                   record, register_op, value_of)
from .gradcheck import gradcheck

F = functions

__all__ = ["Tensor", "Tape", "grad", "backward", "record", "register_op", "gradcheck",
           "is_tensor", "value_of", "as_tensor", "functions", "F", "ORACLE_ONLY_OPS"]
