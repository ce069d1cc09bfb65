"""PRISM-subset model language: parsing, validation and constant resolution."""

from .expr import EvalError
from .model import (
    Command,
    ConstantDef,
    LabelDef,
    ModelError,
    RewardDef,
    SymbolicModel,
    Update,
    VariableDecl,
    print_model,
)
from .parser import ParseError, parse_model
from .validate import Diagnostic, parse_constant_value, resolve_constants, validate_model

__all__ = [
    "Command",
    "ConstantDef",
    "Diagnostic",
    "EvalError",
    "LabelDef",
    "ModelError",
    "ParseError",
    "RewardDef",
    "SymbolicModel",
    "Update",
    "VariableDecl",
    "parse_model",
    "parse_constant_value",
    "print_model",
    "resolve_constants",
    "validate_model",
]
