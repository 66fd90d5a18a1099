"""privflow: privilege-escalation scanning for multi-service codebases.

The engine composes language-agnostic code-search primitives over an
immutable facts database, stitches data flows across service boundaries via
communication-channel matching, validates authN/authZ checks with a pluggable
reasoner, and prunes infeasible flows with an internal constraint checker.
"""

from .model import (
    Channel,
    Edge,
    EdgeKind,
    Element,
    ElementKind,
    Location,
    Manifest,
    Program,
    Service,
    validate_program,
)
from .pipeline import Finding, PrivilegedOperation, ScanBudget, ScanOptions, scan
from .reasoner import ScriptedOracle, load_rules

__version__ = "0.1.0"

__all__ = [
    "Channel",
    "Edge",
    "EdgeKind",
    "Element",
    "ElementKind",
    "Location",
    "Manifest",
    "Program",
    "Service",
    "validate_program",
    "Finding",
    "PrivilegedOperation",
    "ScanBudget",
    "ScanOptions",
    "scan",
    "ScriptedOracle",
    "load_rules",
    "__version__",
]
