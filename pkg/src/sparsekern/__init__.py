"""Multiple-kernel variational relevance vector regression with scale selection."""

from .exceptions import DomainError, NumericalError
from .kernels import DEFAULT_WIDTHS, GroupedDesign, KernelBank, build_cross_design, build_design
from .rvm import fit_evidence
from .selection import CV, EPIC, GCV, PIC, DfKind, GicBias, PlugInBias, TrueBias, scan_scales, select_scale
from .signals import SignalKind, generate_signal
from .vb import FitConfig, FitResult, HyperpriorSpec, fit

__version__ = "0.1.0"

__all__ = [
    "CV",
    "DEFAULT_WIDTHS",
    "DfKind",
    "DomainError",
    "EPIC",
    "FitConfig",
    "FitResult",
    "GCV",
    "GicBias",
    "GroupedDesign",
    "HyperpriorSpec",
    "KernelBank",
    "NumericalError",
    "PIC",
    "PlugInBias",
    "SignalKind",
    "TrueBias",
    "build_cross_design",
    "build_design",
    "fit",
    "fit_evidence",
    "generate_signal",
    "scan_scales",
    "select_scale",
]
