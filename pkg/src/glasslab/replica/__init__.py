"""Imaginary-time Monte Carlo for the replica-symmetric saddle equations."""

from .kernel import (
    ImaginaryTimeKernel,
    RsSolverConfig,
    kernel_from_json,
    kernel_to_json,
    liouville_b,
    liouville_init,
)
from .sampler import (
    CorrelatorSample,
    SpectralSampler,
    importance_shift,
    importance_shift_batch,
    single_site_correlators,
    zeta_identity_check,
)
from .scan import ScanPoint, TransitionScan, rs_transition_scan
from .solver import (
    IterationDiagnostics,
    RhsEstimate,
    RsReport,
    TapEstimate,
    evaluate_rhs,
    rs_iterate,
    rs_solve,
    tap_complexity,
    tap_kl_divergence,
)

__all__ = [
    "ImaginaryTimeKernel",
    "RsSolverConfig",
    "kernel_from_json",
    "kernel_to_json",
    "liouville_b",
    "liouville_init",
    "CorrelatorSample",
    "SpectralSampler",
    "importance_shift",
    "importance_shift_batch",
    "single_site_correlators",
    "zeta_identity_check",
    "ScanPoint",
    "TransitionScan",
    "rs_transition_scan",
    "IterationDiagnostics",
    "RhsEstimate",
    "RsReport",
    "TapEstimate",
    "evaluate_rhs",
    "rs_iterate",
    "rs_solve",
    "tap_complexity",
    "tap_kl_divergence",
]
