"""Amortized Bayesian inference for simulators with mixed discrete/continuous parameters.

Thin Python surface over the C++ core: ``simulate`` datasets, ``Estimator.fit`` /
``sample`` / ``log_prob``, reference posteriors, calibration reports, and the
classifier two-sample test.  Discrete parameters are exchanged on their display
scale (class value, e.g. a number of servers or a calendar year).
"""

try:
    from ._mnpe import (
        Estimator,
        ReferenceInvalidError,
        c2st,
        calibration_report_json,
        default_config_json,
        reference_sample,
        simulate,
    )
except ImportError:  # build-tree layout: extension lives next to the package dir
    from _mnpe import (
        Estimator,
        ReferenceInvalidError,
        c2st,
        calibration_report_json,
        default_config_json,
        reference_sample,
        simulate,
    )

__all__ = [
    "Estimator",
    "ReferenceInvalidError",
    "c2st",
    "calibration_report_json",
    "default_config_json",
    "reference_sample",
    "simulate",
]
