"""Sound parameter-space bounds for SGD under training-data poisoning.

The package trains a model while propagating interval enclosures of
every reachable parameter vector under a declared perturbation model,
then certifies predictions, validates the enclosures against exhaustive
retraining on small instances, derives privacy noise scales from
pointwise stability, and emits solver-ready constraint encodings of the
exact reachable set.

Submodules are imported lazily so that process-level knobs (thread
counts) can be set before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "aggregation",
    "boundprop",
    "certify",
    "cli",
    "config",
    "data",
    "encoding",
    "errors",
    "experiment",
    "intervals",
    "lp_io",
    "nn",
    "oracle",
    "training",
)

__all__ = ["__version__", *_SUBMODULES]


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
