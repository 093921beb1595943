"""Sampling-based checks for generalized Lyapunov certificates of nonautonomous ODEs."""

__version__ = "0.1.0"

from .expr import Expression, parse  # noqa: E402
from .systems import Certificate, MatrosovData, SystemDef, builtin, load_config  # noqa: E402
from .integrate import integrate  # noqa: E402

__all__ = ["Expression", "parse", "Certificate", "MatrosovData", "SystemDef", "builtin",
           "load_config", "integrate", "__version__"]
