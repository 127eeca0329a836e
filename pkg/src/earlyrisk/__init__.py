"""Early risk detection over post streams.

Classification (SS3-style confidence values or replayed scores) is kept apart
from the decision of *when* to raise an alert (global median/MAD policy or
history-based rule); both are driven round by round against a mock-server
and scored with latency-aware metrics.
"""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
