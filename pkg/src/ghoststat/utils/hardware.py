"""
ghoststat Hardware Detection
Worker-count resolution and the host profile recorded in run manifests.
"""

import os
import platform
import logging
from typing import Any, Dict

import numpy as np
import psutil
import scipy

from ghoststat.core.errors import ParameterError

logger = logging.getLogger("ghoststat.hardware")


def resolve_threads(requested: int = 0) -> int:
    """0 means one worker per logical CPU."""
    requested = int(requested)
    if requested < 0:
        raise ParameterError(f"threads must be >= 0, got {requested}")
    if requested == 0:
        return psutil.cpu_count(logical=True) or os.cpu_count() or 1
    return requested


def host_profile() -> Dict[str, Any]:
    """Describe the machine a run was produced on."""
    memory = psutil.virtual_memory()
    return {
        "platform": platform.system(),
        "architecture": platform.machine(),
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "cpu": {
            "cores_physical": psutil.cpu_count(logical=False) or 1,
            "cores_logical": psutil.cpu_count(logical=True) or 1,
        },
        "memory_total_gb": round(memory.total / (1024**3), 2),
    }
