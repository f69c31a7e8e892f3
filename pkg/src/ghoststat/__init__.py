"""
ghoststat: Ghost Imaging Statistics Toolkit
Simulation, correlation reconstruction and statistical verification
for thermal-light ghost imaging.
"""

__version__ = "1.0.0"
__project__ = "ghoststat"
__description__ = "Ghost imaging simulation, reconstruction and Gaussian-statistics verification"

import os

# Default user directories
CONFIG_DIR = os.environ.get("GHOSTSTAT_HOME") or os.path.join(os.path.expanduser("~"), ".ghoststat")
LOGS_DIR = os.path.join(CONFIG_DIR, "logs")
DEFAULT_OUT_DIR = os.path.join(os.getcwd(), "ghoststat-out")

for d in [CONFIG_DIR, LOGS_DIR]:
    os.makedirs(d, exist_ok=True)
