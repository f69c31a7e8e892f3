"""
ghoststat Reports
JSON and CSV writers for theory predictions and region statistics.
"""

import os
import csv
import json
import logging
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from ghoststat.core.analysis import RegionStats
from ghoststat.core.estimators import Reconstruction

logger = logging.getLogger("ghoststat.reports")

THEORY_REPORT = "theory.json"
ANALYSIS_REPORT = "analysis.json"
REGIONS_CSV = "regions.csv"
REGION_COLUMNS = ["estimator", "transform", "form", "level", "bin_center", "empirical_prob", "theoretical_prob"]


def _default(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def write_json(path: str, data: Any) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, default=_default)
        f.write("\n")
    logger.debug("Wrote %s", path)
    return path


def write_region_csv(path: str, results: Sequence[Tuple[Reconstruction, List[RegionStats]]]) -> str:
    """
    One row per histogram bin per region per reconstruction. The
    theoretical_prob column is left out when no region has a prediction.
    """
    with_theory = any(s.mu is not None and s.sigma2 for _, stats in results for s in stats)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REGION_COLUMNS if with_theory else REGION_COLUMNS[:-1])
        for recon, stats in results:
            for s in stats:
                theory = s.theoretical_probabilities()
                for i, (center, prob) in enumerate(zip(s.bin_centers, s.probabilities)):
                    row = [
                        recon.estimator.value,
                        recon.transform.label,
                        recon.form,
                        repr(s.level),
                        repr(float(center)),
                        repr(float(prob)),
                    ]
                    if with_theory:
                        row.append(repr(float(theory[i])) if theory is not None else "")
                    writer.writerow(row)
    logger.debug("Wrote %s", path)
    return path


def read_region_csv(path: str) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
