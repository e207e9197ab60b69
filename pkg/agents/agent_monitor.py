# agents/agent_monitor.py
import csv
import logging
import math
import threading
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from diffcore.errors import NumericError

logger = logging.getLogger(__name__)

HISTORY_FIELDS = (
    "epoch", "phase", "gamma", "manager_mle", "worker_mle", "worker_rl", "mixed", "joint",
    "mean_advantage", "reward_sampled", "reward_greedy", "tokens",
    "valid_cider_d", "valid_bleu4", "valid_rouge_l",
)


class TrainingMonitor:
    """Collects one history row per epoch and phase, and writes them as CSV"""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self.rows: List[Dict[str, Any]] = []
        self._rows_lock = threading.Lock()

    def record(self, epoch: int, phase: str, **values) -> Dict[str, Any]:
        """Record a row; unknown keys are rejected, missing ones stay blank"""
        unknown = set(values) - set(HISTORY_FIELDS)
        if unknown:
            raise KeyError(f"unknown history fields {sorted(unknown)}")
        for key, value in values.items():
            if isinstance(value, float) and not math.isfinite(value):
                raise NumericError(f"epoch {epoch} {phase}: {key} is {value}")
        row = {"epoch": epoch, "phase": phase, **values}
        with self._rows_lock:
            self.rows.append(row)
        summary = ", ".join(
            f"{k}={v:.4f}" for k, v in values.items() if isinstance(v, float) and k != "gamma"
        )
        logger.info(f"epoch {epoch} [{phase}] gamma={values.get('gamma', 0.0):.3f} {summary}")
        return row

    def attach_validation(self, cider_d: float, bleu4: float, rouge_l: float):
        """Fill the validation columns of the latest row"""
        with self._rows_lock:
            if not self.rows:
                return
            self.rows[-1].update(valid_cider_d=cider_d, valid_bleu4=bleu4, valid_rouge_l=rouge_l)
        logger.info(f"validation: cider_d={cider_d:.4f} bleu4={bleu4:.4f} rouge_l={rouge_l:.4f}")

    def column(self, name: str, phase: Optional[str] = None) -> List[Any]:
        with self._rows_lock:
            rows = self.rows.copy()
        return [r.get(name) for r in rows if phase is None or r["phase"] == phase]

    def write_csv(self, path: Optional[Union[str, Path]] = None) -> Path:
        target = Path(path) if path is not None else self.path
        if target is None:
            raise ValueError("no history path configured")
        with self._rows_lock:
            rows = self.rows.copy()
        with open(target, "w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=HISTORY_FIELDS, restval="")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _format(v) for k, v in row.items()})
        logger.info(f"Wrote {len(rows)} history rows to {target}")
        return target


def _format(value):
    if isinstance(value, float):
        return repr(value)
    return value
