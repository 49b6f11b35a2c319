"""Regression metrics: MAE, RMSE, MAPE and R^2."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

#: Targets with ``|y|`` below this (kW) are excluded from MAPE.
MAPE_FLOOR_KW = 1.0


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    rmse: float
    mape: float
    r2: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_row(self, label: str) -> str:
        return f"{label},{self.mae!r},{self.rmse!r},{self.mape!r},{self.r2!r},{self.n}"


CSV_HEADER = "model,mae_kw,rmse_kw,mape_pct,r2,n"


def compute_metrics(predictions, targets, mape_floor: float | None = MAPE_FLOOR_KW,
                    strict: bool = True) -> MetricsReport:
    """Compare predictions with targets (both kW).

    ``mape_floor=None`` skips MAPE (reported as NaN). With ``strict=False``
    degenerate cases (no admissible MAPE target, constant targets) produce
    NaN instead of raising.
    """
    pred = np.asarray(predictions, dtype=float).reshape(-1)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if pred.shape != y.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {y.size} targets")
    if y.size == 0:
        raise ValueError("empty inputs")
    e = pred - y
    mae = float(np.mean(np.abs(e)))
    rmse = float(math.sqrt(np.mean(e * e)))

    mape = math.nan
    if mape_floor is not None:
        keep = np.abs(y) >= mape_floor
        if keep.any():
            mape = float(100.0 * np.mean(np.abs(e[keep] / y[keep])))
        elif strict:
            raise ValueError(f"all targets below the MAPE floor of {mape_floor} kW")

    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot > 0:
        r2 = 1.0 - float(np.sum(e * e)) / ss_tot
    elif strict:
        raise ValueError("targets have zero variance; R^2 undefined")
    else:
        r2 = math.nan
    return MetricsReport(mae=mae, rmse=rmse, mape=mape, r2=r2, n=int(y.size))
