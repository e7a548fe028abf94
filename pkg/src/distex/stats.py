"""Latency summaries and profit ratios.

Quartiles use linear interpolation between order statistics (R's type 7,
numpy's default) and the variance divides by n - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class LatencySummary:
    n: int
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float
    variance: float
    sd: float

    def row(self, digits: int = 1) -> List[str]:
        vals = (self.min, self.q1, self.median, self.q3, self.max, self.mean, self.variance, self.sd)
        return [str(self.n)] + [f"{v:.{digits}f}" for v in vals]


SUMMARY_COLUMNS = ["client_id", "n", "min", "q1", "median", "q3", "max", "mean", "variance", "sd"]


def summarize(samples: Iterable[float]) -> LatencySummary:
    x = np.asarray(list(samples), dtype=float)
    if x.size == 0:
        raise StatsError("cannot summarize an empty sample")
    q = np.percentile(x, [0, 25, 50, 75, 100])
    var = float(np.var(x, ddof=1)) if x.size > 1 else 0.0
    return LatencySummary(int(x.size), float(q[0]), float(q[1]), float(q[2]), float(q[3]), float(q[4]),
                          float(x.mean()), var, math.sqrt(var))


@dataclass
class ProfitReport:
    """Profits in ticks averaged over repeats, with the derived ratios.

    ``by_client`` maps client -> strategy -> mean profit. A ratio grouping
    whose denominator is zero is ``None`` (undefined).
    """

    by_client: Dict[str, Dict[str, float]]
    repeats: int
    client_ratios: Optional[Dict[str, float]] = None
    strategy_ratios: Dict[str, Optional[Dict[str, float]]] = field(default_factory=dict)

    @property
    def client_totals(self) -> Dict[str, float]:
        return {c: sum(s.values()) for c, s in self.by_client.items()}

    @property
    def defined(self) -> bool:
        return self.client_ratios is not None


def _ratios(values: Mapping[str, float]) -> Optional[Dict[str, float]]:
    total = sum(values.values())
    if total <= 0 or any(v < 0 for v in values.values()):
        return None
    return {k: v / total for k, v in values.items()}


def profit_ratios(results: Sequence[Mapping[Tuple[str, str], float]]) -> ProfitReport:
    """``results`` holds one {(client, strategy): profit} mapping per repeat.

    Profits are averaged over repeats first, then turned into per-client
    shares of the total and per-strategy shares within each client.
    """
    if not results:
        raise StatsError("need at least one session result")
    keys = sorted({k for r in results for k in r})
    by_client: Dict[str, Dict[str, float]] = {}
    for client, strategy in keys:
        mean = sum(r.get((client, strategy), 0) for r in results) / len(results)
        by_client.setdefault(client, {})[strategy] = mean
    report = ProfitReport(by_client, len(results))
    report.client_ratios = _ratios(report.client_totals)
    report.strategy_ratios = {c: _ratios(s) for c, s in by_client.items()}
    return report


def format_ratio(r: Optional[float]) -> str:
    return "undefined" if r is None else f"{r:.4f}"
