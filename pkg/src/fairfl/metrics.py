"""Demographic parity and accuracy from (S, Y, Y') counts.

Every report is derived from the eight cell counts ``(s, y, y_hat)``. Pooling
reports therefore reproduces evaluation on the union of the underlying data
exactly, which is how the server obtains the global fairness of FairFed
without seeing raw samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ModelSpec, decide

CELLS = [(s, y, p) for s in (0, 1) for y in (0, 1) for p in (0, 1)]


@dataclass(frozen=True)
class FairnessReport:
    cell_counts: dict[tuple[int, int, int], int]

    @classmethod
    def from_arrays(cls, s, y, y_hat) -> "FairnessReport":
        s, y, y_hat = (np.asarray(a) for a in (s, y, y_hat))
        code = 4 * s.astype(int) + 2 * y.astype(int) + y_hat.astype(int)
        counts = np.bincount(code, minlength=8)
        return cls({cell: int(counts[i]) for i, cell in enumerate(CELLS)})

    @property
    def n(self) -> int:
        return sum(self.cell_counts.values())

    @property
    def counts_by_stratum(self) -> dict[tuple[int, int], int]:
        c = self.cell_counts
        return {(s, y): c[(s, y, 0)] + c[(s, y, 1)] for s in (0, 1) for y in (0, 1)}

    def group_size(self, s: int) -> int:
        return sum(self.cell_counts[(s, y, p)] for y in (0, 1) for p in (0, 1))

    def positive_count(self, s: int) -> int:
        return self.cell_counts[(s, 0, 1)] + self.cell_counts[(s, 1, 1)]

    @property
    def pos_rate_by_group(self) -> dict[int, float | None]:
        out = {}
        for s in (0, 1):
            n = self.group_size(s)
            out[s] = self.positive_count(s) / n if n else None
        return out

    @property
    def dp_undefined(self) -> bool:
        return self.group_size(0) == 0 or self.group_size(1) == 0

    @property
    def dp_signed(self) -> float | None:
        """P(Y'=1 | S=0) - P(Y'=1 | S=1), or None when a group is empty."""
        if self.dp_undefined:
            return None
        r = self.pos_rate_by_group
        return r[0] - r[1]

    @property
    def dp_abs(self) -> float | None:
        d = self.dp_signed
        return None if d is None else abs(d)

    @property
    def accuracy(self) -> float:
        c = self.cell_counts
        correct = sum(c[(s, y, y)] for s in (0, 1) for y in (0, 1))
        return correct / self.n if self.n else float("nan")

    def as_dict(self) -> dict:
        return {
            "dp_signed": self.dp_signed,
            "dp_abs": self.dp_abs,
            "dp_undefined": self.dp_undefined,
            "accuracy": self.accuracy,
            "pos_rate_by_group": {str(k): v for k, v in self.pos_rate_by_group.items()},
            "counts_by_stratum": {f"{s},{y}": v for (s, y), v in self.counts_by_stratum.items()},
        }


def evaluate(spec: ModelSpec, params, data) -> FairnessReport:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return FairnessReport.from_arrays(data.s, data.y, decide(spec, params, data.X))


def global_fairness(reports: Sequence[FairnessReport], sizes: Sequence[int] | None = None) -> FairnessReport:
    """Pool per-client counts into one report over the union population.

    ``sizes`` is accepted for interface symmetry and checked against the
    reports; pooling is by counts, so it does not otherwise enter.
    """
    if not reports:
        raise ValueError("need at least one report")
    if sizes is not None:
        if len(sizes) != len(reports):
            raise ValueError("reports and sizes differ in length")
        for r, n in zip(reports, sizes):
            if r.n != n:
                raise ValueError(f"report covers {r.n} samples but size says {n}")
    pooled = {cell: sum(r.cell_counts[cell] for r in reports) for cell in CELLS}
    return FairnessReport(pooled)
