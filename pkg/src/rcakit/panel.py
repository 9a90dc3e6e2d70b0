"""Metric panels and their CSV representation: header row of node names, one
row of decimal values per timestep, comma separated."""

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricPanel:
    values: np.ndarray                 # (T, d)
    names: "list[str]" = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("panel values must be a T x d array")
        if not self.names:
            self.names = [f"x{i}" for i in range(self.values.shape[1])]
        if len(self.names) != self.values.shape[1]:
            raise ValueError("one name per column required")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def write_csv(panel: MetricPanel, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(panel.names)
        for row in panel.values:
            writer.writerow([repr(float(v)) for v in row])


def read_csv(path) -> MetricPanel:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            names = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty metrics file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(names):
                raise ValueError(
                    f"{path}: row {lineno} has {len(row)} cells, expected {len(names)}"
                )
            parsed = []
            for col, cell in enumerate(row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: non-numeric cell at row {lineno}, column "
                        f"{col + 1} ({names[col]!r}): {cell!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return MetricPanel(values=np.array(rows), names=names)
