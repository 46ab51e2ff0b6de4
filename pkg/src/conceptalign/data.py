"""Sample tables: n observations of d named scalar variables, plus CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SampleMatrix:
    """An ``n x d`` table of samples with one name per column.

    ``values[l, j]`` is observation ``l`` of variable ``j``.  Used for both
    concept tables and machine-representation tables.
    """

    values: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"SampleMatrix needs a 2-D array, got shape {values.shape}")
        object.__setattr__(self, "values", values)
        names = self.names
        if not names:
            names = tuple(f"v{j}" for j in range(values.shape[1]))
        else:
            names = tuple(str(name) for name in names)
        if len(names) != values.shape[1]:
            raise ValueError(f"{len(names)} names for {values.shape[1]} columns")
        object.__setattr__(self, "names", names)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_variables(self) -> int:
        return self.values.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.values[:, j]

    def take_rows(self, rows) -> "SampleMatrix":
        return SampleMatrix(self.values[rows], self.names)

    def to_csv(self, path) -> None:
        """Write the table with a header row of column names."""
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(self.names)
            for row in self.values:
                writer.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path) -> "SampleMatrix":
        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            names = tuple(next(reader))
            rows = [[float(x) for x in row] for row in reader if row]
        return cls(np.asarray(rows, dtype=float).reshape(len(rows), len(names)), names)


def as_values(table) -> np.ndarray:
    """Accept a SampleMatrix or a plain 2-D array and return the ndarray view."""
    if isinstance(table, SampleMatrix):
        return table.values
    values = np.asarray(table, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D sample table, got shape {values.shape}")
    return values
