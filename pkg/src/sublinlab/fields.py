"""Nodal scalar fields and the shared CSV dump format."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


def fmt(value) -> str:
    """Render a scalar the way every report and dump does (17 significant digits)."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


@dataclass(eq=False)
class FieldFunction:
    """Values attached to the nodes of a grid.

    ``support`` marks the nodes where the field is defined; values elsewhere
    are NaN. A field produced by a subregion solve is supported on the
    subregion unknowns plus the Dirichlet nodes its stencil touches.
    """

    grid: object
    values: np.ndarray
    support: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = len(self.grid.coords)
        if self.values.shape != (n,):
            raise ValueError(f"field has shape {self.values.shape}, grid has {n} nodes")
        if self.support is None:
            self.support = np.isfinite(self.values)
        else:
            self.support = np.asarray(self.support, dtype=bool)
        if not np.all(np.isfinite(self.values[self.support])):
            raise ValueError("field values must be finite on the support")

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(len(grid.coords)))

    def sup_norm(self) -> float:
        v = self.values[self.support]
        return float(np.max(np.abs(v))) if v.size else 0.0

    def to_csv(self, path) -> None:
        write_csv(path, self.grid.coords[self.support], self.values[self.support])


def write_csv(path, coords: np.ndarray, values: np.ndarray) -> None:
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    if coords.shape[0] != len(values):
        coords = coords.T
    names = ["x", "y"][: coords.shape[1]]
    lines = [",".join(names + ["value"])]
    for c, v in zip(coords, values):
        lines.append(",".join([fmt(float(t)) for t in c] + [fmt(float(v))]))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def read_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_csv`; returns (coords, values)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :-1], data[:, -1]
