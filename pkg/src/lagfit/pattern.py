"""Observation window, marked point patterns and torus geometry helpers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidPattern

DEFAULT_R_MAX = 6.0


@dataclass(frozen=True)
class Window:
    """Box ``[0,a) x [0,b) x [0,c)`` wrapped on a torus."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        for name in ("a", "b", "c"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidPattern(f"window side {name}={v!r} must be positive")

    @classmethod
    def parse(cls, text: str) -> "Window":
        parts = [float(p) for p in str(text).replace("x", ",").split(",") if p.strip()]
        if len(parts) != 3:
            raise InvalidPattern(f"window needs three sides, got {text!r}")
        return cls(*parts)

    @property
    def sides(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c], dtype=float)

    @property
    def volume(self) -> float:
        return float(self.a * self.b * self.c)

    @property
    def min_side(self) -> float:
        return float(min(self.a, self.b, self.c))

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Map coordinates into the half-open box."""
        s = self.sides
        y = np.mod(x, s)
        # np.mod can return exactly s for tiny negative inputs
        return np.where(y >= s, y - s, y)

    def delta(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Shortest periodic displacement ``y - x``."""
        s = self.sides
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        return d - s * np.round(d / s)

    def distance(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.sqrt(np.sum(self.delta(x, y) ** 2, axis=-1))

    def tree(self, positions: np.ndarray) -> cKDTree:
        """Periodic KD-tree over positions in the window."""
        return cKDTree(self.wrap(np.asarray(positions, dtype=float)), boxsize=self.sides)

    def lattice(self, nx: int, ny: int, nz: int) -> tuple[np.ndarray, float]:
        """Midpoints of an ``nx x ny x nz`` lattice and the volume of one lattice cell."""
        gx = (np.arange(nx) + 0.5) * self.a / nx
        gy = (np.arange(ny) + 0.5) * self.b / ny
        gz = (np.arange(nz) + 0.5) * self.c / nz
        X, Y, Z = np.meshgrid(gx, gy, gz, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
        return pts, self.volume / (nx * ny * nz)

    def as_list(self) -> list[float]:
        return [float(self.a), float(self.b), float(self.c)]


@dataclass
class MarkedPointPattern:
    """Generators ``(position, radius)`` inside a periodic window."""

    window: Window
    positions: np.ndarray
    radii: np.ndarray = None
    r_max: float = DEFAULT_R_MAX
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if self.radii is None:
            radii = np.zeros(len(pos))
        else:
            radii = np.asarray(self.radii, dtype=float).reshape(-1)
        self.positions = pos
        self.radii = radii
        if self.validate:
            self.check()

    def check(self) -> None:
        pos, radii, s = self.positions, self.radii, self.window.sides
        if len(radii) != len(pos):
            raise InvalidPattern("positions and radii differ in length")
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(radii)):
            raise InvalidPattern("non-finite coordinate or radius")
        if np.any(pos < 0) or np.any(pos >= s):
            raise InvalidPattern("positions must lie in the half-open window [0,a)x[0,b)x[0,c)")
        if np.any(radii < 0) or np.any(radii > self.r_max):
            raise InvalidPattern(f"radii must lie in [0, {self.r_max}]")
        if len(pos) > 1:
            pairs = self.window.tree(pos).query_pairs(1e-12)
            if pairs:
                raise InvalidPattern(f"coincident generators (torus metric): {sorted(pairs)[:3]}")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def weights(self) -> np.ndarray:
        return self.radii**2

    def with_radii(self, radii: np.ndarray) -> "MarkedPointPattern":
        return MarkedPointPattern(self.window, self.positions.copy(), np.asarray(radii, float).copy(), self.r_max)

    def subset(self, keep: np.ndarray) -> "MarkedPointPattern":
        keep = np.asarray(keep)
        return MarkedPointPattern(self.window, self.positions[keep], self.radii[keep], self.r_max, validate=False)

    def translated(self, shift: np.ndarray) -> "MarkedPointPattern":
        return MarkedPointPattern(
            self.window, self.window.wrap(self.positions + np.asarray(shift, float)), self.radii.copy(), self.r_max
        )


def read_pattern_csv(path: str | Path, window: Window, r_max: float = DEFAULT_R_MAX) -> MarkedPointPattern:
    """Read a ``x,y,z[,r]`` CSV.  A missing ``r`` column gives zero radii."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = [c.strip() for c in (reader.fieldnames or [])]
        if not {"x", "y", "z"} <= set(cols):
            raise InvalidPattern(f"{path}: header must contain x,y,z (got {cols})")
        rows = [{k.strip(): v for k, v in row.items()} for row in reader]
    pos = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows], dtype=float).reshape(-1, 3)
    radii = np.array([float(r["r"]) for r in rows]) if "r" in cols else np.zeros(len(pos))
    return MarkedPointPattern(window, pos, radii, r_max)


def write_pattern_csv(path: str | Path, pattern: MarkedPointPattern, with_radii: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z", "r"] if with_radii else ["x", "y", "z"])
        for p, r in zip(pattern.positions, pattern.radii):
            row = [repr(float(p[0])), repr(float(p[1])), repr(float(p[2]))]
            if with_radii:
                row.append(repr(float(r)))
            w.writerow(row)
