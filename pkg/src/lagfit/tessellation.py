"""Periodic 3D Laguerre tessellations.

Cells are computed one at a time by clipping the box replica centred at the
generator against radical planes of nearby periodic images (see ``_clip``).
Because every cell is computed independently, a change to one generator only
requires recomputing that cell and its old and new neighbours.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import _clip
from .errors import DegenerateConfiguration, EmptyCell, InvalidPattern
from .pattern import MarkedPointPattern, Window

TIE_EPS = 1e-10
TINY_FACE = 1e-12
EMPTY_VOLUME = 1e-12

# box-face labels of the clipping kernel -> periodic image shift of the generator itself
_BOX_SHIFTS = {
    -1: (1, 0, 0),
    -2: (-1, 0, 0),
    -3: (0, 1, 0),
    -4: (0, -1, 0),
    -5: (0, 0, 1),
    -6: (0, 0, -1),
}

CELL_FIELDS = ("vol", "surf", "nof", "tel", "spher")


def power_distance(y, position, radius, window: Window) -> float:
    """Torus power distance ``||y - x||_W^2 - r^2``."""
    d = window.delta(np.asarray(position, float), np.asarray(y, float))
    return float(np.dot(d, d) - radius * radius)


def sphericity(vol: float, surf: float) -> float:
    return math.pi ** (1.0 / 3.0) * (6.0 * vol) ** (2.0 / 3.0) / surf


@dataclass(frozen=True)
class Face:
    neighbor: int
    shift: tuple
    ring: np.ndarray
    area: float
    perimeter: float

    @property
    def n_edges(self) -> int:
        return len(self.ring)


@dataclass(frozen=True)
class CellCharacteristics:
    vol: float
    surf: float
    nof: int
    tel: float
    spher: float


@dataclass(frozen=True)
class FaceCharacteristics:
    i: int
    j: int
    farea: float
    fper: float
    fnoe: int
    dvol: float


class LaguerreCell:
    """One bounded convex cell.

    ``vertices`` are absolute, unwrapped coordinates (the cell of a generator
    near a window side pokes out of the window).  Faces with area below
    ``TINY_FACE`` are kept in the raw combinatorics but excluded from
    ``faces``, ``nof`` and the adjacency.
    """

    __slots__ = (
        "index", "vertices", "volume", "_rings", "_flen", "_nbr", "_shift",
        "_area", "_per", "_keep", "max_radius", "nof", "surface", "neighbors", "raw_neighbors",
    )

    def __init__(self, index, vertices, volume, rings, flen, nbr, shift, area, per, max_radius):
        self.index = index
        self.vertices = vertices
        self.volume = volume
        self._rings = rings
        self._flen = flen
        self._nbr = nbr
        self._shift = shift
        self._area = area
        self._per = per
        self._keep = keep = area >= TINY_FACE
        self.max_radius = max_radius
        self.nof = int(keep.sum())
        self.surface = float(area[keep].sum())
        # distinct neighbouring generators (kept faces / all faces), excluding the cell itself
        self.neighbors = tuple(sorted(set(nbr[keep].tolist()) - {index}))
        self.raw_neighbors = tuple(sorted(set(nbr.tolist()) - {index}))

    @property
    def faces(self) -> list[Face]:
        return [
            Face(int(self._nbr[f]), tuple(int(v) for v in self._shift[f]), self._rings[f, : self._flen[f]].copy(),
                 float(self._area[f]), float(self._per[f]))
            for f in np.flatnonzero(self._keep)
        ]

    @property
    def total_edge_length(self) -> float:
        return float(self._per[self._keep].sum() / 2.0)

    def face_arrays(self):
        k = self._keep
        return self._nbr[k], self._shift[k], self._area[k], self._per[k], self._flen[k]

    def euler_characteristic(self) -> int:
        n_v = len(self.vertices)
        n_e = int(self._flen.sum()) // 2
        return n_v - n_e + len(self._flen)

    def characteristics(self) -> CellCharacteristics:
        surf = self.surface
        return CellCharacteristics(self.volume, surf, self.nof, self.total_edge_length, sphericity(self.volume, surf))

    def same_as(self, other: "LaguerreCell") -> bool:
        return (
            other is not None
            and self.volume == other.volume
            and np.array_equal(self._area, other._area)
            and np.array_equal(self._nbr, other._nbr)
        )


class _Neighbourhood:
    """Cached, distance-sorted periodic images around each generator."""

    def __init__(self, positions: np.ndarray, window: Window):
        self.positions = positions
        self.window = window
        self.sides = window.sides
        self._tilings: dict[int, tuple] = {}
        self._cache: dict[int, tuple] = {}
        n = max(len(positions), 1)
        self.spacing = (window.volume / n) ** (1.0 / 3.0)

    def initial_radius(self, wmax: float) -> float:
        return 2.2 * self.spacing + math.sqrt(wmax)

    def _tiling(self, shells: int):
        t = self._tilings.get(shells)
        if t is None:
            r = np.arange(-shells, shells + 1)
            shifts = np.array(np.meshgrid(r, r, r, indexing="ij")).reshape(3, -1).T
            n = len(self.positions)
            ids = np.tile(np.arange(n), len(shifts))
            sh = np.repeat(shifts, n, axis=0)
            pts = self.positions[ids] + sh * self.sides
            t = (cKDTree(pts), ids, sh, pts)
            self._tilings[shells] = t
        return t

    def prefetch(self, radius: float) -> None:
        """Fill the cache for every generator with one batched query."""
        shells = int(radius // self.window.min_side) + 1
        tree = self._tiling(shells)[0]
        hits = tree.query_ball_point(self.positions, radius)
        for i, idx in enumerate(hits):
            self._store(i, radius, shells, np.asarray(idx, dtype=np.int64))

    def candidates(self, i: int, radius: float):
        hit = self._cache.get(i)
        if hit is not None and hit[0] >= radius:
            return hit
        shells = int(radius // self.window.min_side) + 1
        tree = self._tiling(shells)[0]
        idx = np.asarray(tree.query_ball_point(self.positions[i], radius), dtype=np.int64)
        return self._store(i, radius, shells, idx)

    def _store(self, i, radius, shells, idx):
        _, ids, sh, pts = self._tiling(shells)
        p = self.positions[i]
        cid, cshift = ids[idx], sh[idx]
        keep = ~((cid == i) & np.all(cshift == 0, axis=1))
        idx, cid, cshift = idx[keep], cid[keep], cshift[keep]
        disp = pts[idx] - p
        dist = np.sqrt(np.einsum("ij,ij->i", disp, disp))
        order = np.lexsort((cshift[:, 2], cshift[:, 1], cshift[:, 0], cid, dist))
        entry = (radius, np.ascontiguousarray(disp[order]), cid[order], cshift[order])
        self._cache[i] = entry
        return entry


def _compute_cell(nb: _Neighbourhood, i: int, weights: np.ndarray, wmax: float, eps: float = TIE_EPS):
    half = nb.sides / 2.0
    w = float(weights[i])
    hit = nb._cache.get(i)
    radius = hit[0] if hit is not None else nb.initial_radius(wmax)
    while True:
        _, disp, cid, cshift = nb.candidates(i, radius)
        status, V, flen, F, flab, farea, fper, vol, reach = _clip.compute_cell(
            half, w, disp, weights[cid], wmax, eps
        )
        if status == _clip.EMPTY:
            return None
        if status == _clip.DEGENERATE:
            raise DegenerateConfiguration(f"cell {i}: unresolvable tie while clipping")
        if status == _clip.OVERFLOW:
            raise DegenerateConfiguration(f"cell {i}: exceeded clipping capacity")
        if reach <= radius:
            break
        radius = max(reach * 1.1, radius * 1.5)
    if vol < EMPTY_VOLUME:
        return None
    nbr = np.empty(len(flab), dtype=np.int64)
    shift = np.empty((len(flab), 3), dtype=np.int64)
    box = flab < 0
    nbr[box] = i
    if box.any():
        shift[box] = [_BOX_SHIFTS[int(l)] for l in flab[box]]
    nbr[~box] = cid[flab[~box]]
    shift[~box] = cshift[flab[~box]]
    r2 = np.einsum("ij,ij->i", V, V)
    return LaguerreCell(i, V + nb.positions[i], float(vol), F, flen, nbr, shift, farea, fper, float(np.sqrt(r2.max())))


@dataclass(frozen=True)
class ChangeReport:
    changed: tuple = ()
    recomputed: tuple = ()

    def __bool__(self):
        return bool(self.changed)


@dataclass
class PeriodicTessellation:
    pattern: MarkedPointPattern
    cells: list
    _nb: _Neighbourhood = field(repr=False)

    @property
    def window(self) -> Window:
        return self.pattern.window

    def __len__(self):
        return len(self.cells)

    @property
    def empty(self) -> frozenset:
        return frozenset(i for i, c in enumerate(self.cells) if c is None)

    @property
    def feasible(self) -> bool:
        return all(c is not None for c in self.cells)

    @property
    def nonempty_cells(self) -> list[LaguerreCell]:
        return [c for c in self.cells if c is not None]

    def cell(self, i: int) -> LaguerreCell:
        c = self.cells[i]
        if c is None:
            raise EmptyCell(f"cell {i} is empty")
        return c

    @property
    def adjacency(self) -> frozenset:
        """Unordered pairs ``(i, j)``, ``i < j``, of distinct generators sharing a face."""
        pairs = set()
        for c in self.nonempty_cells:
            for j in c.neighbors:
                j = int(j)
                pairs.add((min(c.index, j), max(c.index, j)))
        return frozenset(pairs)

    def volumes(self) -> np.ndarray:
        return np.array([c.volume if c is not None else 0.0 for c in self.cells])

    def total_volume(self) -> float:
        return float(sum(c.volume for c in self.nonempty_cells))


def build_tessellation(pattern: MarkedPointPattern, eps: float = TIE_EPS) -> PeriodicTessellation:
    """Laguerre tessellation of the periodic extension of ``pattern``."""
    if len(pattern) == 0:
        raise InvalidPattern("cannot tessellate an empty pattern")
    nb = _Neighbourhood(pattern.positions, pattern.window)
    w = pattern.weights
    wmax = float(w.max())
    nb.prefetch(nb.initial_radius(wmax))
    cells = [_compute_cell(nb, i, w, wmax, eps) for i in range(len(pattern))]
    return PeriodicTessellation(pattern, cells, nb)


def update_generator(tess: PeriodicTessellation, index: int, position=None, radius=None, eps: float = TIE_EPS):
    """Replace one generator and recompute only the cells it can touch.

    Returns ``(new_tessellation, ChangeReport)``; the input is left untouched.
    """
    pat = tess.pattern
    n = len(pat)
    if not 0 <= index < n:
        raise IndexError(index)
    old_pos = pat.positions[index]
    new_pos = old_pos if position is None else np.asarray(position, float)
    new_r = float(pat.radii[index] if radius is None else radius)
    if np.array_equal(new_pos, old_pos) and new_r == pat.radii[index]:
        return tess, ChangeReport()
    win = pat.window
    if not (0 <= new_r <= pat.r_max):
        raise InvalidPattern(f"radius {new_r} outside [0, {pat.r_max}]")
    moved = not np.array_equal(new_pos, old_pos)
    positions = pat.positions
    if moved:
        if np.any(new_pos < 0) or np.any(new_pos >= win.sides):
            raise InvalidPattern("position outside the window")
        d = win.distance(np.delete(positions, index, axis=0), new_pos)
        if d.size and d.min() <= 1e-12:
            raise InvalidPattern("position coincides with another generator")
        positions = positions.copy()
        positions[index] = new_pos
    radii = pat.radii.copy()
    radii[index] = new_r
    new_pat = MarkedPointPattern(win, positions, radii, pat.r_max, validate=False)
    nb = _Neighbourhood(positions, win) if moved else tess._nb
    if moved:
        tess._nb.candidates(index, tess._nb._cache.get(index, (tess._nb.initial_radius(float(pat.weights.max())),))[0])
    cells, changed, recomputed = _recompute_around(tess, nb, index, positions, new_pat.weights, eps)
    return PeriodicTessellation(new_pat, cells, nb), ChangeReport(tuple(changed), tuple(recomputed))


def _touching_old(tess: PeriodicTessellation, index: int) -> set:
    """Generators whose radical plane with ``index`` reaches its current cell.

    These are the cells that may take over space released by ``index``,
    including cells that only touch it along an edge or at a vertex.
    """
    cell = tess.cells[index]
    if cell is None:
        return set()
    nb = tess._nb
    w = tess.pattern.weights
    radius, disp, cid, _ = nb.candidates(index, nb._cache[index][0])
    V = cell.vertices - nb.positions[index]
    R = cell.max_radius
    near = np.sqrt(np.einsum("ij,ij->i", disp, disp)) <= R + np.sqrt(R * R + w.max() - w[index]) + 1e-6
    q, ids = disp[near], cid[near]
    if len(q) == 0:
        return set()
    s = 2.0 * (V @ q.T) - (np.einsum("ij,ij->i", q, q) + w[index] - w[ids])[None, :]
    return set(int(j) for j in np.unique(ids[s.max(axis=0) >= -1e-8]))


def _reached_new(cells: Sequence, positions: np.ndarray, weights: np.ndarray, window: Window, index: int) -> set:
    """Nonempty cells that generator ``index`` (new state) cuts or swallows.

    A bounding-ball filter (``|D|^2 - 2|D|R_k + w_k - w_index < 0`` for the
    shortest displacement ``D``) is followed by an exact vertex test of the
    radical planes of all periodic images of ``index`` against cell ``k``.
    """
    ks = np.array([k for k, c in enumerate(cells) if c is not None and k != index], dtype=np.int64)
    if len(ks) == 0:
        return set()
    R = np.array([cells[k].max_radius for k in ks])
    D = window.distance(positions[ks], positions[index])
    f = D * D - 2.0 * D * R + weights[ks] - weights[index]
    sides = window.sides
    out = set()
    cand = ks[f < 1e-8]
    deltas = window.delta(positions[cand], positions[index])
    for k, d in zip(cand.tolist(), deltas):
        if _clip.plane_reaches(cells[k].vertices - positions[k], d, sides, weights[k] - weights[index], 1e-8):
            out.add(k)
    return out


def _affected(tess: PeriodicTessellation, index: int, new_self, positions, weights) -> set:
    """Cells other than ``index`` that may change.

    For a pure radius change the update is monotone: a growing generator only
    takes space from others (its new neighbours and cells it cuts or
    swallows), a shrinking one only gives space away (to cells touching its
    old cell, or to empty cells that revive).
    """
    old = tess.cells[index]
    w_old = tess.pattern.weights[index]
    moved = not np.array_equal(positions[index], tess.pattern.positions[index])
    grows = not moved and weights[index] > w_old
    shrinks = not moved and weights[index] < w_old
    affected = set()
    if old is not None and not grows:
        affected.update(int(j) for j in old.raw_neighbors)
        affected |= _touching_old(tess, index)
        affected.update(j for j, c in enumerate(tess.cells) if c is None)
    if new_self is not None and not shrinks:
        affected.update(int(j) for j in new_self.raw_neighbors)
        affected |= _reached_new(tess.cells, positions, weights, tess.window, index)
    affected.discard(index)
    return affected


def _recompute_around(tess: PeriodicTessellation, nb: _Neighbourhood, index: int, positions, weights, eps: float):
    cells = tess.cells
    wmax = float(weights.max())
    new_self = _compute_cell(nb, index, weights, wmax, eps)
    affected = _affected(tess, index, new_self, positions, weights)
    out = list(cells)
    out[index] = new_self
    changed = []
    if not (new_self is None and cells[index] is None) and not (new_self is not None and new_self.same_as(cells[index])):
        changed.append(index)
    for j in sorted(affected):
        c = _compute_cell(nb, j, weights, wmax, eps)
        old = cells[j]
        if not ((c is None and old is None) or (c is not None and c.same_as(old))):
            changed.append(j)
        out[j] = c
    return out, sorted(changed), [index] + sorted(affected)


def trial_cells(tess: PeriodicTessellation, index: int, radius: float, eps: float = TIE_EPS, stop_on_empty: bool = False):
    """Cells that would change if generator ``index`` had ``radius``.

    Returns ``{generator: LaguerreCell | None}`` for every recomputed cell,
    without building a new tessellation object.  With ``stop_on_empty`` the
    scan ends at the first empty cell, which is enough to decide feasibility.
    """
    w = tess.pattern.weights.copy()
    w[index] = radius * radius
    nb = tess._nb
    wmax = float(w.max())
    new_self = _compute_cell(nb, index, w, wmax, eps)
    out = {index: new_self}
    if new_self is None and stop_on_empty:
        return out
    for j in sorted(_affected(tess, index, new_self, tess.pattern.positions, w)):
        out[j] = c = _compute_cell(nb, j, w, wmax, eps)
        if c is None and stop_on_empty:
            break
    return out


def apply_trial(tess: PeriodicTessellation, index: int, radius: float, trial: dict) -> PeriodicTessellation:
    """Commit a complete ``trial_cells`` result (computed without ``stop_on_empty``)."""
    pat = tess.pattern
    radii = pat.radii.copy()
    radii[index] = radius
    cells = list(tess.cells)
    for j, c in trial.items():
        cells[j] = c
    return PeriodicTessellation(MarkedPointPattern(pat.window, pat.positions, radii, pat.r_max, validate=False), cells, tess._nb)


# ---------------------------------------------------------------------------
# characteristics


def cell_characteristics(tess: PeriodicTessellation, index: int) -> CellCharacteristics:
    return tess.cell(index).characteristics()


def face_characteristics(tess: PeriodicTessellation) -> list[FaceCharacteristics]:
    """Every face once, with ``dvol = |vol_i - vol_j|``.

    A face between ``i`` and ``j`` is reported from the cell with the smaller
    index; a face of a cell with its own periodic image is reported once, from
    the side whose image shift is lexicographically positive.
    """
    vols = tess.volumes()
    out = []
    for c in tess.nonempty_cells:
        nbr, shift, area, per, flen = c.face_arrays()
        for f in range(len(nbr)):
            j = int(nbr[f])
            if j < c.index or (j == c.index and tuple(shift[f]) < (0, 0, 0)):
                continue
            out.append(FaceCharacteristics(c.index, j, float(area[f]), float(per[f]), int(flen[f]),
                                           abs(vols[c.index] - vols[j])))
    return out


def characteristic_samples(tess: PeriodicTessellation) -> dict[str, np.ndarray]:
    """Samples of nof, vol, surf, tel, spher (per cell) and dvol (per adjacent pair)."""
    cells = tess.nonempty_cells
    ch = [c.characteristics() for c in cells]
    vols = tess.volumes()
    pairs = sorted(tess.adjacency)
    dvol = np.array([abs(vols[i] - vols[j]) for i, j in pairs], dtype=float)
    return {
        "nof": np.array([c.nof for c in ch], dtype=float),
        "vol": np.array([c.vol for c in ch]),
        "surf": np.array([c.surf for c in ch]),
        "tel": np.array([c.tel for c in ch]),
        "spher": np.array([c.spher for c in ch]),
        "dvol": dvol,
    }


def correlation_table(tess: PeriodicTessellation) -> dict:
    """Pearson correlations among cell characteristics and among face characteristics."""
    s = characteristic_samples(tess)
    cell_keys = ["vol", "surf", "tel", "nof", "spher"]
    cm = np.corrcoef(np.vstack([s[k] for k in cell_keys]))
    faces = [f for f in face_characteristics(tess) if f.i != f.j]
    fkeys = ["farea", "fper", "fnoe", "dvol"]
    fm = np.corrcoef(np.array([[getattr(f, k) for k in fkeys] for f in faces], dtype=float).T)
    return {
        "cell": {"keys": cell_keys, "matrix": cm.tolist()},
        "face": {"keys": fkeys, "matrix": fm.tolist()},
    }


def slice_polygons(tess: PeriodicTessellation, z: float) -> list[dict]:
    """Intersections of the cells with the plane at height ``z`` (mod c).

    Polygon coordinates are unwrapped in x and y, so polygons of cells near a
    side may extend beyond the window.
    """
    c_side = tess.window.c
    out = []
    for cell in tess.nonempty_cells:
        V = cell.vertices
        zlo, zhi = V[:, 2].min(), V[:, 2].max()
        k0 = math.ceil((zlo - z) / c_side)
        k1 = math.floor((zhi - z) / c_side)
        for k in range(k0, k1 + 1):
            zz = z + k * c_side
            pts = []
            for f in range(len(cell._flen)):
                ring = cell._rings[f, : cell._flen[f]]
                for a, b in zip(ring, np.roll(ring, -1)):
                    za, zb = V[a, 2] - zz, V[b, 2] - zz
                    if (za < 0) != (zb < 0):
                        t = za / (za - zb)
                        pts.append(V[a, :2] + t * (V[b, :2] - V[a, :2]))
            if len(pts) < 3:
                continue
            pts = np.array(pts)
            ctr = pts.mean(axis=0)
            ang = np.arctan2(pts[:, 1] - ctr[1], pts[:, 0] - ctr[0])
            pts = pts[np.argsort(ang)]
            keep = np.ones(len(pts), bool)
            keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-9
            pts = pts[keep]
            if len(pts) >= 3:
                out.append({"id": cell.index, "polygon": np.round(pts, 9).tolist()})
    return out


def write_cells_csv(path: str | Path, tess: PeriodicTessellation) -> None:
    pat = tess.pattern
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "z", "r", *CELL_FIELDS])
        for c in tess.nonempty_cells:
            ch = c.characteristics()
            p = pat.positions[c.index]
            w.writerow([c.index, *(repr(float(v)) for v in p), repr(float(pat.radii[c.index])),
                        repr(ch.vol), repr(ch.surf), ch.nof, repr(ch.tel), repr(ch.spher)])


def write_faces_csv(path: str | Path, tess: PeriodicTessellation) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "farea", "fper", "fnoe", "dvol"])
        for f in face_characteristics(tess):
            w.writerow([f.i, f.j, repr(f.farea), repr(f.fper), f.fnoe, repr(f.dvol)])


def write_slices_json(path: str | Path, tess: PeriodicTessellation, zs: Iterable[float], provenance: dict = None) -> None:
    """Slice polygons per height; with ``provenance`` the list sits under ``"slices"`` next to it."""
    data = [{"z": float(z), "polygons": slice_polygons(tess, z)} for z in zs]
    if provenance is not None:
        data = {"provenance": provenance, "slices": data}
    Path(path).write_text(json.dumps(data, indent=1) + "\n")
