"""Value types for sparse functional data and grid-sampled functions.

All containers are immutable after construction: numpy buffers are copied
and flagged read-only.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DataError",
    "SparseTrajectory",
    "LabeledSubject",
    "SparseDataset",
    "EvalGrid",
    "GridFunction1D",
    "GridFunction2D",
    "interpolate1",
    "interpolate2",
    "load_dataset",
    "load_trajectories",
    "save_dataset",
    "save_trajectories",
    "grid_function_to_dict",
    "grid_function_from_dict",
]


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def _frozen(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or infinite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SparseTrajectory:
    """Observation times in [0, 1] and noisy values for one subject."""

    subject_id: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = _frozen(self.times, "times")
        values = _frozen(self.values, "values")
        if times.size == 0:
            raise DataError(f"subject {self.subject_id!r} has no observations")
        if times.size != values.size:
            raise DataError(
                f"subject {self.subject_id!r}: {times.size} times but {values.size} values"
            )
        if times.min() < 0.0 or times.max() > 1.0:
            raise DataError(f"subject {self.subject_id!r}: times must lie in [0, 1]")
        object.__setattr__(self, "subject_id", str(self.subject_id))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return int(self.times.size)

    def __eq__(self, other):
        if not isinstance(other, SparseTrajectory):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.subject_id, self.times.tobytes(), self.values.tobytes()))


@dataclass(frozen=True)
class LabeledSubject:
    trajectory: SparseTrajectory
    response: float

    def __post_init__(self):
        y = float(self.response)
        if not math.isfinite(y):
            raise DataError(f"subject {self.trajectory.subject_id!r}: response is not finite")
        object.__setattr__(self, "response", y)

    @property
    def subject_id(self) -> str:
        return self.trajectory.subject_id


@dataclass(frozen=True)
class SparseDataset:
    """Training sample of (trajectory, response) pairs with unique ids.

    Fitting routines additionally require at least two subjects.
    """

    subjects: tuple

    def __post_init__(self):
        subjects = tuple(self.subjects)
        if not subjects:
            raise DataError("no subjects")
        ids = [s.subject_id for s in subjects]
        if len(set(ids)) != len(ids):
            raise DataError("subject ids are not unique")
        object.__setattr__(self, "subjects", subjects)

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]

    @cached_property
    def responses(self) -> np.ndarray:
        return _frozen([s.response for s in self.subjects], "responses")

    @cached_property
    def counts(self) -> np.ndarray:
        out = np.array([s.trajectory.size for s in self.subjects], dtype=int)
        out.setflags(write=False)
        return out

    @cached_property
    def pooled_times(self) -> np.ndarray:
        return _frozen(np.concatenate([s.trajectory.times for s in self.subjects]), "times")

    @cached_property
    def pooled_values(self) -> np.ndarray:
        return _frozen(np.concatenate([s.trajectory.values for s in self.subjects]), "values")

    @cached_property
    def owner(self) -> np.ndarray:
        """Subject index of every pooled observation."""
        out = np.repeat(np.arange(self.n), self.counts)
        out.setflags(write=False)
        return out

    def subset(self, indices: Iterable[int]) -> "SparseDataset":
        return SparseDataset(tuple(self.subjects[i] for i in indices))

    def without(self, index: int) -> "SparseDataset":
        return SparseDataset(self.subjects[:index] + self.subjects[index + 1:])

    def trajectories(self) -> list[SparseTrajectory]:
        return [s.trajectory for s in self.subjects]


@dataclass(frozen=True)
class EvalGrid:
    """``size`` equispaced points on [0, 1], endpoints included."""

    size: int = 51

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 2:
            raise ValueError("grid size must be an integer >= 2")
        object.__setattr__(self, "size", int(self.size))

    @cached_property
    def points(self) -> np.ndarray:
        pts = np.linspace(0.0, 1.0, self.size)
        pts.setflags(write=False)
        return pts

    @property
    def spacing(self) -> float:
        return 1.0 / (self.size - 1)

    @cached_property
    def weights(self) -> np.ndarray:
        """Composite trapezoid weights."""
        w = np.full(self.size, self.spacing)
        w[0] = w[-1] = self.spacing / 2
        w.setflags(write=False)
        return w


@dataclass(frozen=True, eq=False)
class GridFunction1D:
    grid: EvalGrid
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values, "grid function values")
        if vals.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {vals.size}")
        object.__setattr__(self, "values", vals)

    def __eq__(self, other):
        if not isinstance(other, GridFunction1D):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    def __call__(self, t):
        return interpolate1(self, t)


@dataclass(frozen=True, eq=False)
class GridFunction2D:
    """Function on grid x grid; ``symmetric=True`` symmetrizes on construction."""

    grid: EvalGrid
    values: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        g = self.grid.size
        if vals.shape != (g, g):
            raise ValueError(f"expected a {g}x{g} matrix, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise DataError("grid function values contain NaN or infinite entries")
        if self.symmetric:
            vals = (vals + vals.T) / 2
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __eq__(self, other):
        if not isinstance(other, GridFunction2D):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    def diagonal(self) -> GridFunction1D:
        return GridFunction1D(self.grid, np.diag(self.values).copy())


def _check_unit(t, what="t"):
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"{what} must lie in [0, 1]")
    return t


def _locate(grid: EvalGrid, t: np.ndarray):
    # locating against the stored nodes keeps the result exact at nodes
    pts = grid.points
    idx = np.clip(np.searchsorted(pts, t, side="right") - 1, 0, grid.size - 2)
    return idx, (t - pts[idx]) / (pts[idx + 1] - pts[idx])


def interpolate1(f: GridFunction1D, t):
    """Piecewise-linear interpolation; scalar in, scalar out."""
    tt = _check_unit(t)
    out = np.interp(tt, f.grid.points, f.values)
    return float(out) if out.ndim == 0 else out


def interpolate2(K: GridFunction2D, s, t):
    """Bilinear interpolation of ``K`` at ``(s, t)`` (broadcasting).

    For a symmetric ``K`` the arguments are put in canonical order so the
    result is exactly symmetric under swapping them.
    """
    ss = _check_unit(s, "s")
    tt = _check_unit(t, "t")
    ss, tt = np.broadcast_arrays(ss, tt)
    if K.symmetric:
        ss, tt = np.minimum(ss, tt), np.maximum(ss, tt)
    i, a = _locate(K.grid, ss)
    j, b = _locate(K.grid, tt)
    V = K.values
    out = (
        (1 - a) * (1 - b) * V[i, j]
        + a * (1 - b) * V[i + 1, j]
        + (1 - a) * b * V[i, j + 1]
        + a * b * V[i + 1, j + 1]
    )
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- serialization


def grid_function_to_dict(f) -> dict:
    if isinstance(f, GridFunction1D):
        return {"grid_size": f.grid.size, "values": [float(v) for v in f.values]}
    return {
        "grid_size": f.grid.size,
        "symmetric": bool(f.symmetric),
        "values": [[float(v) for v in row] for row in f.values],
    }


def grid_function_from_dict(d: dict):
    grid = EvalGrid(int(d["grid_size"]))
    vals = np.asarray(d["values"], dtype=float)
    if vals.ndim == 1:
        return GridFunction1D(grid, vals)
    return GridFunction2D(grid, vals, symmetric=bool(d.get("symmetric", False)))


def _read_csv(path: Path, required: Sequence[str]):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            return
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path}: header must contain {', '.join(required)}")
        cols = [header.index(c) for c in required]
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise DataError(f"{path}: row {rowno}: expected {len(header)} fields")
            yield rowno, [row[c].strip() for c in cols]


def _float(text: str, path, rowno, name) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{path}: row {rowno}: cannot parse {name} {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"{path}: row {rowno}: {name} is not finite")
    return v


def _read_observations(path: Path) -> dict[str, tuple[list, list]]:
    obs: dict[str, tuple[list, list]] = {}
    for rowno, (sid, t, v) in _read_csv(path, ("subject_id", "time", "value")):
        tv = _float(t, path, rowno, "time")
        if not 0.0 <= tv <= 1.0:
            raise DataError(f"{path}: row {rowno}: time {tv} outside [0, 1]")
        vv = _float(v, path, rowno, "value")
        times, values = obs.setdefault(sid, ([], []))
        times.append(tv)
        values.append(vv)
    if not obs:
        raise DataError(f"{path}: no subjects")
    return obs


def load_trajectories(path) -> list[SparseTrajectory]:
    """Read an observations CSV (no responses), e.g. for new subjects."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text())
        return [SparseTrajectory(s["id"], s["times"], s["values"]) for s in doc["subjects"]]
    obs = _read_observations(path)
    return [SparseTrajectory(sid, t, v) for sid, (t, v) in obs.items()]


def load_dataset(path, format: str | None = None, responses=None) -> SparseDataset:
    """Load a labelled dataset.

    Parameters
    ----------
    path : path-like
        Observations CSV (``subject_id,time,value``) or a JSON document
        ``{"subjects": [{"id", "times", "values", "y"}, ...]}``.
    format : {"csv", "json"}, optional
        Inferred from the file suffix when omitted.
    responses : path-like, optional
        Responses CSV (``subject_id,y``); required for CSV input.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "json":
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON at line {exc.lineno}") from None
        subjects = []
        for k, s in enumerate(doc.get("subjects", [])):
            try:
                traj = SparseTrajectory(str(s["id"]), s["times"], s["values"])
                subjects.append(LabeledSubject(traj, s["y"]))
            except KeyError as exc:
                raise DataError(f"{path}: subject #{k}: missing field {exc}") from None
        if not subjects:
            raise DataError(f"{path}: no subjects")
        return SparseDataset(tuple(subjects))
    if fmt != "csv":
        raise DataError(f"unsupported format {fmt!r}")
    if responses is None:
        raise DataError("CSV input needs a responses file (subject_id,y)")
    obs = _read_observations(path)
    resp: dict[str, float] = {}
    rpath = Path(responses)
    for rowno, (sid, y) in _read_csv(rpath, ("subject_id", "y")):
        if sid in resp:
            raise DataError(f"{rpath}: row {rowno}: duplicate response for subject {sid!r}")
        resp[sid] = _float(y, rpath, rowno, "y")
    missing = [sid for sid in obs if sid not in resp]
    if missing:
        raise DataError(f"subjects with observations but no response: {', '.join(missing[:5])}")
    return SparseDataset(
        tuple(LabeledSubject(SparseTrajectory(sid, t, v), resp[sid]) for sid, (t, v) in obs.items())
    )


def save_dataset(data: SparseDataset, path, format: str | None = None, responses=None) -> None:
    """Write ``data`` as JSON, or as an observations/responses CSV pair."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "json":
        doc = {
            "subjects": [
                {
                    "id": s.subject_id,
                    "times": [float(t) for t in s.trajectory.times],
                    "values": [float(v) for v in s.trajectory.values],
                    "y": s.response,
                }
                for s in data.subjects
            ]
        }
        path.write_text(json.dumps(doc, indent=1) + "\n")
        return
    if responses is None:
        raise ValueError("CSV output needs a responses path")
    save_trajectories(data.trajectories(), path)
    with open(responses, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "y"])
        for s in data.subjects:
            w.writerow([s.subject_id, repr(s.response)])


def save_trajectories(trajs: Sequence[SparseTrajectory], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "time", "value"])
        for tr in trajs:
            for t, v in zip(tr.times, tr.values):
                w.writerow([tr.subject_id, repr(float(t)), repr(float(v))])
