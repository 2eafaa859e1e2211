"""CSV ingestion and export for longitudinal predictors, responses and surfaces.

Predictors travel in long format -- one row per (subject, variable, time,
value) -- because different variables may be observed on different time grids.
All writers emit UTF-8 with plain newline endings and format floats at 17
significant digits so values survive a write/read round trip exactly; all
parsers reject non-finite numbers and report the offending line.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .basis import BSplineBasis, RawCurve, smooth_curve
from .fpca import FunctionalSample

LONG_HEADER = ["subject", "variable", "time", "value"]
RESPONSE_HEADER = ["subject", "y", "t"]


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _parse_float(token: str, line_no: int, column: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ValueError(f"line {line_no}: cannot parse {column}={token!r} as a number")
    if not math.isfinite(value):
        raise ValueError(f"line {line_no}: non-finite {column}={token!r}")
    return value


@dataclass(frozen=True)
class LongTable:
    """Long-format longitudinal observations, normalized and validated.

    Rows are sorted by (variable, subject, time); the (subject, variable,
    time) key is unique and every (subject, variable) pair has at least two
    observations.
    """

    subjects: tuple[str, ...]
    variables: tuple[str, ...]
    times: np.ndarray
    values: np.ndarray

    @classmethod
    def from_rows(cls, rows, lines=None) -> "LongTable":
        """Build from an iterable of (subject, variable, time, value) tuples.

        ``lines`` optionally maps row positions to source line numbers for
        error reporting.
        """
        rows = list(rows)
        seen = {}
        for pos, (subj, var, time, value) in enumerate(rows):
            key = (subj, var, float(time))
            if key in seen:
                where = f"line {lines[pos]}" if lines else f"row {pos}"
                raise ValueError(f"{where}: duplicate key (subject={subj!r}, "
                                 f"variable={var!r}, time={time!r})")
            seen[key] = pos
        order = sorted(range(len(rows)), key=lambda i: (rows[i][1], rows[i][0], rows[i][2]))
        subjects = tuple(rows[i][0] for i in order)
        variables = tuple(rows[i][1] for i in order)
        times = np.array([rows[i][2] for i in order], dtype=float)
        values = np.array([rows[i][3] for i in order], dtype=float)
        counts = {}
        for subj, var in zip(subjects, variables):
            counts[(subj, var)] = counts.get((subj, var), 0) + 1
        for (subj, var), count in counts.items():
            if count < 2:
                raise ValueError(f"(subject={subj!r}, variable={var!r}) has only "
                                 f"{count} observation; need at least 2")
        return cls(subjects=subjects, variables=variables, times=times, values=values)

    def __len__(self) -> int:
        return len(self.subjects)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LongTable):
            return NotImplemented
        return (self.subjects == other.subjects and self.variables == other.variables
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values))

    def variable_names(self) -> list[str]:
        return sorted(set(self.variables))

    def subject_names(self) -> list[str]:
        return sorted(set(self.subjects))

    def curve(self, subject: str, variable: str) -> RawCurve:
        """Observations of one (subject, variable) pair as a RawCurve."""
        index = getattr(self, "_index", None)
        if index is None:
            # rows are sorted, so each (subject, variable) pair is one contiguous run
            index = {}
            start = 0
            for pos in range(1, len(self.subjects) + 1):
                if (pos == len(self.subjects)
                        or (self.subjects[pos], self.variables[pos])
                        != (self.subjects[start], self.variables[start])):
                    index[(self.subjects[start], self.variables[start])] = (start, pos)
                    start = pos
            object.__setattr__(self, "_index", index)
        span = index.get((subject, variable))
        if span is None:
            raise KeyError(f"no observations for (subject={subject!r}, variable={variable!r})")
        return RawCurve(time_points=self.times[span[0]:span[1]],
                        values=self.values[span[0]:span[1]])

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LONG_HEADER)
            for subj, var, time, value in zip(self.subjects, self.variables,
                                              self.times, self.values):
                writer.writerow([subj, var, _fmt(time), _fmt(value)])


def load_long_csv(path) -> LongTable:
    """Read and validate a long-format predictor CSV.

    The header must be exactly ``subject,variable,time,value``; malformed or
    non-finite rows and duplicate keys raise ValueError naming the line.
    """
    rows, lines = [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LONG_HEADER:
            raise ValueError(f"expected header {','.join(LONG_HEADER)!r}, got {header!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"line {line_no}: expected 4 fields, got {len(row)}")
            subj, var, time, value = row
            rows.append((subj, var, _parse_float(time, line_no, "time"),
                         _parse_float(value, line_no, "value")))
            lines.append(line_no)
    return LongTable.from_rows(rows, lines=lines)


@dataclass(frozen=True)
class ResponseTable:
    """Scalar response and exogenous value per subject; subjects unique."""

    subjects: tuple[str, ...]
    y: np.ndarray
    t: np.ndarray

    @classmethod
    def from_rows(cls, rows, lines=None) -> "ResponseTable":
        rows = list(rows)
        seen = {}
        for pos, (subj, *_rest) in enumerate(rows):
            if subj in seen:
                where = f"line {lines[pos]}" if lines else f"row {pos}"
                raise ValueError(f"{where}: duplicate subject {subj!r}")
            seen[subj] = pos
        order = sorted(range(len(rows)), key=lambda i: rows[i][0])
        return cls(subjects=tuple(rows[i][0] for i in order),
                   y=np.array([rows[i][1] for i in order], dtype=float),
                   t=np.array([rows[i][2] for i in order], dtype=float))

    def __len__(self) -> int:
        return len(self.subjects)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ResponseTable):
            return NotImplemented
        return (self.subjects == other.subjects and np.array_equal(self.y, other.y)
                and np.array_equal(self.t, other.t))

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RESPONSE_HEADER)
            for subj, y, t in zip(self.subjects, self.y, self.t):
                writer.writerow([subj, _fmt(y), _fmt(t)])


def load_response_csv(path) -> ResponseTable:
    """Read a ``subject,y,t`` CSV with the same validation rules as the long format."""
    rows, lines = [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RESPONSE_HEADER:
            raise ValueError(f"expected header {','.join(RESPONSE_HEADER)!r}, got {header!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"line {line_no}: expected 3 fields, got {len(row)}")
            subj, y, t = row
            rows.append((subj, _parse_float(y, line_no, "y"),
                         _parse_float(t, line_no, "t")))
            lines.append(line_no)
    return ResponseTable.from_rows(rows, lines=lines)


def load_subject_t_csv(path) -> dict[str, float]:
    """Read a ``subject,t`` CSV (prediction input) into a subject -> t map."""
    out: dict[str, float] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["subject", "t"]:
            raise ValueError(f"expected header 'subject,t', got {header!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"line {line_no}: expected 2 fields, got {len(row)}")
            subj, t = row
            if subj in out:
                raise ValueError(f"line {line_no}: duplicate subject {subj!r}")
            out[subj] = _parse_float(t, line_no, "t")
    return out


def assemble(long: LongTable, resp: ResponseTable,
             bases: dict[str, BSplineBasis]
             ) -> tuple[dict[str, FunctionalSample], np.ndarray, np.ndarray, list[str]]:
    """Smooth every (subject, variable) curve and align rows across variables.

    Subjects are processed in sorted order shared by all variables, so the
    output is invariant to input row order.  Returns per-variable samples plus
    the aligned response, exogenous values, and the subject order.  Missing
    (subject, variable) pairs raise ValueError listing every gap.
    """
    subjects = sorted(resp.subjects)
    variables = sorted(bases.keys())
    available = set(zip(long.subjects, long.variables))
    gaps = [(s, v) for v in variables for s in subjects if (s, v) not in available]
    if gaps:
        listing = ", ".join(f"({s}, {v})" for s, v in gaps[:10])
        more = "" if len(gaps) <= 10 else f" and {len(gaps) - 10} more"
        raise ValueError(f"missing curves for {len(gaps)} (subject, variable) pairs: "
                         f"{listing}{more}")
    resp_index = {s: i for i, s in enumerate(resp.subjects)}
    order = [resp_index[s] for s in subjects]
    y = resp.y[order]
    t = resp.t[order]

    samples = {}
    for var in variables:
        basis = bases[var]
        coef = np.vstack([smooth_curve(long.curve(subj, var), basis)
                          for subj in subjects])
        samples[var] = FunctionalSample(basis=basis, coef=coef)
    return samples, y, t, subjects


def export_surface_grid(surface: np.ndarray, grid_s: np.ndarray,
                        grid_t: np.ndarray, path) -> None:
    """Write an ``s,t,beta`` CSV, row-major over (s, t), at full precision."""
    surface = np.asarray(surface, dtype=float)
    grid_s = np.asarray(grid_s, dtype=float)
    grid_t = np.asarray(grid_t, dtype=float)
    if surface.shape != (grid_s.size, grid_t.size):
        raise ValueError(f"surface shape {surface.shape} does not match grids "
                         f"({grid_s.size}, {grid_t.size})")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("s,t,beta\n")
        for a, s_val in enumerate(grid_s):
            for b, t_val in enumerate(grid_t):
                fh.write(f"{_fmt(s_val)},{_fmt(t_val)},{_fmt(surface[a, b])}\n")


def read_surface_grid(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`export_surface_grid`: returns (surface, grid_s, grid_t)."""
    s_vals, t_vals, beta = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "s,t,beta":
            raise ValueError(f"expected header 's,t,beta', got {header!r}")
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            if len(parts) != 3:
                raise ValueError(f"line {line_no}: expected 3 fields, got {len(parts)}")
            s_vals.append(_parse_float(parts[0], line_no, "s"))
            t_vals.append(_parse_float(parts[1], line_no, "t"))
            beta.append(_parse_float(parts[2], line_no, "beta"))
    # first-occurrence order reproduces the grids as written (row-major over s, t)
    grid_s = list(dict.fromkeys(s_vals))
    grid_t = list(dict.fromkeys(t_vals))
    if len(beta) != len(grid_s) * len(grid_t):
        raise ValueError(f"{len(beta)} rows do not fill a {len(grid_s)}x{len(grid_t)} grid")
    surface = np.array(beta).reshape(len(grid_s), len(grid_t))
    return surface, np.array(grid_s), np.array(grid_t)
