"""Snapshots (VTK legacy ASCII), diagnostics CSV and per-run output directories.

Snapshot layout: the POINTS block lists the mesh vertices followed, for a
quadratic velocity space, by the edge midpoints (flat, unlifted).  POLYGONS
reference only the vertices.  Scalars phi, mu and p are linear, so their
midpoint entries are vertex averages; ``read_snapshot`` keeps only the
vertex part of them.  Every float is written as ``% .16e``: 17 significant
digits reproduce a double exactly and the fixed width makes the byte size a
function of the point and triangle counts alone.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diagnostics import CSV_COLUMNS
from .errors import FormatError
from .forms import Family

logger = logging.getLogger(__name__)

VTK_HEADER = "# vtk DataFile Version 3.0"
CSV_SCHEMA = "esnsch-diagnostics-1"
_F = "% .16e"


@dataclass
class Snapshot:
    vertices: np.ndarray
    triangles: np.ndarray
    t: float
    step: int
    velocity_family: Family
    phi: np.ndarray
    mu: np.ndarray
    p: np.ndarray
    u: np.ndarray  # (n_nodes, 3), vertices then midpoints for P2
    points: np.ndarray


def _rows(a: np.ndarray) -> str:
    a = np.atleast_2d(a)
    fmt = " ".join([_F] * a.shape[1])
    return "\n".join(fmt % tuple(r) for r in a)


def _midpoint_extend(values: np.ndarray, edges: np.ndarray | None) -> np.ndarray:
    if edges is None:
        return values
    return np.concatenate([values, 0.5 * (values[edges[:, 0]] + values[edges[:, 1]])])


def snapshot_text(state) -> str:
    mesh = state.mesh
    family = state.u.space.family
    quadratic = family.degree == 2
    edges = mesh.edges if quadratic else None
    points = state.u.space.node_points
    n_pts, nv, nt = len(points), mesh.n_vertices, mesh.n_triangles
    parts = [
        VTK_HEADER,
        f"esnsch family={family.value} t={state.t!r} step={state.step_index}",
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {n_pts} double",
        _rows(points),
        f"POLYGONS {nt} {4 * nt}",
        "\n".join(f"3 {a} {b} {c}" for a, b, c in mesh.triangles),
        f"POINT_DATA {n_pts}",
    ]
    for name, f in (("phi", state.phi), ("mu", state.mu), ("p", state.p)):
        vals = _midpoint_extend(f.coeffs[:nv], edges)
        parts += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _rows(vals[:, None])]
    parts += ["VECTORS u double", _rows(state.u.coeffs.reshape(-1, 3))]
    return "\n".join(parts) + "\n"


def write_snapshot(state, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(snapshot_text(state))
    return path


class _Lines:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.i = 0

    def next(self, what: str) -> str:
        while self.i < len(self.lines):
            line = self.lines[self.i].strip()
            self.i += 1
            if line:
                return line
        raise FormatError(f"unexpected end of file while reading {what}")

    def numbers(self, count: int, what: str, dtype=float) -> np.ndarray:
        out: list[str] = []
        while len(out) < count:
            out.extend(self.next(what).split())
        if len(out) != count:
            raise FormatError(f"{what}: expected {count} values, found {len(out)}")
        try:
            return np.array([dtype(s) for s in out])
        except ValueError as exc:
            raise FormatError(f"{what}: {exc}") from exc


def _expect(line: str, prefix: str) -> list[str]:
    if not line.startswith(prefix):
        raise FormatError(f"expected {prefix!r}, found {line[:40]!r}")
    return line[len(prefix):].split()


def read_snapshot(path: str | Path) -> Snapshot:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    r = _Lines(text)
    if r.next("header") != VTK_HEADER:
        raise FormatError("not a VTK legacy file version 3.0")
    title = dict(tok.split("=", 1) for tok in r.next("title").split() if "=" in tok)
    try:
        family = Family(title["family"])
        t = float(title["t"])
        step = int(title["step"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"title line lacks family/t/step: {exc}") from exc
    if r.next("format") != "ASCII":
        raise FormatError("only ASCII files are supported")
    if r.next("dataset") != "DATASET POLYDATA":
        raise FormatError("expected DATASET POLYDATA")
    try:
        n_pts = int(_expect(r.next("points"), "POINTS")[0])
        pts = r.numbers(3 * n_pts, "POINTS").reshape(-1, 3)
        nt = int(_expect(r.next("polygons"), "POLYGONS")[0])
        poly = r.numbers(4 * nt, "POLYGONS", int).reshape(-1, 4)
        if np.any(poly[:, 0] != 3):
            raise FormatError("only triangles are supported")
        tri = poly[:, 1:]
        if int(_expect(r.next("point data"), "POINT_DATA")[0]) != n_pts:
            raise FormatError("POINT_DATA count differs from POINTS")
        fields = {}
        for _ in range(4):
            head = r.next("field header").split()
            if head[0] == "SCALARS":
                if r.next("lookup table") != "LOOKUP_TABLE default":
                    raise FormatError("expected LOOKUP_TABLE default")
                fields[head[1]] = r.numbers(n_pts, head[1])
            elif head[0] == "VECTORS":
                fields[head[1]] = r.numbers(3 * n_pts, head[1]).reshape(-1, 3)
            else:
                raise FormatError(f"unexpected section {head[0]!r}")
    except (IndexError, ValueError) as exc:
        raise FormatError(f"malformed snapshot: {exc}") from exc
    missing = {"phi", "mu", "p", "u"} - set(fields)
    if missing:
        raise FormatError(f"missing fields: {', '.join(sorted(missing))}")
    nv = int(tri.max()) + 1 if tri.size else 0
    return Snapshot(pts[:nv].copy(), tri, t, step, family, fields["phi"][:nv],
                    fields["mu"][:nv], fields["p"][:nv], fields["u"], pts)


# diagnostics CSV: first column carries the schema tag so a header row alone identifies the layout

def csv_header() -> list[str]:
    return [CSV_SCHEMA, *CSV_COLUMNS]


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class CsvWriter:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(csv_header())

    def write(self, row) -> None:
        rec = row.as_record()
        self._w.writerow(["", *(_cell(rec[c]) for c in CSV_COLUMNS)])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != csv_header():
        raise FormatError(f"{path}: header does not match schema {CSV_SCHEMA}")
    data = np.array([[float(x) for x in r[1:]] for r in rows[1:]]).reshape(-1, len(CSV_COLUMNS))
    return {c: data[:, i] for i, c in enumerate(CSV_COLUMNS)}


class RunOutputs:
    """Sink used by ``solver.run``: CSV rows, periodic snapshots, figures on close."""

    def __init__(self, directory: str | Path, csv_name: str = "diagnostics.csv",
                 snapshot_stride: int = 10):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.snapshot_stride = snapshot_stride
        self.csv_path = self.directory / csv_name
        self._csv = CsvWriter(self.csv_path)
        self.snapshots: list[Path] = []

    def write_row(self, row) -> None:
        self._csv.write(row)

    def write_snapshot(self, state) -> None:
        p = write_snapshot(state, self.directory / f"snapshot_{state.step_index:06d}.vtk")
        self.snapshots.append(p)

    def close(self, figures: bool = True) -> list[Path]:
        self._csv.close()
        if not figures:
            return []
        from .plotting import plot_diagnostics

        return plot_diagnostics(self.csv_path)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if not self._csv._fh.closed:
            self._csv.close()
