"""
Triangle surface meshes and per-element boundary conditions.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Malformed, degenerate or inconsistently oriented mesh."""


class BoundaryConditionError(ValueError):
    pass


DEGENERATE_RTOL = 1e-14


@dataclass
class TriMesh:
    """Flat-triangle surface mesh with piecewise-constant elements.

    Parameters
    ----------
    vertices : (NV, 3) float array
    triangles : (NT, 3) int array of 0-based vertex indices, counter-clockwise
        when seen from outside
    validate : bool
        Check nondegeneracy, closedness and outward orientation on creation.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) == 0:
            raise MeshError("mesh has no triangles")
        bad = (self.triangles < 0) | (self.triangles >= len(self.vertices))
        if bad.any():
            t = int(np.nonzero(bad.any(axis=1))[0][0])
            raise MeshError(f"triangle {t} references a vertex outside 0..{len(self.vertices) - 1}")
        tri = self.vertices[self.triangles]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        twice = np.linalg.norm(cross, axis=1)
        self.areas = 0.5 * twice
        self.centroids = tri.mean(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.normals = cross / twice[:, None]
        e = np.stack([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 1], tri[:, 0] - tri[:, 2]], 1)
        self.diameters = np.sqrt(np.einsum("pek,pek->pe", e, e).max(axis=1))
        if self.validate:
            self.check_elements()
            self.check_closed()
            self.check_orientation()

    # -- derived --------------------------------------------------------------
    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def scale(self) -> float:
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @property
    def element_vertices(self) -> np.ndarray:
        """(NT, 3, 3) vertex coordinates per element."""
        return self.vertices[self.triangles]

    def signed_volume(self) -> float:
        v = self.element_vertices
        return float(np.einsum("pk,pk->p", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    def mesh_size(self) -> float:
        return float(self.diameters.max())

    # -- validation -------------------------------------------------------------
    def check_elements(self) -> None:
        tiny = self.areas <= DEGENERATE_RTOL * self.scale**2
        if tiny.any():
            idx = np.nonzero(tiny)[0]
            raise MeshError(f"degenerate (zero-area) triangle(s) {idx[:10].tolist()}")

    def is_closed(self) -> bool:
        return self._boundary_edges()[0] == 0

    def _boundary_edges(self):
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        undirected = np.sort(directed, axis=1)
        _, counts = np.unique(undirected, axis=0, return_counts=True)
        # consistently oriented 2-manifold: every directed edge appears once
        _, dcounts = np.unique(directed, axis=0, return_counts=True)
        return int((counts != 2).sum()), int((dcounts != 1).sum())

    def check_closed(self) -> None:
        open_edges, clashes = self._boundary_edges()
        if open_edges:
            raise MeshError(f"mesh is not closed: {open_edges} edges are not shared by "
                            "exactly two triangles")
        if clashes:
            raise MeshError(f"inconsistent triangle orientation: {clashes} directed edges "
                            "appear more than once")

    def check_orientation(self) -> None:
        if self.is_closed() and not self.signed_volume() > 0:
            raise MeshError("normals point inward (signed volume <= 0); reverse the "
                            "vertex order of every triangle")

    def flipped(self) -> "TriMesh":
        return TriMesh(self.vertices, self.triangles[:, ::-1], self.validate)


# ---------------------------------------------------------------------------
# file formats

def _numbers(line: str, count: int, kind, path, lineno):
    parts = line.split()
    if len(parts) < count:
        raise MeshError(f"{path}:{lineno}: expected {count} values, got {len(parts)}")
    try:
        return [kind(v) for v in parts[:count]]
    except ValueError:
        raise MeshError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from None


def _content_lines(path):
    with open(path) as fh:
        for k, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield k, line


def _read_off(path):
    lines = _content_lines(path)
    try:
        k, head = next(lines)
        if head.upper().startswith("OFF"):
            rest = head[3:].strip()
            if not rest:
                k, rest = next(lines)
            head = rest
        nv, nf = _numbers(head, 2, int, path, k)
        verts = []
        for _ in range(nv):
            k, line = next(lines)
            verts.append(_numbers(line, 3, float, path, k))
        tris = []
        for _ in range(nf):
            k, line = next(lines)
            n, *idx = line.split()
            if n != "3":
                raise MeshError(f"{path}:{k}: only triangular faces are supported")
            tris.append(_numbers(" ".join(idx), 3, int, path, k))
    except StopIteration:
        raise MeshError(f"{path}: unexpected end of file") from None
    return np.array(verts), np.array(tris)


def _read_txt(path):
    lines = _content_lines(path)
    try:
        k, head = next(lines)
        nv, nt = _numbers(head, 2, int, path, k)
        verts = []
        for _ in range(nv):
            k, line = next(lines)
            verts.append(_numbers(line, 3, float, path, k))
        tris = []
        for _ in range(nt):
            k, line = next(lines)
            tris.append(_numbers(line, 3, int, path, k))
    except StopIteration:
        raise MeshError(f"{path}: unexpected end of file") from None
    return np.array(verts), np.array(tris)


def load_mesh(path, format: str | None = None, validate: bool = True) -> TriMesh:
    """Read an OFF file or the plain ``NV NT`` text format.

    The format is taken from the suffix (``.off`` vs anything else) unless
    given explicitly.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    fmt = (format or ("off" if path.suffix.lower() == ".off" else "txt")).lower()
    if fmt == "off":
        verts, tris = _read_off(path)
    elif fmt == "txt":
        verts, tris = _read_txt(path)
    else:
        raise ValueError(f"unknown mesh format {format!r}")
    return TriMesh(verts, tris, validate=validate)


def save_mesh(mesh: TriMesh, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = (format or ("off" if path.suffix.lower() == ".off" else "txt")).lower()
    with open(path, "w") as fh:
        if fmt == "off":
            fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_elements}" + (" 0\n" if fmt == "off" else "\n"))
        for v in mesh.vertices:
            fh.write(" ".join(repr(float(c)) for c in v) + "\n")
        prefix = "3 " if fmt == "off" else ""
        for t in mesh.triangles:
            fh.write(f"{prefix}{t[0]} {t[1]} {t[2]}\n")


# ---------------------------------------------------------------------------
# boundary conditions

@dataclass
class BoundaryCondition:
    """Per-element condition: ``dirichlet[j]`` selects a given potential
    (else a given normal flux), ``values[j]`` is the prescribed value."""

    dirichlet: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.dirichlet = np.asarray(self.dirichlet, dtype=bool).ravel()
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.dirichlet.shape != self.values.shape:
            raise BoundaryConditionError("kind and value arrays differ in length")

    def __len__(self):
        return len(self.values)

    @property
    def all_dirichlet(self) -> bool:
        return bool(self.dirichlet.all())

    @classmethod
    def dirichlet_const(cls, n: int, value: float) -> "BoundaryCondition":
        return cls(np.ones(n, bool), np.full(n, float(value)))

    @classmethod
    def from_traces(cls, dirichlet, u, q) -> "BoundaryCondition":
        """Pick ``u`` on Dirichlet elements and ``q`` elsewhere."""
        dirichlet = np.asarray(dirichlet, bool)
        return cls(dirichlet, np.where(dirichlet, u, q))


def load_bc_csv(path, n_elements: int) -> BoundaryCondition:
    """Read ``element_id,kind,value`` rows (kind ``d`` or ``n``).

    A header row is allowed. Every element must appear exactly once.
    """
    kinds = np.zeros(n_elements, dtype=np.int8)  # 0 unset, 1 dirichlet, 2 neumann
    values = np.zeros(n_elements)
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower() in ("element_id", "id", "element"):
                continue
            if len(row) != 3:
                raise BoundaryConditionError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                eid = int(row[0])
                val = float(row[2])
            except ValueError:
                raise BoundaryConditionError(f"{path}:{lineno}: cannot parse {row!r}") from None
            kind = row[1].strip().lower()
            if kind not in ("d", "n"):
                raise BoundaryConditionError(
                    f"{path}:{lineno}: unknown kind {row[1].strip()!r} (expected 'd' or 'n')")
            if not 0 <= eid < n_elements:
                raise BoundaryConditionError(f"{path}:{lineno}: element id {eid} out of range")
            if kinds[eid]:
                raise BoundaryConditionError(f"{path}:{lineno}: element {eid} given twice")
            kinds[eid] = 1 if kind == "d" else 2
            values[eid] = val
    missing = np.nonzero(kinds == 0)[0]
    if len(missing):
        raise BoundaryConditionError(
            f"{path}: no condition for {len(missing)} element(s), first {missing[:5].tolist()}")
    return BoundaryCondition(kinds == 1, values)


def save_bc_csv(bc: BoundaryCondition, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element_id", "kind", "value"])
        for j, (d, v) in enumerate(zip(bc.dirichlet, bc.values)):
            w.writerow([j, "d" if d else "n", repr(float(v))])
