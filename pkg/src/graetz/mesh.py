"""
Triangular meshes of the duct cross-section.

A :class:`Mesh2D` carries the vertices, the triangles with their subdomain
label (0 is solid, ``k > 0`` is fluid tube ``k``) and the tagged boundary
edges.  Meshes are read from / written to a small line-oriented ASCII format
and can be generated for the square-with-circular-tubes geometries used by
the heat-exchanger test cases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "MeshError",
    "Mesh2D",
    "BoundaryCondition",
    "BoundarySpec",
    "PeriodicPairing",
    "dirichlet",
    "neumann",
    "robin",
    "periodic",
    "load_mesh",
    "save_mesh",
    "generate_square_with_tubes",
    "generate_structured_rectangle",
    "pair_periodic",
]

HEADER = "GRAETZ-MESH 1"


class MeshError(ValueError):
    """Raised for malformed mesh files and invalid meshes."""


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def _boundary_of(triangles: np.ndarray) -> set:
    edges = np.sort(np.concatenate([triangles[:, [0, 1]],
                                    triangles[:, [1, 2]],
                                    triangles[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-manifold edge shared by more than two triangles")
    return {tuple(e) for e in uniq[counts == 1]}


@dataclass(frozen=True)
class Mesh2D:
    """Validated, immutable triangulation of the cross-section."""

    vertices: np.ndarray
    triangles: np.ndarray
    labels: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: tuple
    periodic_pairs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "vertices", _readonly(self.vertices, float).reshape(-1, 2))
        object.__setattr__(self, "triangles", _readonly(self.triangles, np.int64).reshape(-1, 3))
        object.__setattr__(self, "labels", _readonly(self.labels, np.int64).reshape(-1))
        object.__setattr__(self, "boundary_edges", _readonly(self.boundary_edges, np.int64).reshape(-1, 2))
        object.__setattr__(self, "edge_tags", tuple(str(t) for t in self.edge_tags))
        object.__setattr__(self, "periodic_pairs",
                           tuple((int(m), int(s), str(g)) for m, s, g in self.periodic_pairs))
        self.validate()

    # -- validation -------------------------------------------------------
    def validate(self) -> None:
        nv = len(self.vertices)
        tri, edges = self.triangles, self.boundary_edges
        if len(tri) == 0:
            raise MeshError("mesh has no triangles")
        if len(self.labels) != len(tri):
            raise MeshError("one subdomain label per triangle is required")
        if np.any(self.labels < 0):
            raise MeshError("subdomain labels must be non-negative")
        if len(self.edge_tags) != len(edges):
            raise MeshError("one tag per boundary edge is required")
        for name, idx in (("triangle", tri), ("edge", edges)):
            if idx.size and (idx.min() < 0 or idx.max() >= nv):
                raise MeshError(f"{name} references a vertex index out of range")
        if np.any(tri[:, 0] == tri[:, 1]) or np.any(tri[:, 1] == tri[:, 2]) or np.any(tri[:, 0] == tri[:, 2]):
            raise MeshError("triangle with a repeated vertex")
        areas = signed_areas(self.vertices, tri)
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise MeshError(f"triangle {bad} has non-positive signed area {areas[bad]:.3e}")
        key = np.sort(tri, axis=1)
        if len(np.unique(key, axis=0)) != len(key):
            raise MeshError("duplicate triangle")
        topo = _boundary_of(tri)
        given = [tuple(sorted(e)) for e in edges.tolist()]
        if len(set(given)) != len(given):
            raise MeshError("boundary edge listed more than once")
        extra = set(given) - topo
        if extra:
            raise MeshError(f"dangling boundary edge {sorted(extra)[0]} is not on the mesh boundary")
        missing = topo - set(given)
        if missing:
            raise MeshError(f"boundary edge {sorted(missing)[0]} carries no tag")

    # -- derived quantities -------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    @property
    def tags(self) -> list:
        return sorted(set(self.edge_tags))

    @property
    def tube_ids(self) -> list:
        return sorted(int(k) for k in set(self.labels.tolist()) if k > 0)

    def tag_vertices(self, tag: str) -> np.ndarray:
        mask = np.array([t == tag for t in self.edge_tags], dtype=bool)
        return np.unique(self.boundary_edges[mask])

    def tag_edges(self, tag: str) -> np.ndarray:
        mask = np.array([t == tag for t in self.edge_tags], dtype=bool)
        return self.boundary_edges[mask]

    def subdomain_vertices(self, label: int) -> np.ndarray:
        return np.unique(self.triangles[self.labels == label])

    @property
    def diameter(self) -> float:
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        return float(np.hypot(*(hi - lo)))


# -- boundary conditions ----------------------------------------------------

@dataclass(frozen=True)
class BoundaryCondition:
    kind: str
    a: float = 0.0
    group: str | None = None

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann", "robin", "periodic"):
            raise ValueError(f"unknown boundary condition kind {self.kind!r}")
        if self.kind == "robin" and not self.a > 0:
            raise ValueError("Robin coefficient must be positive")
        if self.kind == "periodic" and self.group is None:
            raise ValueError("periodic condition needs a group id")


def dirichlet() -> BoundaryCondition:
    return BoundaryCondition("dirichlet")


def neumann() -> BoundaryCondition:
    return BoundaryCondition("neumann")


def robin(a: float) -> BoundaryCondition:
    return BoundaryCondition("robin", a=float(a))


def periodic(group) -> BoundaryCondition:
    return BoundaryCondition("periodic", group=str(group))


@dataclass(frozen=True)
class BoundarySpec:
    """Map from boundary tag to lateral condition."""

    conditions: Mapping[str, BoundaryCondition]

    def __post_init__(self):
        object.__setattr__(self, "conditions", dict(self.conditions))
        groups: dict[str, list] = {}
        for tag, bc in self.conditions.items():
            if bc.kind == "periodic":
                groups.setdefault(bc.group, []).append(tag)
        for g, tags in groups.items():
            if len(tags) != 2:
                raise ValueError(f"periodic group {g!r} must pair exactly two tags, got {tags}")

    @classmethod
    def uniform(cls, mesh: Mesh2D, bc: BoundaryCondition) -> "BoundarySpec":
        return cls({t: bc for t in mesh.tags})

    def __getitem__(self, tag):
        return self.conditions[tag]

    def kinds(self) -> set:
        return {bc.kind for bc in self.conditions.values()}

    @property
    def constants_controlled(self) -> bool:
        return bool(self.kinds() & {"dirichlet", "robin"})

    def periodic_groups(self) -> dict:
        groups: dict[str, list] = {}
        for tag in sorted(self.conditions):
            bc = self.conditions[tag]
            if bc.kind == "periodic":
                groups.setdefault(bc.group, []).append(tag)
        return groups

    def check(self, mesh: Mesh2D) -> None:
        missing = [t for t in mesh.tags if t not in self.conditions]
        if missing:
            raise ValueError(f"boundary tags without a condition: {missing}")


@dataclass(frozen=True)
class PeriodicPairing:
    """(master, slave) vertex pairs per periodic group, plus the group translation."""

    pairs: Mapping[str, np.ndarray]
    translations: Mapping[str, np.ndarray] = field(default_factory=dict)

    def all_pairs(self) -> np.ndarray:
        if not self.pairs:
            return np.zeros((0, 2), dtype=np.int64)
        return np.concatenate([self.pairs[g] for g in sorted(self.pairs)])


def pair_periodic(mesh: Mesh2D, spec: BoundarySpec, rtol: float = 1e-8) -> PeriodicPairing:
    """Match the vertices of the two sides of every periodic group.

    The side whose tag sorts first is the master.  Sides must be translates
    of each other; the match tolerance is ``rtol`` times the bounding-box
    diagonal.
    """
    tol = rtol * mesh.diameter
    pairs, shifts = {}, {}
    for g, (tag_m, tag_s) in spec.periodic_groups().items():
        vm, vs = mesh.tag_vertices(tag_m), mesh.tag_vertices(tag_s)
        if len(vm) != len(vs):
            raise MeshError(f"periodic group {g!r}: sides have {len(vm)} and {len(vs)} vertices")
        xm, xs = mesh.vertices[vm], mesh.vertices[vs]
        shift = xs.mean(axis=0) - xm.mean(axis=0)
        dist, idx = cKDTree(xs).query(xm + shift)
        if np.any(dist > tol):
            k = int(np.argmax(dist))
            raise MeshError(f"periodic group {g!r}: vertex {vm[k]} has no partner within {tol:.2e}")
        if len(np.unique(idx)) != len(idx):
            raise MeshError(f"periodic group {g!r}: pairing is not a bijection")
        pairs[g] = np.column_stack([vm, vs[idx]]).astype(np.int64)
        shifts[g] = shift
    return PeriodicPairing(pairs, shifts)


# -- file I/O ---------------------------------------------------------------

def load_mesh(path) -> Mesh2D:
    """Read a mesh in the ``GRAETZ-MESH 1`` format (1-based indices)."""
    lines = Path(path).read_text().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            pos += 1
            text = lines[pos - 1].split("#", 1)[0].strip()
            if text:
                return pos, text.split()
        return pos, None

    def fail(lineno, msg):
        raise MeshError(f"{path}:{lineno}: {msg}")

    lineno, tok = next_line()
    if tok is None or " ".join(tok) != HEADER:
        fail(lineno, f"expected header {HEADER!r}")

    sections = {}
    while True:
        lineno, tok = next_line()
        if tok is None:
            break
        if len(tok) != 2 or tok[0] not in ("VERTICES", "TRIANGLES", "EDGES", "PERIODIC"):
            fail(lineno, f"expected a section header, got {' '.join(tok)!r}")
        name = tok[0]
        if name in sections:
            fail(lineno, f"section {name} repeated")
        try:
            count = int(tok[1])
        except ValueError:
            fail(lineno, f"bad count {tok[1]!r}")
        width = {"VERTICES": 2, "TRIANGLES": 4, "EDGES": 3, "PERIODIC": 3}[name]
        rows = []
        for _ in range(count):
            lineno, tok = next_line()
            if tok is None:
                fail(lineno, f"section {name} ended early")
            if len(tok) != width:
                fail(lineno, f"{name} line needs {width} fields, got {len(tok)}")
            try:
                if name == "VERTICES":
                    rows.append((float(tok[0]), float(tok[1])))
                elif name == "TRIANGLES":
                    rows.append(tuple(int(t) for t in tok))
                else:
                    rows.append((int(tok[0]), int(tok[1]), tok[2]))
            except ValueError:
                fail(lineno, f"cannot parse {' '.join(tok)!r}")
        sections[name] = rows

    for req in ("VERTICES", "TRIANGLES", "EDGES"):
        if req not in sections:
            raise MeshError(f"{path}: missing section {req}")

    verts = np.array(sections["VERTICES"], dtype=float).reshape(-1, 2)
    tri_rows = np.array(sections["TRIANGLES"], dtype=np.int64).reshape(-1, 4)
    tris = tri_rows[:, :3] - 1
    labels = tri_rows[:, 3]
    if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
        raise MeshError(f"{path}: triangle vertex index out of range")
    # orientation is a file convention; store counter-clockwise
    areas = signed_areas(verts, tris)
    flip = areas < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    edges = np.array([(i - 1, j - 1) for i, j, _ in sections["EDGES"]], dtype=np.int64).reshape(-1, 2)
    tags = [t for _, _, t in sections["EDGES"]]
    per = [(m - 1, s - 1, g) for m, s, g in sections.get("PERIODIC", [])]
    return Mesh2D(verts, tris, labels, edges, tags, per)


def save_mesh(mesh: Mesh2D, path, pairing: PeriodicPairing | None = None) -> None:
    """Write ``mesh``; coordinates use 17 significant digits (round-trip exact)."""
    out = [HEADER, f"VERTICES {mesh.n_vertices}"]
    out += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    out.append(f"TRIANGLES {mesh.n_triangles}")
    out += [f"{i + 1} {j + 1} {k + 1} {lab}" for (i, j, k), lab in zip(mesh.triangles.tolist(), mesh.labels.tolist())]
    out.append(f"EDGES {len(mesh.boundary_edges)}")
    out += [f"{i + 1} {j + 1} {t}" for (i, j), t in zip(mesh.boundary_edges.tolist(), mesh.edge_tags)]
    rows = list(mesh.periodic_pairs)
    if pairing is not None:
        rows = [(int(m), int(s), g) for g in sorted(pairing.pairs) for m, s in pairing.pairs[g].tolist()]
    if rows:
        out.append(f"PERIODIC {len(rows)}")
        out += [f"{m + 1} {s + 1} {g}" for m, s, g in rows]
    Path(path).write_text("\n".join(out) + "\n")


# -- generators -------------------------------------------------------------

SIDE_TAGS = ("bottom", "right", "top", "left")


def _square_outline(half_width: float, n: int):
    """Counter-clockwise boundary points of the square, ``n`` segments per side."""
    t = np.linspace(-half_width, half_width, n + 1)
    a = half_width
    sides = [
        np.column_stack([t[:-1], np.full(n, -a)]),
        np.column_stack([np.full(n, a), t[:-1]]),
        np.column_stack([t[::-1][:-1], np.full(n, a)]),
        np.column_stack([np.full(n, -a), t[::-1][:-1]]),
    ]
    pts = np.concatenate(sides)
    m = len(pts)
    segs = np.column_stack([np.arange(m), (np.arange(m) + 1) % m])
    seg_tags = [SIDE_TAGS[k // n] for k in range(m)]
    return pts, segs, seg_tags


def generate_square_with_tubes(
    half_width: float,
    tubes: Sequence = (),
    resolution: float = 0.5,
    circle_segments: int = 64,
    min_angle: float = 30.0,
) -> Mesh2D:
    """Mesh the square ``[-half_width, half_width]^2`` with circular fluid tubes.

    Parameters
    ----------
    half_width : float
        Half side length of the square.
    tubes : sequence of ((cx, cy), radius)
        Tube ``k`` (1-based, in order) gets subdomain label ``k``.  Each circle
        is replaced by an inscribed polygon with ``circle_segments`` sides.
    resolution : float
        Target edge length.  The square sides are split uniformly, so opposite
        sides always carry matching vertices (periodic pairing works).
    """
    import triangle

    hw = float(half_width)
    if hw <= 0:
        raise ValueError("half_width must be positive")
    tubes = [((float(c[0]), float(c[1])), float(r)) for c, r in tubes]
    for k, ((cx, cy), r) in enumerate(tubes, start=1):
        if r <= 0:
            raise ValueError(f"tube {k}: radius must be positive")
        if abs(cx) + r >= hw or abs(cy) + r >= hw:
            raise ValueError(f"tube {k} does not lie strictly inside the square")
        if resolution > r:
            raise ValueError(f"resolution {resolution} too coarse to resolve tube {k} of radius {r}")
    for i in range(len(tubes)):
        for j in range(i + 1, len(tubes)):
            (ci, ri), (cj, rj) = tubes[i], tubes[j]
            if math.hypot(ci[0] - cj[0], ci[1] - cj[1]) <= ri + rj:
                raise ValueError(f"tubes {i + 1} and {j + 1} overlap")
    if circle_segments < 8:
        raise ValueError("circle_segments must be at least 8")

    n_side = max(2, int(math.ceil(2 * hw / resolution)))
    pts, segs, seg_tags = _square_outline(hw, n_side)
    all_pts, all_segs = [pts], [segs]
    offset = len(pts)
    theta = 2 * np.pi * np.arange(circle_segments) / circle_segments
    regions = [[-hw + 1e-3 * resolution, -hw + 1e-3 * resolution, 0, 0]]
    for k, ((cx, cy), r) in enumerate(tubes, start=1):
        circ = np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta)])
        idx = offset + np.arange(circle_segments)
        all_pts.append(circ)
        all_segs.append(np.column_stack([idx, np.roll(idx, -1)]))
        regions.append([cx, cy, k, 0])
        offset += circle_segments

    geom = {
        "vertices": np.concatenate(all_pts),
        "segments": np.concatenate(all_segs),
        "regions": np.array(regions, dtype=float),
    }
    max_area = resolution ** 2 * math.sqrt(3) / 4
    out = triangle.triangulate(geom, f"pq{min_angle:g}a{max_area:.10g}AYYQ")
    verts = out["vertices"]
    tris = out["triangles"].astype(np.int64)
    labels = np.rint(out["triangle_attributes"][:, 0]).astype(np.int64)
    areas = signed_areas(verts, tris)
    tris[areas < 0] = tris[areas < 0][:, [0, 2, 1]]

    # outer boundary edges keep the side tags of the input segments
    # ('YY' forbids Steiner points on segments, so they survive unsplit)
    n_out = len(pts)
    lookup = {tuple(sorted(s)): t for s, t in zip(segs.tolist(), seg_tags)}
    topo = sorted(_boundary_of(tris))
    tags = []
    for e in topo:
        if max(e) >= n_out or e not in lookup:
            raise MeshError("generated mesh boundary does not match the square outline")
        tags.append(lookup[e])
    return Mesh2D(verts, tris, labels, np.array(topo, dtype=np.int64), tags)


def generate_structured_rectangle(
    nx: int,
    ny: int,
    x0: float = 0.0,
    x1: float = 1.0,
    y0: float = 0.0,
    y1: float = 1.0,
    label: int = 0,
    labeler=None,
) -> Mesh2D:
    """Structured ``nx`` by ``ny`` rectangle mesh, each cell split along its diagonal.

    ``labeler(x, y)`` may return a subdomain label from a triangle centroid.
    Side tags are ``bottom``, ``right``, ``top`` and ``left``.
    """
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris += [(a, b, c), (a, c, d)]
    tris = np.array(tris, dtype=np.int64)
    if labeler is None:
        labels = np.full(len(tris), label, dtype=np.int64)
    else:
        cen = verts[tris].mean(axis=1)
        labels = np.array([labeler(x, y) for x, y in cen], dtype=np.int64)
    edges, tags = [], []
    for i in range(nx):
        edges.append((vid(i, 0), vid(i + 1, 0)))
        tags.append("bottom")
        edges.append((vid(i, ny), vid(i + 1, ny)))
        tags.append("top")
    for j in range(ny):
        edges.append((vid(0, j), vid(0, j + 1)))
        tags.append("left")
        edges.append((vid(nx, j), vid(nx, j + 1)))
        tags.append("right")
    return Mesh2D(verts, tris, labels, np.array(edges), tags)


def polygon_area_defect(radius: float, circle_segments: int) -> float:
    """Area of a circle minus that of its inscribed regular polygon."""
    n = circle_segments
    return math.pi * radius ** 2 - 0.5 * n * radius ** 2 * math.sin(2 * math.pi / n)
