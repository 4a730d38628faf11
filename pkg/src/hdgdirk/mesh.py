"""Conforming triangulations of rectangles and their edge skeleton."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# local face f of a triangle joins local vertices FACE_VERTICES[f]
FACE_VERTICES = np.array([[1, 2], [2, 0], [0, 1]])


class TopologyError(ValueError):
    """Raised for meshes that are not conforming triangulations."""


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must have shape (nv, 2)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must have shape (nt, 3)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle vertex index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "bbox", tuple(float(b) for b in self.bbox))
        if np.any(self.signed_areas <= 0.0):
            raise TopologyError("triangles must be counterclockwise with positive area")

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def bbox_area(self) -> float:
        x0, x1, y0, y1 = self.bbox
        return (x1 - x0) * (y1 - y0)

    @property
    def h(self) -> float:
        """Mesh size measure proportional to 1/sqrt(N)."""
        return float(np.sqrt(self.bbox_area / self.n_elements))


def generate_structured(nx: int, ny: int, bbox=(-0.5, 0.5, -0.5, 0.5)) -> Mesh:
    """Split an ``nx`` x ``ny`` grid of cells along the SW-NE diagonal."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"nx and ny must be positive integers, got {nx}, {ny}")
    nx, ny = int(nx), int(ny)
    x0, x1, y0, y1 = bbox
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate bounding box {bbox}")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    v00 = (j * (nx + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(vertices, triangles, (x0, x1, y0, y1))


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four similar children through edge midpoints."""
    tri = mesh.triangles
    nv = mesh.n_vertices
    pairs = tri[:, FACE_VERTICES].reshape(-1, 2)
    keys = np.sort(pairs, axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    mids = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    m = (nv + inverse).reshape(-1, 3)  # m[:, f] is the midpoint opposite vertex f
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    mbc, mca, mab = m[:, 0], m[:, 1], m[:, 2]
    children = np.stack(
        [
            np.column_stack([a, mab, mca]),
            np.column_stack([mab, b, mbc]),
            np.column_stack([mca, mbc, c]),
            np.column_stack([mab, mbc, mca]),
        ],
        axis=1,
    ).reshape(-1, 3)
    return Mesh(vertices, children, mesh.bbox)


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Edge set of a mesh.

    ``elements[e] = (left, right)`` with ``right == -1`` on the boundary; the
    left element is the one with the lower index and ``normals[e]`` points out
    of it. Edge ``e`` runs from ``edges[e, 0]`` to ``edges[e, 1]`` in the
    counterclockwise sense of the left element.
    """

    edges: np.ndarray
    elements: np.ndarray
    local_faces: np.ndarray
    normals: np.ndarray
    lengths: np.ndarray
    element_edges: np.ndarray
    element_flip: np.ndarray
    element_sign: np.ndarray = field(repr=False)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def interior(self) -> np.ndarray:
        return self.elements[:, 1] >= 0

    @property
    def boundary(self) -> np.ndarray:
        return self.elements[:, 1] < 0


def build_skeleton(mesh: Mesh) -> Skeleton:
    tri = mesh.triangles
    ne = mesh.n_elements
    pairs = tri[:, FACE_VERTICES]  # (E, 3, 2)
    keys = np.sort(pairs.reshape(-1, 2), axis=1)
    uniq, first, inverse, counts = np.unique(
        keys, axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    inverse = inverse.reshape(-1)
    if np.any(counts > 2):
        raise TopologyError("an edge is shared by more than two triangles")

    # np.unique returns the first occurrence, i.e. the lowest element index
    order = np.argsort(inverse, kind="stable")
    n_edges = len(uniq)
    elements = np.full((n_edges, 2), -1, dtype=np.int64)
    local_faces = np.full((n_edges, 2), -1, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    left_slot = order[starts]
    elements[:, 0] = left_slot // 3
    local_faces[:, 0] = left_slot % 3
    two = counts == 2
    right_slot = order[starts[two] + 1]
    elements[two, 1] = right_slot // 3
    local_faces[two, 1] = right_slot % 3

    edges = pairs[elements[:, 0], local_faces[:, 0]]
    if two.any():
        right_pairs = pairs[elements[two, 1], local_faces[two, 1]]
        if not np.array_equal(right_pairs[:, ::-1], edges[two]):
            raise TopologyError("inconsistent orientation across a shared edge")

    d = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    lengths = np.hypot(d[:, 0], d[:, 1])
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]

    element_edges = inverse.reshape(ne, 3)
    element_flip = np.zeros((ne, 3), dtype=bool)
    element_flip[elements[two, 1], local_faces[two, 1]] = True
    element_sign = np.where(element_flip, -1.0, 1.0)

    _check_boundary(mesh, edges[~two])

    for arr in (edges, elements, local_faces, normals, lengths, element_edges,
                element_flip, element_sign):
        arr.setflags(write=False)
    return Skeleton(edges, elements, local_faces, normals, lengths,
                    element_edges, element_flip, element_sign)


def _check_boundary(mesh: Mesh, bedges: np.ndarray) -> None:
    """A vertex lying strictly inside a boundary edge marks a hanging node."""
    if len(bedges) == 0:
        raise TopologyError("mesh has no boundary")
    a = mesh.vertices[bedges[:, 0]]
    d = mesh.vertices[bedges[:, 1]] - a
    scale = np.hypot(d[:, 0], d[:, 1])
    used = np.unique(mesh.triangles)
    for start in range(0, len(bedges), 256):
        sl = slice(start, start + 256)
        rel = mesh.vertices[used][None, :, :] - a[sl, None, :]
        cross = d[sl, None, 0] * rel[..., 1] - d[sl, None, 1] * rel[..., 0]
        s = (rel * d[sl, None, :]).sum(-1) / scale[sl, None] ** 2
        inside = (np.abs(cross) < 1e-10 * scale[sl, None] ** 2) & (s > 1e-10) & (s < 1 - 1e-10)
        if inside.any():
            raise TopologyError("hanging node on an unmatched edge")


def write_mesh(mesh: Mesh, path) -> None:
    lines = [f"{mesh.n_vertices} {mesh.n_elements}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    """Read the plain-text format: ``nv nt``, nv lines ``x y``, nt lines ``i0 i1 i2``."""
    tokens = Path(path).read_text().split("\n")
    rows = [ln.split() for ln in tokens if ln.strip()]
    try:
        nv, nt = int(rows[0][0]), int(rows[0][1])
        vertices = np.array([[float(a) for a in r[:2]] for r in rows[1:1 + nv]])
        triangles = np.array([[int(a) for a in r[:3]] for r in rows[1 + nv:1 + nv + nt]],
                             dtype=np.int64)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed mesh file") from exc
    if len(vertices) != nv or len(triangles) != nt:
        raise ValueError(f"{path}: expected {nv} vertices and {nt} triangles")
    lo = vertices.min(axis=0)
    hi = vertices.max(axis=0)
    return Mesh(vertices, triangles, (lo[0], hi[0], lo[1], hi[1]))
