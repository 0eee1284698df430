"""Triangular meshes and piecewise-linear interpolation onto scattered sites.

A mesh envelops the observation locations; a latent field defined on the
mesh vertices is carried to arbitrary sites inside the mesh by a sparse
row-stochastic projector whose rows hold barycentric weights.
"""

import numpy as np
from scipy import sparse
from scipy.spatial import Delaunay

__all__ = [
    "TriangleMesh",
    "build_mesh",
    "adjacency",
    "locate",
    "build_projector",
    "save_mesh",
    "load_mesh",
]


def _signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    return 0.5 * (
        (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
        - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    )


class TriangleMesh:
    """Triangulation of a planar region enveloping a set of locations.

    Parameters
    ----------
    vertices : ndarray, shape (m, 2)
        Vertex coordinates.
    triangles : ndarray, shape (t, 3)
        Vertex index triples; reoriented counterclockwise on construction.
    boundary_padding : float
        Fraction of the location bounding-box span added per side when the
        mesh was built (0 for meshes loaded from disk).

    Vertices and triangles are frozen after construction so a mesh can be
    shared across concurrent fitters.
    """

    def __init__(self, vertices, triangles, boundary_padding=0.0):
        vertices = np.array(vertices, dtype=float, order="C")
        triangles = np.array(triangles, dtype=np.int64, order="C")
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError(f"expected vertices of shape (m, 2), got {vertices.shape}")
        if not np.all(np.isfinite(vertices)):
            raise ValueError("mesh vertices must be finite")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError(f"expected triangles of shape (t, 3), got {triangles.shape}")
        if len(triangles) == 0:
            raise ValueError("mesh has no triangles")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise ValueError("triangle indices out of range")
        areas = _signed_areas(vertices, triangles)
        flip = areas < 0
        triangles[flip] = triangles[flip][:, [0, 2, 1]]
        if np.any(np.abs(areas) < 1e-300):
            raise ValueError("mesh contains a zero-area triangle")
        vertices.setflags(write=False)
        triangles.setflags(write=False)
        self.vertices = vertices
        self.triangles = triangles
        self.boundary_padding = float(boundary_padding)
        self._locator = None

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def bounding_box(self):
        """Return (xmin, xmax, ymin, ymax) of the mesh vertices."""
        v = self.vertices
        return v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max()

    def _get_locator(self):
        if self._locator is None:
            self._locator = _TriangleLocator(self)
        return self._locator


class _TriangleLocator:
    """Uniform-grid bucket index for point-in-triangle queries.

    Candidate triangles are tested in ascending index order so that
    points on shared edges resolve to the lowest triangle index.
    """

    def __init__(self, mesh, tol=1e-9):
        self.mesh = mesh
        self.tol = tol
        verts = mesh.vertices
        tris = mesh.triangles
        self._v0 = verts[tris[:, 0]]
        e1 = verts[tris[:, 1]] - self._v0
        e2 = verts[tris[:, 2]] - self._v0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        # rows of inv([[e1x, e2x], [e1y, e2y]]) for the 2x2 barycentric solve
        self._inv = np.empty((len(tris), 2, 2))
        self._inv[:, 0, 0] = e2[:, 1] / det
        self._inv[:, 0, 1] = -e2[:, 0] / det
        self._inv[:, 1, 0] = -e1[:, 1] / det
        self._inv[:, 1, 1] = e1[:, 0] / det

        xmin, xmax, ymin, ymax = mesh.bounding_box()
        span = max(xmax - xmin, ymax - ymin, 1e-300)
        self._origin = np.array([xmin, ymin])
        ncell = max(1, int(np.ceil(np.sqrt(len(tris)))))
        self._step = span / ncell
        self._ncell = ncell
        tri_pts = verts[tris]
        lo = np.clip(((tri_pts.min(axis=1) - self._origin) / self._step).astype(int), 0, ncell - 1)
        hi = np.clip(((tri_pts.max(axis=1) - self._origin) / self._step).astype(int), 0, ncell - 1)
        buckets = [[] for _ in range(ncell * ncell)]
        for t in range(len(tris)):
            for cx in range(lo[t, 0], hi[t, 0] + 1):
                for cy in range(lo[t, 1], hi[t, 1] + 1):
                    buckets[cx * ncell + cy].append(t)
        self._buckets = [np.asarray(b, dtype=np.int64) for b in buckets]
        self._span = span

    def locate(self, p):
        p = np.asarray(p, dtype=float)
        edge = self.tol * self._span
        fx = (p[0] - self._origin[0]) / self._step
        fy = (p[1] - self._origin[1]) / self._step
        if -edge <= fx <= self._ncell + edge and -edge <= fy <= self._ncell + edge:
            cx = min(max(int(fx), 0), self._ncell - 1)
            cy = min(max(int(fy), 0), self._ncell - 1)
            candidates = self._buckets[cx * self._ncell + cy]
        else:
            candidates = ()
        tol = self.tol
        for t in candidates:
            d = p - self._v0[t]
            w1 = self._inv[t, 0, 0] * d[0] + self._inv[t, 0, 1] * d[1]
            w2 = self._inv[t, 1, 0] * d[0] + self._inv[t, 1, 1] * d[1]
            w0 = 1.0 - w1 - w2
            if w0 >= -tol and w1 >= -tol and w2 >= -tol:
                w = np.array([w0, w1, w2])
                np.clip(w, 0.0, None, out=w)
                w /= w.sum()
                return int(t), w
        raise ValueError("location outside mesh")


def _check_noncollinear(locations):
    centered = locations - locations.mean(axis=0)
    # rank < 2 means all points on one line (or a single point)
    if len(locations) < 3 or np.linalg.matrix_rank(centered, tol=1e-12) < 2:
        raise ValueError("degenerate point set")


def _padded_box(locations, padding):
    xmin, ymin = locations.min(axis=0)
    xmax, ymax = locations.max(axis=0)
    dx = (xmax - xmin) * padding
    dy = (ymax - ymin) * padding
    return xmin - dx, xmax + dx, ymin - dy, ymax + dy


def _lattice_shape(target, width, height):
    """Pick (nx, ny) with nx*ny closest to target, matched to the box aspect."""
    aspect = width / height if height > 0 else 1.0
    best = None
    nx0 = max(2, int(round(np.sqrt(target * aspect))))
    for nx in range(max(2, nx0 - 3), nx0 + 4):
        ny = max(2, int(round(target / nx)))
        for dy in (0, -1, 1):
            nyc = max(2, ny + dy)
            err = abs(nx * nyc - target)
            key = (err, abs(np.log(nx / nyc / max(aspect, 1e-12))))
            if best is None or key < best[0]:
                best = (key, nx, nyc)
    return best[1], best[2]


def build_mesh(locations, mode="regular-lattice", target_vertices=None, padding=0.1):
    """Build a triangular mesh enveloping ``locations``.

    Parameters
    ----------
    locations : ndarray, shape (n, 2)
        Observation sites; at least 3 non-collinear points.
    mode : {'regular-lattice', 'delaunay'}
        'regular-lattice' splits a uniform grid over the padded bounding box
        into right triangles (deterministic, ``target_vertices`` controls the
        grid size).  'delaunay' triangulates the locations plus a padded
        boundary ring and satisfies the empty-circumcircle property.
    target_vertices : int
        Requested vertex count (regular-lattice mode; must be >= 4).
    padding : float
        Bounding-box extension per side, as a fraction of the box span.

    Returns
    -------
    TriangleMesh
    """
    locations = np.asarray(locations, dtype=float)
    if locations.ndim != 2 or locations.shape[1] != 2:
        raise ValueError(f"expected locations of shape (n, 2), got {locations.shape}")
    if not np.all(np.isfinite(locations)):
        raise ValueError("locations must be finite")
    if padding < 0:
        raise ValueError("padding must be >= 0")
    _check_noncollinear(locations)

    if mode == "regular-lattice":
        if target_vertices is None or target_vertices < 4:
            raise ValueError("target_vertices must be >= 4")
        xmin, xmax, ymin, ymax = _padded_box(locations, padding)
        nx, ny = _lattice_shape(target_vertices, xmax - xmin, ymax - ymin)
        xs = np.linspace(xmin, xmax, nx)
        ys = np.linspace(ymin, ymax, ny)
        xx, yy = np.meshgrid(xs, ys, indexing="ij")
        vertices = np.column_stack([xx.ravel(), yy.ravel()])
        tris = []
        for i in range(nx - 1):
            for j in range(ny - 1):
                v00 = i * ny + j
                v01 = v00 + 1
                v10 = v00 + ny
                v11 = v10 + 1
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
        return TriangleMesh(vertices, np.asarray(tris), boundary_padding=padding)

    if mode == "delaunay":
        if target_vertices is not None and target_vertices < 4:
            raise ValueError("target_vertices must be >= 4")
        xmin, xmax, ymin, ymax = _padded_box(locations, padding)
        ring = _boundary_ring(xmin, xmax, ymin, ymax, len(locations))
        points = np.vstack([locations, ring])
        points = np.unique(points, axis=0)
        tri = Delaunay(points)
        return TriangleMesh(tri.points, tri.simplices, boundary_padding=padding)

    raise ValueError(f"unknown mesh mode {mode!r}")


def _boundary_ring(xmin, xmax, ymin, ymax, n_locations):
    """Points along the padded box edge, roughly sqrt(n)/2 per side."""
    per_side = max(2, int(round(np.sqrt(n_locations) / 2)))
    tx = np.linspace(xmin, xmax, per_side + 2)
    ty = np.linspace(ymin, ymax, per_side + 2)
    bottom = np.column_stack([tx, np.full_like(tx, ymin)])
    top = np.column_stack([tx, np.full_like(tx, ymax)])
    left = np.column_stack([np.full_like(ty[1:-1], xmin), ty[1:-1]])
    right = np.column_stack([np.full_like(ty[1:-1], xmax), ty[1:-1]])
    return np.vstack([bottom, top, left, right])


def adjacency(mesh):
    """First-order adjacency of the mesh graph as a sparse 0/1 matrix.

    Vertices are adjacent iff they share a triangle edge.  The result is
    symmetric with a zero diagonal; the number of stored nonzeros is twice
    the number of distinct mesh edges.
    """
    tris = mesh.triangles
    m = mesh.n_vertices
    i = np.concatenate([tris[:, 0], tris[:, 1], tris[:, 2]])
    j = np.concatenate([tris[:, 1], tris[:, 2], tris[:, 0]])
    edges = np.unique(np.sort(np.column_stack([i, j]), axis=1), axis=0)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    data = np.ones(len(rows))
    return sparse.csr_matrix((data, (rows, cols)), shape=(m, m))


def locate(mesh, p):
    """Find the triangle containing point ``p`` and its barycentric weights.

    Returns ``(triangle_index, weights)`` with nonnegative weights summing
    to one.  Points on shared edges resolve to the lowest triangle index.
    Raises ``ValueError("location outside mesh")`` if no triangle contains
    ``p``.
    """
    return mesh._get_locator().locate(p)


def build_projector(mesh, sites):
    """Sparse (n x m) interpolation matrix from mesh vertices to ``sites``.

    Row i carries the barycentric weights of ``sites[i]`` within its
    containing triangle, scattered to that triangle's vertex columns; each
    row sums to one.
    """
    sites = np.asarray(sites, dtype=float)
    if sites.ndim != 2 or sites.shape[1] != 2:
        raise ValueError(f"expected sites of shape (n, 2), got {sites.shape}")
    loc = mesh._get_locator()
    n = len(sites)
    rows = np.repeat(np.arange(n), 3)
    cols = np.empty(3 * n, dtype=np.int64)
    vals = np.empty(3 * n)
    for k in range(n):
        t, w = loc.locate(sites[k])
        cols[3 * k : 3 * k + 3] = mesh.triangles[t]
        vals[3 * k : 3 * k + 3] = w
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(n, mesh.n_vertices))
    A.sum_duplicates()
    return A


def save_mesh(mesh, path):
    """Write a mesh as plain text: ``m t`` header, vertex lines, triangle lines."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")


def load_mesh(path):
    """Read a mesh written by :func:`save_mesh`."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError("malformed mesh header")
        m, t = int(header[0]), int(header[1])
        vertices = np.loadtxt(fh, max_rows=m, ndmin=2)
        triangles = np.loadtxt(fh, dtype=np.int64, max_rows=t, ndmin=2)
    if vertices.shape != (m, 2) or triangles.shape != (t, 3):
        raise ValueError("mesh file does not match its header")
    return TriangleMesh(vertices, triangles)
