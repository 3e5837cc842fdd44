"""Structured triangulations of the unit square and P1 finite element matrices.

The square (0,1)^2 is subdivided into n x n cells of side h = 1/n and every
cell is cut along its bottom-left to top-right diagonal, giving 2*n^2
right triangles of area h^2/2.  Nodes are numbered lexicographically by
(x2, x1), so node (i, j) at coordinates (i*h, j*h) has index j*(n+1) + i.

Homogeneous Dirichlet conditions are imposed by eliminating boundary rows
and columns, so the assembled matrices act on the (n-1)^2 interior nodes
only.  Interior nodes keep the same lexicographic ordering.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass
class StructuredTriMesh:
    """Friedrichs-Keller triangulation of the unit square.

    Attributes
    ----------
    n : int
        Number of cells per side; the mesh width is h = 1/n.
    h : float
        Mesh width.
    nodes : ndarray, shape ((n+1)**2, 2)
        Coordinates of all grid nodes, lexicographic in (x2, x1).
    triangles : ndarray, shape (2*n**2, 3)
        Node indices of each triangle, counterclockwise.
    interior : ndarray, shape ((n-1)**2,)
        Full-grid indices of the interior nodes, in lexicographic order.
    boundary : ndarray
        Full-grid indices of the boundary nodes.
    full_to_interior : ndarray, shape ((n+1)**2,)
        Interior index of each grid node, -1 on the boundary.
    """

    n: int
    h: float
    nodes: np.ndarray
    triangles: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    full_to_interior: np.ndarray = field(repr=False)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_interior(self):
        return self.interior.size

    def interior_coords(self):
        """Coordinates of the interior nodes, shape ((n-1)**2, 2)."""
        return self.nodes[self.interior]


def friedrichs_keller(n):
    """Build the n x n Friedrichs-Keller triangulation of (0,1)^2.

    Parameters
    ----------
    n : int
        Cells per side, at least 2 so that interior nodes exist.

    Returns
    -------
    StructuredTriMesh
    """
    if n < 2:
        raise ValueError(f"need n >= 2, got n={n}")
    h = 1.0 / n
    side = np.arange(n + 1) * h
    x1, x2 = np.meshgrid(side, side, indexing="xy")
    nodes = np.column_stack([x1.ravel(), x2.ravel()])

    # Cell (i, j) has corners a=(i,j), b=(i+1,j), c=(i+1,j+1), d=(i,j+1);
    # the diagonal runs a -> c, giving triangles (a,b,c) and (a,c,d).
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    a = (jj * (n + 1) + ii).ravel()
    b = a + 1
    c = a + n + 2
    d = a + n + 1
    lower = np.column_stack([a, b, c])
    upper = np.column_stack([a, c, d])
    triangles = np.vstack([lower, upper])

    gi = np.arange((n + 1) ** 2) % (n + 1)
    gj = np.arange((n + 1) ** 2) // (n + 1)
    is_interior = (gi > 0) & (gi < n) & (gj > 0) & (gj < n)
    interior = np.flatnonzero(is_interior)
    boundary = np.flatnonzero(~is_interior)
    full_to_interior = np.full((n + 1) ** 2, -1, dtype=int)
    full_to_interior[interior] = np.arange(interior.size)

    return StructuredTriMesh(
        n=n,
        h=h,
        nodes=nodes,
        triangles=triangles,
        interior=interior,
        boundary=boundary,
        full_to_interior=full_to_interior,
    )


def _element_geometry(mesh):
    """Per-triangle vertex coordinates, edge vectors and areas."""
    pts = mesh.nodes[mesh.triangles]  # (T, 3, 2)
    e0 = pts[:, 2] - pts[:, 1]
    e1 = pts[:, 0] - pts[:, 2]
    e2 = pts[:, 1] - pts[:, 0]
    det = e2[:, 0] * (-e1[:, 1]) - e2[:, 1] * (-e1[:, 0])
    area = 0.5 * det
    if np.any(area <= 0):
        raise ValueError("triangulation contains non-positively oriented triangles")
    return np.stack([e0, e1, e2], axis=1), area


def assemble_stiffness(mesh):
    """Assemble the P1 stiffness matrix on the interior nodes.

    Entries are integrals of grad(phi_i) . grad(phi_j); boundary rows and
    columns are eliminated.  Returns a CSR matrix of size (n-1)^2.
    """
    edges, area = _element_geometry(mesh)
    # grad(lambda_k) = rot90(opposite edge) / (2 * area)
    grads = np.stack([edges[:, :, 1], -edges[:, :, 0]], axis=2)
    grads /= (2.0 * area)[:, None, None]
    ke = np.einsum("tik,tjk,t->tij", grads, grads, area)
    return _assemble_interior(mesh, ke)


def assemble_mass(mesh, lumping="consistent"):
    """Assemble the P1 mass matrix on the interior nodes.

    With lumping="consistent" the element matrix is (area/12) * [[2,1,1],
    [1,2,1],[1,1,2]].  With lumping="lumped" each full-grid row of the
    consistent matrix is summed onto the diagonal before boundary
    elimination, which gives the diagonal value h^2 at every node whose
    six incident triangles are all present.
    """
    if lumping not in ("consistent", "lumped"):
        raise ValueError(f"unknown lumping {lumping!r}")
    _, area = _element_geometry(mesh)
    base = (np.eye(3) + np.ones((3, 3))) / 12.0
    ke = area[:, None, None] * base[None, :, :]
    if lumping == "lumped":
        rows = mesh.triangles.ravel()
        vals = ke.sum(axis=2).ravel()
        diag = np.bincount(rows, weights=vals, minlength=mesh.n_nodes)
        return sp.diags(diag[mesh.interior]).tocsr()
    return _assemble_interior(mesh, ke)


def _assemble_interior(mesh, element_matrices):
    """Scatter element matrices into a CSR matrix restricted to interior nodes."""
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    vals = element_matrices.ravel()
    full = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    keep = mesh.interior
    return full[np.ix_(keep, keep)].tocsr()


def interpolate(mesh, func):
    """Nodal interpolation of func(x1, x2) on the interior nodes."""
    xy = mesh.interior_coords()
    vals = np.asarray(func(xy[:, 0], xy[:, 1]), dtype=float)
    return np.broadcast_to(vals, (mesh.n_interior,)).copy()


def extend_with_boundary(mesh, v_interior, boundary_value=0.0):
    """Lift an interior nodal vector to the full grid (Dirichlet fill-in)."""
    v_interior = np.asarray(v_interior, dtype=float)
    if v_interior.shape != (mesh.n_interior,):
        raise ValueError(
            f"expected {mesh.n_interior} interior values, got shape {v_interior.shape}"
        )
    full = np.full(mesh.n_nodes, boundary_value, dtype=float)
    full[mesh.interior] = v_interior
    return full
