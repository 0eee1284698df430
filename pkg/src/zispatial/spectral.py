"""Moran eigenvector basis and graph precision matrices.

The centered adjacency operator of the mesh graph encodes spatial
clustering patterns; its leading eigenvectors form a low-rank basis for
latent spatial fields, with a graph-based (intrinsic or proper CAR)
prior precision reduced onto the basis.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, eigsh

__all__ = [
    "MoranOperator",
    "MoranBasis",
    "PrecisionSpec",
    "ReducedPrecision",
    "moran_operator",
    "leading_eigenvectors",
    "morans_i",
    "build_precision",
    "reduced_precision",
    "save_basis",
    "load_basis",
]


class MoranOperator:
    """The centered adjacency operator ``(I - 11'/m) N (I - 11'/m)``.

    Stored implicitly: matrix-vector products cost one sparse multiply by
    the adjacency plus two centerings, so the operator scales to dense
    meshes without materializing an m x m array.  ``to_dense`` is available
    for small m.
    """

    def __init__(self, N):
        N = sparse.csr_matrix(N)
        if N.shape[0] != N.shape[1]:
            raise ValueError("adjacency must be square")
        self.N = N
        self.shape = N.shape
        self._rowmeans = np.asarray(N.sum(axis=1)).ravel() / N.shape[0]
        self._grandmean = self._rowmeans.sum() / N.shape[0]

    def matvec(self, x):
        y = x - x.mean()
        y = self.N @ y
        return y - y.mean()

    def matmat(self, X):
        Y = X - X.mean(axis=0, keepdims=True)
        Y = self.N @ Y
        return Y - Y.mean(axis=0, keepdims=True)

    def __matmul__(self, other):
        other = np.asarray(other)
        if other.ndim == 1:
            return self.matvec(other)
        return self.matmat(other)

    def to_dense(self):
        # r_i + r_j - s is computed the same way for (i, j) and (j, i), so
        # the dense operator is exactly symmetric in floating point
        adjust = self._rowmeans[:, None] + self._rowmeans[None, :] - self._grandmean
        return self.N.toarray() - adjust


def moran_operator(N):
    """Build the Moran operator from a symmetric 0/1 adjacency matrix.

    The result annihilates the constant vector and is symmetric (it is a
    congruence of the symmetric adjacency by the centering projector).
    """
    op = MoranOperator(N)
    diag = op.N.diagonal()
    if np.any(diag != 0):
        raise ValueError("adjacency must have a zero diagonal")
    return op


@dataclass(frozen=True)
class MoranBasis:
    """Leading eigenvectors of the Moran operator, eigenvalues descending.

    Columns are unit-norm, mutually orthogonal, and orthogonal to the
    constant vector; the first nonzero entry of each column is positive so
    repeated runs are reproducible.
    """

    vectors: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        self.vectors.setflags(write=False)
        self.eigenvalues.setflags(write=False)

    @property
    def n_vertices(self):
        return self.vectors.shape[0]

    @property
    def rank(self):
        return self.vectors.shape[1]

    def truncate(self, p):
        """Leading-p sub-basis (columns are ordered by eigenvalue)."""
        if p > self.rank:
            raise ValueError(f"requested rank {p} exceeds basis rank {self.rank}")
        return MoranBasis(self.vectors[:, :p].copy(), self.eigenvalues[:p].copy())


def _fix_signs(V):
    for j in range(V.shape[1]):
        col = V[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]
        if len(nz) and col[nz[0]] < 0:
            V[:, j] = -col
    return V


def leading_eigenvectors(op, p, seed=0):
    """Compute the ``p`` algebraically largest eigenpairs of a symmetric operator.

    Parameters
    ----------
    op : MoranOperator or ndarray
        Symmetric operator of shape (m, m).
    p : int
        Number of eigenpairs, ``p < m``.
    seed : int
        Seeds the starting vector of the iterative solver; results are
        deterministic for a fixed seed.

    Uses an implicitly restarted Lanczos partial eigendecomposition, so a
    full O(m^3) factorization is never formed; a dense solve is the
    fallback when ARPACK cannot be applied (p within 2 of m).
    """
    m = op.shape[0]
    if not 0 < p < m:
        raise ValueError(f"rank p must satisfy 0 < p < m, got p={p}, m={m}")
    if isinstance(op, MoranOperator):
        linop = LinearOperator(op.shape, matvec=op.matvec, matmat=op.matmat, dtype=float)
        apply_op = op.matmat
    else:
        op = np.asarray(op, dtype=float)
        linop = LinearOperator(op.shape, matvec=lambda x: op @ x, matmat=lambda X: op @ X, dtype=float)
        apply_op = lambda X: op @ X
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(m)
    if p >= m - 2:
        dense = op.to_dense() if isinstance(op, MoranOperator) else op
        vals, vecs = np.linalg.eigh(dense)
        vals, vecs = vals[::-1][:p], vecs[:, ::-1][:, :p]
    else:
        vals, vecs = eigsh(linop, k=p, which="LA", v0=v0)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
    vecs = _fix_signs(np.ascontiguousarray(vecs))
    residual = np.abs(apply_op(vecs) - vecs * vals[None, :]).max()
    if residual > 1e-8:
        raise RuntimeError(f"eigensolver residual {residual:.2e} exceeds 1e-8")
    return MoranBasis(vecs, vals)


def morans_i(N, z):
    """Global spatial-autocorrelation statistic of ``z`` on the graph ``N``.

    Returns ``(m / 1'N1) * (z' C N C z) / (z' C z)`` with C the centering
    projector.  Values above ``-1/(m-1)`` indicate positive spatial
    autocorrelation.
    """
    N = sparse.csr_matrix(N)
    z = np.asarray(z, dtype=float)
    m = N.shape[0]
    s0 = N.sum()
    if s0 == 0:
        raise ValueError("adjacency has no edges")
    zc = z - z.mean()
    denom = zc @ zc
    if denom <= 0:
        raise ValueError("zero variance")
    return (m / s0) * (zc @ (N @ zc)) / denom


@dataclass(frozen=True)
class PrecisionSpec:
    """Choice of prior precision on the mesh vertices.

    kind 'icar' gives the intrinsic autoregression ``diag(N1) - N``; 'car'
    the proper autoregression ``diag(N1) - rho*N`` with ``rho`` in (0, 1);
    'identity' leaves the vertices uncorrelated a priori.
    """

    kind: str = "icar"
    rho: float | None = None

    def __post_init__(self):
        if self.kind not in ("icar", "car", "identity"):
            raise ValueError(f"unknown precision kind {self.kind!r}")
        if self.kind == "car":
            if self.rho is None or not 0 < self.rho < 1:
                raise ValueError("CAR correlation must lie in (0, 1)")


def build_precision(N, spec=PrecisionSpec()):
    """Sparse vertex precision matrix for a given :class:`PrecisionSpec`."""
    N = sparse.csr_matrix(N)
    m = N.shape[0]
    if spec.kind == "identity":
        return sparse.identity(m, format="csr")
    deg = sparse.diags(np.asarray(N.sum(axis=1)).ravel())
    if spec.kind == "icar":
        return sparse.csr_matrix(deg - N)
    return sparse.csr_matrix(deg - spec.rho * N)


@dataclass
class ReducedPrecision:
    """Basis-reduced precision ``P = M'QM`` with its Cholesky factor cached.

    ``logdet`` is log det(P); ``quad(x)`` evaluates x'Px through the factor,
    which is what the coefficient prior and its conjugate updates need.
    """

    matrix: np.ndarray
    chol_lower: np.ndarray = field(repr=False)
    logdet: float = 0.0

    @property
    def dim(self):
        return self.matrix.shape[0]

    def quad(self, x):
        y = self.chol_lower.T @ x
        return float(y @ y)


def reduced_precision(basis, Q):
    """Project a vertex precision onto a Moran basis: ``P = M'QM``.

    Raises ``ValueError("reduced precision not positive definite")`` when
    the Cholesky factorization fails (e.g. basis columns not orthogonal to
    the intrinsic null space).
    """
    M = basis.vectors if isinstance(basis, MoranBasis) else np.asarray(basis)
    if Q.shape[1] != M.shape[0]:
        raise ValueError("precision and basis dimensions do not conform")
    P = M.T @ (Q @ M)
    P = (P + P.T) / 2.0
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise ValueError("reduced precision not positive definite") from None
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    return ReducedPrecision(P, L, logdet)


def save_basis(basis, path):
    """Write a basis as plain text: ``m p`` header, eigenvalue line, m coefficient rows."""
    m, p = basis.vectors.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{m} {p}\n")
        fh.write(" ".join(repr(float(v)) for v in basis.eigenvalues) + "\n")
        np.savetxt(fh, basis.vectors, fmt="%.17g")


def load_basis(path):
    """Read a basis written by :func:`save_basis`."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError("malformed basis header")
        m, p = int(header[0]), int(header[1])
        eigenvalues = np.fromstring(fh.readline(), sep=" ")
        vectors = np.loadtxt(fh, max_rows=m, ndmin=2)
    if vectors.shape != (m, p) or eigenvalues.shape != (p,):
        raise ValueError("basis file does not match its header")
    return MoranBasis(vectors, eigenvalues)
