"""Dense linear-algebra kernels: covariances, truncated spectra, subspace algebra.

Subspaces are represented as ``(D, k)`` arrays with orthonormal columns; a
``k == 0`` basis is a ``(D, 0)`` array. Spectra are 1-D nonincreasing arrays of
nonnegative variances. Bases of degenerate spectra are not unique, so callers
should compare projectors, never raw bases.
"""

from __future__ import annotations

import numpy as np

from .errors import AsymmetricInput, EmptyCell

#: relative singular-value cutoff used for every numerical-rank decision
RANK_RTOL = 1e-8


def empty_basis(ambient_dim: int) -> np.ndarray:
    return np.zeros((ambient_dim, 0))


def covariance(points: np.ndarray, mean: np.ndarray | None = None) -> np.ndarray:
    """Return ``(1/n) sum (x - mean)(x - mean)^T`` over the rows of `points`."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        raise EmptyCell("covariance of an empty point set")
    if mean is None:
        mean = points.mean(axis=0)
    centered = points - mean
    cov = centered.T @ centered / points.shape[0]
    return 0.5 * (cov + cov.T)


def _clamp_spectrum(values: np.ndarray) -> np.ndarray:
    values = np.sort(np.asarray(values, dtype=float))[::-1]
    return np.where(values < 0.0, 0.0, values)


def truncated_eig(cov: np.ndarray, rank: int, *, return_full: bool = False):
    """Top-`rank` eigenpairs of a symmetric PSD matrix.

    Returns ``(basis, spectrum)`` where ``basis`` is ``(D, r)`` and ``r`` is
    ``rank`` capped at the numerical rank of `cov`. With ``return_full`` the
    complete clamped spectrum is appended as a third element.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise AsymmetricInput(f"expected a square matrix, got shape {cov.shape}")
    scale = max(np.abs(cov).max(initial=0.0), 1.0)
    if np.abs(cov - cov.T).max(initial=0.0) > 1e-8 * scale:
        raise AsymmetricInput("covariance is not symmetric")
    if rank < 0 or rank > cov.shape[0]:
        raise ValueError(f"rank {rank} outside [0, {cov.shape[0]}]")
    values, vectors = np.linalg.eigh(0.5 * (cov + cov.T))
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]
    full = _clamp_spectrum(values)
    r = min(rank, numerical_rank(full))
    basis = vectors[:, :r]
    if return_full:
        return basis, full[:r], full
    return basis, full[:r]


def local_pca(points: np.ndarray, center: np.ndarray | None = None):
    """Principal directions and variances of a point set about `center`.

    Uses a thin SVD of the centered data rather than an eigendecomposition of
    the covariance: tiny variances then stay resolvable against
    :data:`RANK_RTOL`. Returns ``(basis, spectrum)`` with ``min(n, D)``
    columns/values; the spectrum is in variance units (``s**2 / n``).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    if n == 0:
        raise EmptyCell("PCA of an empty point set")
    if center is None:
        center = points.mean(axis=0)
    centered = points - center
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    return vt.T, s**2 / n


def leading_directions(points: np.ndarray, k: int):
    """Top-k principal directions, their variances and the total variance.

    A cheap Gram-matrix eigensolver for partitioning, where only the leading
    directions matter; small variances are not resolved accurately. Returns
    ``(center, basis (D, k'), variances (k',), total)`` with
    ``k' = min(k, n, D)``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, D = points.shape
    if n == 0:
        raise EmptyCell("PCA of an empty point set")
    center = points.mean(axis=0)
    Y = points - center
    total = float((Y * Y).sum()) / n
    k = min(k, n, D)
    if n >= D:
        w, v = np.linalg.eigh(Y.T @ Y)
        basis = v[:, ::-1][:, :k]
    else:
        w, v = np.linalg.eigh(Y @ Y.T)
        u = v[:, ::-1][:, :k]
        s = np.sqrt(np.clip(w[::-1][:k], 0.0, None))
        basis = Y.T @ u
        basis /= np.where(s > 0, s, 1.0)
    return center, basis, np.clip(w[::-1][:k], 0.0, None) / n, total


def numerical_rank(spectrum: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Count variances whose square root exceeds ``rtol`` times the largest."""
    spectrum = np.asarray(spectrum, dtype=float)
    if spectrum.size == 0 or spectrum[0] <= 0.0:
        return 0
    sv = np.sqrt(np.clip(spectrum, 0.0, None))
    return int(np.count_nonzero(sv > rtol * sv[0]))


def projector(basis: np.ndarray) -> np.ndarray:
    return basis @ basis.T


def orthonormalize(vectors: np.ndarray, rank_tol: float | None = None) -> np.ndarray:
    """Orthonormal basis of the column span, dropping singular values <= rank_tol."""
    vectors = np.asarray(vectors, dtype=float)
    if vectors.shape[1] == 0:
        return vectors.copy()
    u, s, _ = np.linalg.svd(vectors, full_matrices=False)
    if rank_tol is None:
        rank_tol = RANK_RTOL * (s[0] if s.size else 0.0)
    return u[:, s > rank_tol]


def orthonormal_complement_projection(
    basis: np.ndarray, vectors: np.ndarray, rank_tol: float | None = None
) -> np.ndarray:
    """Orthonormal basis for ``span((I - B B^T) vectors)``.

    Directions with singular value ``<= rank_tol`` are dropped; the default
    tolerance is ``RANK_RTOL`` times the largest singular value of `vectors`
    itself, so a column set lying inside ``span(basis)`` yields an empty
    result. The projection is applied twice to keep the output orthogonal to
    `basis` at machine precision.
    """
    basis = np.asarray(basis, dtype=float)
    vectors = np.asarray(vectors, dtype=float)
    if basis.shape[0] != vectors.shape[0]:
        raise ValueError("ambient dimensions differ")
    D = vectors.shape[0]
    if vectors.shape[1] == 0:
        return empty_basis(D)
    if rank_tol is None:
        rank_tol = RANK_RTOL * np.linalg.norm(vectors, 2)
    resid = vectors - basis @ (basis.T @ vectors)
    resid -= basis @ (basis.T @ resid)
    out = orthonormalize(resid, rank_tol=rank_tol)
    if out.shape[1] and basis.shape[1]:
        out = out - basis @ (basis.T @ out)
        out, _ = np.linalg.qr(out)
    return out


def principal_cosines(a: np.ndarray, b: np.ndarray):
    """Cosines of principal angles between ``span(a)`` and ``span(b)``.

    Returns ``(cosines, ua, ub)`` with ``a @ ua`` and ``b @ ub`` the paired
    principal vectors, cosines sorted nonincreasing.
    """
    if a.shape[1] == 0 or b.shape[1] == 0:
        return np.zeros(0), np.zeros((a.shape[1], 0)), np.zeros((b.shape[1], 0))
    u, s, vt = np.linalg.svd(a.T @ b, full_matrices=False)
    return np.clip(s, 0.0, 1.0), u, vt.T


def subspace_intersection(bases, angle_tol: float = 1e-8) -> np.ndarray:
    """Numerical intersection of several subspaces.

    Keeps the directions of the running intersection whose principal-angle
    cosine to each further subspace is ``>= 1 - angle_tol``.
    """
    bases = [np.asarray(b, dtype=float) for b in bases]
    if len(bases) < 2:
        raise ValueError("need at least two subspaces")
    D = bases[0].shape[0]
    if any(b.shape[0] != D for b in bases):
        raise ValueError("ambient dimensions differ")
    current = bases[0]
    for other in bases[1:]:
        cos, ua, _ = principal_cosines(current, other)
        keep = cos >= 1.0 - angle_tol
        current = current @ ua[:, keep]
        if current.shape[1] == 0:
            return empty_basis(D)
    q, _ = np.linalg.qr(current)
    return q


def complement_within(space: np.ndarray, sub: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the part of ``span(space)`` orthogonal to ``span(sub)``.

    `sub` is assumed to lie (numerically) inside `space`; the result has
    exactly ``dim space - dim sub`` columns: the principal vectors of `space`
    farthest from `sub`.
    """
    k = space.shape[1] - sub.shape[1]
    if k < 0:
        raise ValueError("subspace larger than the enclosing space")
    if sub.shape[1] == 0:
        return space.copy()
    _, _, vt = np.linalg.svd(sub.T @ space)
    return space @ vt[sub.shape[1]:].T
