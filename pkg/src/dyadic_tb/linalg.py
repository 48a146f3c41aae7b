"""Suprema of quadratic ratios ``||F x||^2 / ||x||^2`` over a set of cells.

Small domains are handled exactly through the dense normal matrix ``F^* F``.
Larger ones use Lanczos (``scipy.sparse.linalg.eigsh``) on the same normal
operator, which needs the bilinear transpose of ``F``; the Hermitian adjoint is
``conj . F^T . conj``. The Lanczos start vector is fixed so results are
reproducible. Cell volumes cancel, so plain Euclidean sums are used.
"""
from __future__ import annotations

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .grid import GridSpec

DENSE_LIMIT = 256


def _pieces(out) -> list:
    return list(out) if isinstance(out, (list, tuple)) else [out]


def basis(spec: GridSpec, domain: np.ndarray | None = None) -> np.ndarray:
    """Unit vectors on the domain cells, stacked along a trailing batch axis."""
    mask = np.ones(spec.shape, dtype=bool) if domain is None else np.asarray(domain, dtype=bool)
    cells = np.flatnonzero(mask.ravel())
    X = np.zeros((spec.ncells, cells.size), dtype=complex)
    X[cells, np.arange(cells.size)] = 1.0
    return X.reshape(spec.shape + (cells.size,))


def sup_ratio(
    forward, spec: GridSpec, domain: np.ndarray | None = None, transpose=None, dense_limit: int | None = None
) -> float:
    """Largest eigenvalue of ``F^* F`` with ``F`` restricted to functions on ``domain``.

    ``forward`` maps grid arrays with a trailing batch axis to an array or a
    list of arrays (same batch axis); ``transpose`` maps such a list back.
    Without ``transpose`` the dense path is used at any size.
    """
    mask = np.ones(spec.shape, dtype=bool) if domain is None else np.asarray(domain, dtype=bool)
    B = int(mask.sum())
    if B == 0:
        return 0.0
    limit = DENSE_LIMIT if dense_limit is None else dense_limit
    if B <= limit or transpose is None:
        # unit vectors are real, so real operators keep a real Gram matrix
        X = basis(spec, mask).real
        G = None
        for Y in _pieces(forward(X)):
            Y = np.asarray(Y).reshape(-1, B)
            part = Y.conj().T @ Y
            G = part if G is None else G + part
        G = 0.5 * (G + G.conj().T)
        return float(max(np.linalg.eigvalsh(G)[-1], 0.0))
    cells = np.flatnonzero(mask.ravel())

    def normal(v):
        x = np.zeros(spec.ncells, dtype=complex)
        x[cells] = np.asarray(v).ravel()
        ys = _pieces(forward(x.reshape(spec.shape + (1,))))
        back = np.conj(transpose([np.conj(y) for y in ys]))
        return np.asarray(back).reshape(-1)[cells]

    op = LinearOperator((B, B), matvec=normal, dtype=complex)
    v0 = np.random.default_rng(0).standard_normal(B) + 0j
    val = eigsh(op, k=1, which="LA", tol=1e-12, maxiter=20 * B, v0=v0, return_eigenvectors=False)
    return float(max(val[0].real, 0.0))
