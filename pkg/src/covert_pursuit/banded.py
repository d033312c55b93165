"""Symmetric matrices of the form band + U C U^T, with fast linear solves.

The Newton systems of the trajectory subproblems couple each slot only to
its two predecessors, except for the cumulative energy rows and the DST
path-length square, which add a low-rank-structured term.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse


class StructuredMatrix:
    """``band`` holds the lower band: band[k, j] = H[j + k, j].

    ``terms`` is a list of (U, C) pairs, U an (n, k) dense or sparse matrix
    and C a (k, k) symmetric positive semidefinite matrix.
    """

    def __init__(self, band: np.ndarray, terms=None):
        # diagonals at offset >= n do not exist
        self.band = band[: band.shape[1]]
        self.terms = list(terms or [])

    @property
    def n(self) -> int:
        return self.band.shape[1]

    def __mul__(self, scale: float) -> "StructuredMatrix":
        return StructuredMatrix(self.band * scale, [(u, c * scale) for u, c in self.terms])

    __rmul__ = __mul__

    def __add__(self, other: "StructuredMatrix") -> "StructuredMatrix":
        kb = max(self.band.shape[0], other.band.shape[0])
        band = np.zeros((kb, self.n))
        band[: self.band.shape[0]] += self.band
        band[: other.band.shape[0]] += other.band
        return StructuredMatrix(band, self.terms + other.terms)

    def add_diagonal(self, d) -> "StructuredMatrix":
        band = self.band.copy()
        band[0] += d
        return StructuredMatrix(band, self.terms)

    def dense(self) -> np.ndarray:
        n = self.n
        out = np.zeros((n, n))
        for k in range(self.band.shape[0]):
            idx = np.arange(n - k)
            out[idx + k, idx] += self.band[k, : n - k]
            if k:
                out[idx, idx + k] += self.band[k, : n - k]
        for u, c in self.terms:
            ud = u.toarray() if scipy.sparse.issparse(u) else np.asarray(u)
            out += ud @ c @ ud.T
        return out

    def matvec(self, x) -> np.ndarray:
        n = self.n
        y = self.band[0] * x
        for k in range(1, self.band.shape[0]):
            y[k:] += self.band[k, : n - k] * x[: n - k]
            y[: n - k] += self.band[k, : n - k] * x[k:]
        for u, c in self.terms:
            y = y + u @ (c @ (u.T @ x))
        return y

    def _factor_band(self):
        band = self.band
        scale = max(1.0, float(np.max(np.abs(band[0]))))
        for jitter in (0.0, 1e-12, 1e-10, 1e-8, 1e-6):
            trial = band if jitter == 0.0 else band.copy()
            if jitter:
                trial[0] += jitter * scale
            try:
                return scipy.linalg.cholesky_banded(trial, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                continue
        raise np.linalg.LinAlgError("banded part is not positive definite")

    def solve(self, rhs) -> np.ndarray:
        """Solve H x = rhs via banded Cholesky plus a Woodbury correction."""
        chol = self._factor_band()

        def band_solve(b):
            return scipy.linalg.cho_solve_banded((chol, True), b, check_finite=False)

        x = band_solve(rhs)
        if not self.terms:
            return x
        us = [u.toarray() if scipy.sparse.issparse(u) else np.asarray(u) for u, _ in self.terms]
        U = np.hstack(us)
        C = scipy.linalg.block_diag(*[np.atleast_2d(c) for _, c in self.terms])
        Z = band_solve(U)
        # (A + U C U^T)^-1 = A^-1 - Z C (I + U^T Z C)^-1 U^T A^-1; I + W C is
        # invertible whenever W = U^T Z is PSD and C is PSD
        k = U.shape[1]
        inner = np.eye(k) + (U.T @ Z) @ C
        corr = np.linalg.solve(inner, U.T @ x)
        return x - Z @ (C @ corr)
