"""Weighted p-power sums of linear measurements.

Every energy in the package (Gagliardo seminorms, L^p norms, potential
terms, local gradient energies) is discretized as

    F(u) = sum_r w_r |(B u)_r|^p

with a sparse measurement matrix ``B`` and real weights ``w``.  For p = 2
this is the quadratic form of ``B^T diag(w) B``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


def signed_power(r: np.ndarray, e: float) -> np.ndarray:
    """|r|^e sign(r), safe at r = 0 for e > 0."""
    return np.sign(r) * np.abs(r) ** e


@dataclass(frozen=True, eq=False)
class PowerForm:
    B: sp.csr_matrix
    w: np.ndarray

    @classmethod
    def from_coo(cls, rows, cols, vals, w, ncols: int) -> "PowerForm":
        w = np.asarray(w, dtype=float)
        B = sp.csr_matrix((np.asarray(vals, dtype=float), (np.asarray(rows), np.asarray(cols))),
                          shape=(len(w), ncols))
        return cls(B, w)

    @classmethod
    def empty(cls, ncols: int) -> "PowerForm":
        return cls(sp.csr_matrix((0, ncols)), np.zeros(0))

    @property
    def ncols(self) -> int:
        return self.B.shape[1]

    @property
    def nrows(self) -> int:
        return self.B.shape[0]

    def value(self, u: np.ndarray, p: float) -> float:
        r = self.B @ u
        return float(self.w @ np.abs(r) ** p)

    def gradient(self, u: np.ndarray, p: float) -> np.ndarray:
        r = self.B @ u
        return p * (self.B.T @ (self.w * signed_power(r, p - 1.0)))

    def matrix(self) -> np.ndarray:
        """Dense matrix of the p = 2 quadratic form."""
        return (self.B.T @ sp.diags(self.w) @ self.B).toarray()

    def scaled(self, c: float) -> "PowerForm":
        return PowerForm(self.B, c * self.w)

    def restrict(self, cols: np.ndarray) -> "PowerForm":
        return PowerForm(self.B[:, cols].tocsr(), self.w)

    def __add__(self, other: "PowerForm") -> "PowerForm":
        if other.ncols != self.ncols:
            raise ValueError("forms act on different spaces")
        return PowerForm(sp.vstack([self.B, other.B]).tocsr(), np.concatenate([self.w, other.w]))


def gauss_legendre(n: int, a: float = 0.0, b: float = 1.0):
    x, w = np.polynomial.legendre.leggauss(n)
    return a + 0.5 * (b - a) * (x + 1.0), 0.5 * (b - a) * w
