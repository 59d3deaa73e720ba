"""Dense solves for the tiny pointwise systems (size <= 2n) behind every field."""

import numba as nb
import numpy as np


class SingularSystem(np.linalg.LinAlgError):
    """Pointwise linear system is (numerically) singular.

    For the Reeb system this means the input 1-form is not contact at the
    point; for the Hamiltonian system the 2-form is degenerate.
    """


@nb.njit(cache=True)
def solve_small(A, b):
    """Gaussian elimination with partial pivoting; A and b are not modified."""
    n = b.shape[0]
    M = A.copy()
    x = b.copy()
    scale = 0.0
    for i in range(n):
        for j in range(n):
            if abs(M[i, j]) > scale:
                scale = abs(M[i, j])
    if scale == 0.0:
        raise SingularSystem("zero matrix")
    for k in range(n):
        piv = k
        big = abs(M[k, k])
        for i in range(k + 1, n):
            if abs(M[i, k]) > big:
                big = abs(M[i, k])
                piv = i
        if big <= 1e-13 * scale:
            raise SingularSystem("pivot below 1e-13 of matrix scale")
        if piv != k:
            for j in range(n):
                tmp = M[k, j]
                M[k, j] = M[piv, j]
                M[piv, j] = tmp
            tmp = x[k]
            x[k] = x[piv]
            x[piv] = tmp
        for i in range(k + 1, n):
            f = M[i, k] / M[k, k]
            if f != 0.0:
                for j in range(k, n):
                    M[i, j] -= f * M[k, j]
                x[i] -= f * x[k]
    for k in range(n - 1, -1, -1):
        s = x[k]
        for j in range(k + 1, n):
            s -= M[k, j] * x[j]
        x[k] = s / M[k, k]
    return x


@nb.njit(cache=True)
def reeb_solve(a, W):
    """Reeb vector of a 1-form with coefficients ``a`` and exterior derivative ``W``.

    Solves the bordered system [[W, a], [a^T, 0]] [R; mu] = [0; 1].  It is
    nonsingular exactly when the stacked system (rows of W plus the row a)
    has full rank, i.e. when a ^ (dA)^(n-1) != 0; the solution then has
    mu = 0, W R = 0 and a(R) = 1.
    """
    d = a.shape[0]
    B = np.zeros((d + 1, d + 1))
    for i in range(d):
        for j in range(d):
            B[i, j] = W[i, j]
        B[i, d] = a[i]
        B[d, i] = a[i]
    rhs = np.zeros(d + 1)
    rhs[d] = 1.0
    sol = solve_small(B, rhs)
    return sol[:d].copy()


@nb.njit(cache=True)
def hamiltonian_solve(W, dK):
    """X with omega(X, .) = -dK, i.e. W X = dK for W[i, j] = omega(e_i, e_j)."""
    return solve_small(W, dK)
