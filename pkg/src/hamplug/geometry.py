"""Forms, fields and maps of the standard contact model in fixed low dimension.

Coordinate conventions, used by every module:

* state point (dimension 2n-1): ``(x1, y1, ..., x_{n-1}, y_{n-1}, z)``
* ambient point (dimension 2n):  ``(w, z, x1, y1, ..., x_{n-1}, y_{n-1})``
* a 2-form is stored as the antisymmetric matrix ``W[i, j] = omega(e_i, e_j)``
* a 1-form is stored as its coefficient vector in the same ordering

Reeb fields solve ``W R = 0, a.R = 1``; Hamiltonian fields solve
``omega(X, .) = -dK``, i.e. ``W X = dK``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numba as nb
import numpy as np

from .linalg import SingularSystem, hamiltonian_solve, reeb_solve

__all__ = [
    "Dimension", "DimensionError", "SingularSystem", "ScalarField", "CollarChart",
    "ContactForm", "StandardForm", "ScaledForm",
    "eval_alpha_st", "eval_dalpha_st", "omega_st", "reeb_field", "reeb_residuals",
    "hamiltonian_field", "liouville_field", "contact_type_restriction",
    "mirror_map", "rescale_map", "rescale_jacobian", "graph_embed",
    "symplectization_form", "graph_pushforward",
]


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Dimension:
    """Half the even ambient dimension; the contact hypersurface has dimension 2n-1."""

    n: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 3:
            raise DimensionError(f"n must be an integer >= 3, got {self.n!r}")

    @property
    def odd(self) -> int:
        return 2 * self.n - 1

    @property
    def even(self) -> int:
        return 2 * self.n

    def check_state(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        if p.shape != (self.odd,):
            raise DimensionError(f"expected a state point of length {self.odd}, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("state point has non-finite components")
        return p

    def check_ambient(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        if p.shape != (self.even,):
            raise DimensionError(f"expected an ambient point of length {self.even}, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("ambient point has non-finite components")
        return p


def _dim_of_state(p) -> Dimension:
    p = np.asarray(p)
    if p.ndim != 1 or p.size % 2 == 0:
        raise DimensionError(f"state points have odd length, got shape {p.shape}")
    return Dimension((p.size + 1) // 2)


# --------------------------------------------------------------------------
# compiled primitives


@nb.njit(cache=True)
def alpha_st_kernel(p):
    d = p.shape[0]
    a = np.zeros(d)
    for j in range((d - 1) // 2):
        a[2 * j] = -0.5 * p[2 * j + 1]
        a[2 * j + 1] = 0.5 * p[2 * j]
    a[d - 1] = 1.0
    return a


@nb.njit(cache=True)
def dalpha_st_kernel(d):
    W = np.zeros((d, d))
    for j in range((d - 1) // 2):
        W[2 * j, 2 * j + 1] = 1.0
        W[2 * j + 1, 2 * j] = -1.0
    return W


@nb.njit(cache=True)
def scaled_form_kernel(p, H, dH):
    """alpha_st/H and its exterior derivative dalpha_st/H - (dH ^ alpha_st)/H^2."""
    d = p.shape[0]
    a0 = alpha_st_kernel(p)
    W = dalpha_st_kernel(d)
    inv = 1.0 / H
    inv2 = inv * inv
    a = a0 * inv
    for i in range(d):
        for j in range(d):
            W[i, j] = W[i, j] * inv - (dH[i] * a0[j] - dH[j] * a0[i]) * inv2
    return a, W


@nb.njit(cache=True)
def scaled_reeb_kernel(p, H, dH):
    a, W = scaled_form_kernel(p, H, dH)
    return reeb_solve(a, W)


# --------------------------------------------------------------------------
# scalar fields and forms


class ScalarField:
    """Point -> real with a gradient; central differences when no gradient is given."""

    def __init__(self, value: Callable, gradient: Callable | None = None, h: float = 1e-5):
        self._value = value
        self._gradient = gradient
        self.h = h

    def __call__(self, p) -> float:
        return float(self._value(np.asarray(p, dtype=np.float64)))

    def fd_gradient(self, p, h: float | None = None) -> np.ndarray:
        h = self.h if h is None else h
        p = np.asarray(p, dtype=np.float64)
        g = np.empty(p.size)
        for i in range(p.size):
            e = np.zeros(p.size)
            e[i] = h
            g[i] = (self(p + e) - self(p - e)) / (2 * h)
        return g

    def gradient(self, p) -> np.ndarray:
        if self._gradient is None:
            return self.fd_gradient(p)
        return np.asarray(self._gradient(np.asarray(p, dtype=np.float64)), dtype=np.float64)


class ContactForm:
    """A 1-form given pointwise by its coefficients and exterior derivative."""

    def alpha(self, p) -> np.ndarray:
        raise NotImplementedError

    def dalpha(self, p) -> np.ndarray:
        raise NotImplementedError


class StandardForm(ContactForm):
    def alpha(self, p):
        return eval_alpha_st(p)

    def dalpha(self, p):
        return eval_dalpha_st(_dim_of_state(p).n)


class ScaledForm(ContactForm):
    """alpha_st / H for a positive function H given as ``H_and_grad(p) -> (H, dH)``."""

    def __init__(self, H_and_grad: Callable):
        self.H_and_grad = H_and_grad

    def _eval(self, p):
        p = _dim_of_state(p).check_state(p)
        H, dH = self.H_and_grad(p)
        return scaled_form_kernel(p, float(H), np.asarray(dH, dtype=np.float64))

    def alpha(self, p):
        return self._eval(p)[0]

    def dalpha(self, p):
        return self._eval(p)[1]


def eval_alpha_st(p) -> np.ndarray:
    p = _dim_of_state(p).check_state(p)
    return alpha_st_kernel(p)


def eval_dalpha_st(n: int) -> np.ndarray:
    return dalpha_st_kernel(Dimension(n).odd)


def omega_st(n: int) -> np.ndarray:
    """dw^dz + sum dx_j^dy_j in ambient ordering (w, z, x1, y1, ...)."""
    d = Dimension(n).even
    W = np.zeros((d, d))
    for i in range(0, d, 2):
        W[i, i + 1] = 1.0
        W[i + 1, i] = -1.0
    return W


def reeb_field(form: ContactForm, p) -> np.ndarray:
    """The R with dalpha(R, .) = 0 and alpha(R) = 1.

    Raises SingularSystem when the bordered system is rank deficient, i.e.
    the form is not contact at ``p``.
    """
    p = np.asarray(p, dtype=np.float64)
    if isinstance(form, StandardForm):
        _dim_of_state(p).check_state(p)
        R = np.zeros(p.size)
        R[-1] = 1.0
        return R
    return reeb_solve(np.asarray(form.alpha(p)), np.asarray(form.dalpha(p)))


def reeb_residuals(form: ContactForm, p, R) -> tuple[float, float]:
    a = form.alpha(p)
    W = form.dalpha(p)
    return abs(float(a @ R) - 1.0), float(np.max(np.abs(R @ W)))


def hamiltonian_field(omega, K, p) -> np.ndarray:
    """X_K with omega(X_K, .) = -dK; ``K`` is a ScalarField or a gradient array."""
    p = np.asarray(p, dtype=np.float64)
    dK = K.gradient(p) if isinstance(K, ScalarField) else np.asarray(K, dtype=np.float64)
    return hamiltonian_solve(np.asarray(omega, dtype=np.float64), dK)


def liouville_field(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    Dimension(p.size // 2).check_ambient(p)
    return 0.5 * p


def contact_type_restriction(p, tol: float = 1e-12) -> np.ndarray:
    """i_Y omega_st restricted to {w = 2}, returned in state ordering."""
    p = np.asarray(p, dtype=np.float64)
    dim = Dimension(p.size // 2)
    dim.check_ambient(p)
    if abs(p[0] - 2.0) > tol:
        raise ValueError(f"point is off the hypersurface w = 2 (w = {p[0]!r})")
    iY = liouville_field(p) @ omega_st(dim.n)
    # ambient (w, z, x1, y1, ...) -> state (x1, y1, ..., z); the dw part drops
    return np.concatenate([iY[2:], iY[1:2]])


def mirror_map(p) -> np.ndarray:
    q = np.array(p, dtype=np.float64)
    q[-1] = -q[-1]
    return q


def rescale_map(lam: float, p) -> np.ndarray:
    if not lam > 0:
        raise ValueError(f"rescaling factor must be positive, got {lam!r}")
    q = np.array(p, dtype=np.float64) * lam
    q[-1] *= lam
    return q


def rescale_jacobian(lam: float, d: int) -> np.ndarray:
    if not lam > 0:
        raise ValueError(f"rescaling factor must be positive, got {lam!r}")
    J = np.eye(d) * lam
    J[-1, -1] = lam * lam
    return J


def graph_embed(f, p) -> tuple[float, np.ndarray]:
    """x -> (f(x), x) in the symplectization R x M."""
    p = np.asarray(p, dtype=np.float64)
    t = float(f(p))
    if not math.isfinite(t):
        raise ValueError("graph function is not finite at p")
    return t, p.copy()


def symplectization_form(t: float, alpha, dalpha) -> np.ndarray:
    """d(e^t alpha) = e^t (dt ^ alpha + dalpha) in coordinates (t, state)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    d = alpha.size
    W = np.zeros((d + 1, d + 1))
    W[0, 1:] = alpha
    W[1:, 0] = -alpha
    W[1:, 1:] = dalpha
    return math.exp(t) * W


def graph_pushforward(f: ScalarField, R, p) -> np.ndarray:
    """Image of the vector R at p under the differential of x -> (f(x), x)."""
    return np.concatenate([[f.gradient(p) @ R], R])


@dataclass(frozen=True)
class CollarChart:
    """Collar (-sigma, sigma) x Sigma with form omega_Sigma + d(s beta); s = e^t - 1."""

    sigma: float
    base: str = "Sigma"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("collar half-width must be positive")

    def s_of_t(self, t):
        return np.expm1(t)

    def t_of_s(self, s):
        s = np.asarray(s, dtype=np.float64)
        if np.any(np.abs(s) >= self.sigma) or np.any(s <= -1):
            raise ValueError("s outside the collar")
        return np.log1p(s)

    def form(self, s: float, omega_sigma, beta, dbeta) -> np.ndarray:
        """omega_Sigma + ds^beta + s dbeta in coordinates (s, hypersurface)."""
        beta = np.asarray(beta, dtype=np.float64)
        d = beta.size
        W = np.zeros((d + 1, d + 1))
        W[0, 1:] = beta
        W[1:, 0] = -beta
        W[1:, 1:] = np.asarray(omega_sigma) + s * np.asarray(dbeta)
        return W
