"""Dense linear algebra, special functions, and seeded sampling.

Conventions used throughout the package:

* a "matrix" is a 2-D float64 ``numpy.ndarray`` (row-major);
* a "vector" is a 1-D float64 ``numpy.ndarray``;
* randomness always flows through a ``numpy.random.Generator`` created by
  :func:`make_rng`, so one integer seed fixes every sample stream.

The heavy lifting is delegated to numpy/scipy (LAPACK ``eigh``, ``gammaln``,
PCG64 ziggurat/transformed-rejection samplers); this module pins the
contracts the rest of the package relies on: shape checks, descending
eigenvalue order, a deterministic eigenvector sign convention, and domain
validation.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, ShapeError

RngState = np.random.Generator

ACTIVATIONS = ("sigmoid", "tanh", "relu", "leaky_relu")


def make_rng(seed: int) -> RngState:
    """Seeded PCG64 generator; one seed fixes the whole sample stream."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, n: int) -> list[RngState]:
    """n independent child generators for parallel streams."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def mat_mul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}: inner dimensions differ")
    return a @ b


def activation(x, kind: str, alpha: float = 0.01):
    """Elementwise nonlinearity: sigmoid, tanh, relu, or leaky_relu(alpha)."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out if out.ndim else float(out)
    if kind == "tanh":
        return np.tanh(x) if x.ndim else float(np.tanh(x))
    if kind == "relu":
        out = np.maximum(x, 0.0)
        return out if out.ndim else float(out)
    if kind == "leaky_relu":
        out = np.where(x > 0, x, alpha * x)
        return out if out.ndim else float(out)
    raise DomainError(f"unknown activation kind {kind!r}; expected one of {ACTIVATIONS}")


def activation_deriv(value, kind: str, alpha: float = 0.01):
    """Derivative of :func:`activation` expressed through its output value.

    For relu/leaky_relu the output sign determines the input sign, so the
    post-activation value is enough.  The subgradient at exactly 0 is 0.
    """
    value = np.asarray(value, dtype=np.float64)
    if kind == "sigmoid":
        return value * (1.0 - value)
    if kind == "tanh":
        return 1.0 - value * value
    if kind == "relu":
        return (value > 0).astype(np.float64)
    if kind == "leaky_relu":
        return np.where(value > 0, 1.0, np.where(value < 0, alpha, 0.0))
    raise DomainError(f"unknown activation kind {kind!r}; expected one of {ACTIVATIONS}")


def log_gamma(x):
    """ln Gamma(x) for x > 0 (vectorized)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise DomainError("log_gamma requires strictly positive arguments")
    out = gammaln(x)
    return out if out.ndim else float(out)


def eig_sym(a, sym_tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns eigenvalues sorted descending and the matching eigenvectors as
    columns.  Each eigenvector is flipped so its largest-magnitude entry is
    positive, which makes downstream PCA output deterministic.
    """
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DomainError(f"eig_sym requires a square matrix, got {a.shape}")
    if not np.allclose(a, a.T, atol=sym_tol, rtol=0.0):
        raise DomainError(f"matrix is not symmetric within {sym_tol}")
    vals, vecs = np.linalg.eigh(a)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        if col[np.argmax(np.abs(col))] < 0:
            vecs[:, k] = -col
    return vals, vecs


def sample_gaussian(rng: RngState, mu: float, sigma: float, n: int) -> np.ndarray:
    """n i.i.d. Normal(mu, sigma) draws from the given generator."""
    if sigma <= 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    return rng.normal(mu, sigma, size=int(n))


def sample_poisson(rng: RngState, lam, size=None):
    """Poisson(lam) draw(s); scalar when size is None."""
    lam_arr = np.asarray(lam, dtype=np.float64)
    if np.any(lam_arr <= 0):
        raise DomainError("Poisson rate must be strictly positive")
    out = rng.poisson(lam_arr, size=size)
    return out if size is not None or lam_arr.ndim else int(out)
