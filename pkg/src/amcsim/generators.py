"""Random test-matrix ensembles for the validation experiments."""

from __future__ import annotations

import numpy as np


def wishart(n: int, rng: np.random.Generator) -> np.ndarray:
    """W = X X^T / n with X an n-by-n standard-normal sample (symmetric PSD)."""
    if n < 1:
        raise ValueError("dimension must be >= 1")
    x = rng.standard_normal((n, n))
    return x @ x.T / n


def gram(n: int, rng: np.random.Generator) -> np.ndarray:
    """Gram matrix of unit-normalized random rows: symmetric, unit diagonal."""
    if n < 1:
        raise ValueError("dimension must be >= 1")
    x = rng.standard_normal((n, n))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    g = x @ x.T
    np.fill_diagonal(g, 1.0)
    return g


def regression_problem(
    m: int, n: int, rng: np.random.Generator, noise: float = 0.1
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Standard-normal design with a planted coefficient vector.

    Returns (design, observations, coefficients) with
    observations = design @ coefficients + noise * N(0, 1).
    """
    if m < 1 or n < 1:
        raise ValueError("dimensions must be >= 1")
    design = rng.standard_normal((m, n))
    coef = rng.standard_normal(n)
    obs = design @ coef + noise * rng.standard_normal(m)
    return design, obs, coef


def generate_matrix(kind: str, dims, seed: int) -> np.ndarray:
    """Deterministic generator dispatch; regression returns the design matrix."""
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in np.atleast_1d(dims))
    if kind == "wishart":
        return wishart(dims[0], rng)
    if kind == "gram":
        return gram(dims[0], rng)
    if kind == "regression":
        if len(dims) != 2:
            raise ValueError("regression needs (m, n) dimensions")
        return regression_problem(dims[0], dims[1], rng)[0]
    raise ValueError(f"unknown generator kind {kind!r}")
