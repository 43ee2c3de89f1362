"""Independent numerical oracles for expectations under Gaussians.

Nothing here imports the package's estimators; expectations come from
adaptive quadrature or Gauss-Hermite rules and derivatives from central
differences of those expectations.
"""

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate, stats


def expect_1d(f, mu, sigma):
    """``E[f(x)]`` for ``x ~ N(mu, sigma^2)`` by adaptive quadrature split at the mean and at 0."""
    dens = lambda x: f(x) * stats.norm.pdf(x, mu, sigma)
    cuts = sorted({-np.inf, min(mu, 0.0), max(mu, 0.0), np.inf})
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if lo == hi:
            continue
        total += integrate.quad(dens, lo, hi, limit=400, epsabs=1e-13, epsrel=1e-13)[0]
    return total


def fd_moments_1d(f, mu, sigma, h=1e-4):
    """Central differences of ``E[f]`` in the mean and in the scale."""
    d_mu = (expect_1d(f, mu + h, sigma) - expect_1d(f, mu - h, sigma)) / (2 * h)
    d_sigma = (expect_1d(f, mu, sigma + h) - expect_1d(f, mu, sigma - h)) / (2 * h)
    return d_mu, d_sigma


def expect_gh(f, mean, scale, nodes=60):
    """Tensor-product Gauss-Hermite expectation of a vectorized ``f`` over ``N(mean, diag(scale^2))``."""
    mean = np.asarray(mean, dtype=float)
    scale = np.asarray(scale, dtype=float)
    z, w = hermegauss(nodes)
    w = w / np.sqrt(2 * np.pi)
    grids = np.meshgrid(*([z] * mean.size), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1) * scale + mean
    weights = np.prod(np.meshgrid(*([w] * mean.size), indexing="ij"), axis=0).ravel()
    return float(weights @ f(pts))


def fd_gradient_gh(f, mean, scale, h=1e-5, nodes=60):
    """Central-difference gradient of the Gauss-Hermite expectation, ordered (means, scales)."""
    flat = np.concatenate([mean, scale]).astype(float)
    n = len(mean)
    g = np.empty_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (expect_gh(f, up[:n], up[n:], nodes) - expect_gh(f, dn[:n], dn[n:], nodes)) / (2 * h)
    return g


def central_difference(fun, x, h=1e-6):
    """Central-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        up, dn = x.copy(), x.copy()
        up[idx] += h
        dn[idx] -= h
        g[idx] = (fun(up) - fun(dn)) / (2 * h)
    return g
