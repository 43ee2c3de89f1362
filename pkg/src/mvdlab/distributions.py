"""Factorized Gaussians, auxiliary samplers and Gaussian MVD triplets.

A measure-valued derivative writes the derivative of a density with respect
to one parameter as ``c * (p_plus - p_minus)`` where both parts are proper
distributions. For a diagonal Gaussian the two decompositions are

* mean:  ``c = 1 / (sigma * sqrt(2 pi))``, positive part ``mu + sigma * W``,
  negative part ``mu - sigma * W`` with ``W`` Rayleigh (Weibull(2, sqrt 2)).
* scale: ``c = 1 / sigma``, positive part ``mu + sigma * M`` with ``M``
  double-sided Maxwell, negative part the Gaussian itself.

All samplers take an explicit ``numpy.random.Generator`` and are pure
functions of its state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

Size = Optional[Union[int, Sequence[int]]]

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
RAYLEIGH_SHAPE = 2.0
RAYLEIGH_SCALE = np.sqrt(2.0)


def _shape(size: Size) -> Tuple[int, ...]:
    if size is None:
        return ()
    if isinstance(size, (int, np.integer)):
        return (int(size),)
    return tuple(int(s) for s in size)


@dataclass(frozen=True)
class DiagGaussianParams:
    """Mean and standard deviations of an axis-aligned Gaussian."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        scale = np.atleast_1d(np.asarray(self.scale, dtype=float))
        if mean.ndim != 1 or mean.shape != scale.shape:
            raise ValueError(
                f"mean and scale must be vectors of equal length, got {mean.shape} and {scale.shape}"
            )
        if not np.all(scale > 0):
            raise ValueError("scale entries must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def flat(self) -> np.ndarray:
        """Parameters in canonical (mean-block, scale-block) order."""
        return np.concatenate([self.mean, self.scale])

    @classmethod
    def from_flat(cls, flat: np.ndarray) -> "DiagGaussianParams":
        flat = np.asarray(flat, dtype=float)
        n = flat.shape[0] // 2
        return cls(flat[:n], flat[n:])


def gaussian_sample(params: DiagGaussianParams, rng: np.random.Generator, size: Size = None) -> np.ndarray:
    """Draw ``mean + scale * z``; output shape is ``(*size, n)``."""
    z = rng.standard_normal(_shape(size) + (params.dim,))
    return params.mean + params.scale * z


def gaussian_logpdf(x: np.ndarray, params: DiagGaussianParams) -> np.ndarray:
    """Log density of the factorized Gaussian, reduced over the last axis."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (params.dim,):
        raise ValueError(f"expected trailing dimension {params.dim}, got shape {x.shape}")
    z = (x - params.mean) / params.scale
    return np.sum(-0.5 * z**2 - np.log(params.scale) - LOG_SQRT_2PI, axis=-1)


def gaussian_score(x: np.ndarray, params: DiagGaussianParams) -> np.ndarray:
    """Gradient of :func:`gaussian_logpdf` w.r.t. ``(mean, scale)``.

    Returns an array of shape ``(..., 2n)`` with the mean block first.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (params.dim,):
        raise ValueError(f"expected trailing dimension {params.dim}, got shape {x.shape}")
    diff = x - params.mean
    var = params.scale**2
    d_mean = diff / var
    d_scale = (diff**2 - var) / (var * params.scale)
    return np.concatenate([d_mean, d_scale], axis=-1)


def weibull_from_uniform(u: np.ndarray, shape: float, scale: float) -> np.ndarray:
    """Inverse-CDF transform ``scale * (-ln u)^(1/shape)`` for ``u`` in (0, 1]."""
    return scale * (-np.log(u)) ** (1.0 / shape)


def weibull_sample(shape: float, scale: float, rng: np.random.Generator, size: Size = None) -> np.ndarray:
    if shape <= 0 or scale <= 0:
        raise ValueError("Weibull shape and scale must be positive")
    # 1 - U lies in (0, 1], so the log never sees zero
    u = 1.0 - rng.random(_shape(size))
    return weibull_from_uniform(u, shape, scale)


def double_maxwell_sample(rng: np.random.Generator, size: Size = None) -> np.ndarray:
    """Sample the density ``x^2 exp(-x^2/2) / sqrt(2 pi)`` on the real line."""
    shape = _shape(size)
    z = rng.standard_normal(shape + (3,))
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return sign * np.sqrt(np.sum(z**2, axis=-1))


def maxwell_to_gaussian_couple(m: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Map a double-sided Maxwell draw to an exactly standard-normal one.

    If ``M`` is double-sided Maxwell and ``U ~ U[0, 1]`` independent, ``M * U``
    is standard normal. Reusing ``M`` makes the two samples highly correlated.
    """
    m = np.asarray(m, dtype=float)
    return m * rng.random(m.shape)


def dirichlet_symmetric_sample(n: int, concentration: float, rng: np.random.Generator) -> np.ndarray:
    if n < 1 or concentration <= 0:
        raise ValueError("need n >= 1 and concentration > 0")
    if n == 1:
        return np.ones(1)
    g = rng.gamma(concentration, size=n)
    return g / g.sum()


@dataclass(frozen=True)
class MvdTriplet:
    """Decomposition ``d p / d omega_k = constant * (p_plus - p_minus)``.

    ``parameter_index`` follows the canonical flat layout, so indices below
    ``n`` are means and indices ``n..2n-1`` are scales. Coordinates not tied
    to the parameter are drawn from the base Gaussian.
    """

    constant: float
    parameter_index: int
    params: DiagGaussianParams

    @property
    def coordinate(self) -> int:
        return self.parameter_index % self.params.dim

    @property
    def is_mean(self) -> bool:
        return self.parameter_index < self.params.dim

    def _component_draws(self, rng: np.random.Generator, shape: Tuple[int, ...]):
        mu = self.params.mean[self.coordinate]
        sigma = self.params.scale[self.coordinate]
        if self.is_mean:
            w = weibull_sample(RAYLEIGH_SHAPE, RAYLEIGH_SCALE, rng, shape)
            return mu + sigma * w, mu - sigma * w
        m = double_maxwell_sample(rng, shape)
        eps = maxwell_to_gaussian_couple(m, rng)
        return mu + sigma * m, mu + sigma * eps

    def sample_pair(self, rng: np.random.Generator, size: Size = None) -> Tuple[np.ndarray, np.ndarray]:
        """Coupled positive and negative samples, each of shape ``(*size, n)``.

        Both samples share the same Weibull/Maxwell draw and the same
        base-Gaussian values for every other coordinate.
        """
        shape = _shape(size)
        base = gaussian_sample(self.params, rng, shape)
        plus_k, minus_k = self._component_draws(rng, shape)
        plus, minus = base.copy(), base
        plus[..., self.coordinate] = plus_k
        minus[..., self.coordinate] = minus_k
        return plus, minus

    def positive_sampler(self, rng: np.random.Generator, size: Size = None) -> np.ndarray:
        return self.sample_pair(rng, size)[0]

    def negative_sampler(self, rng: np.random.Generator, size: Size = None) -> np.ndarray:
        return self.sample_pair(rng, size)[1]


def _check_index(params: DiagGaussianParams, k: int) -> None:
    if not 0 <= k < params.dim:
        raise IndexError(f"dimension index {k} out of range for n={params.dim}")


def mvd_triplet_mean(params: DiagGaussianParams, k: int) -> MvdTriplet:
    _check_index(params, k)
    c = 1.0 / (params.scale[k] * np.sqrt(2.0 * np.pi))
    return MvdTriplet(constant=float(c), parameter_index=k, params=params)


def mvd_triplet_scale(params: DiagGaussianParams, k: int) -> MvdTriplet:
    _check_index(params, k)
    return MvdTriplet(constant=float(1.0 / params.scale[k]), parameter_index=params.dim + k, params=params)


def mvd_triplets(params: DiagGaussianParams) -> list[MvdTriplet]:
    """All ``2n`` triplets in canonical parameter order."""
    n = params.dim
    return [mvd_triplet_mean(params, k) for k in range(n)] + [mvd_triplet_scale(params, k) for k in range(n)]
