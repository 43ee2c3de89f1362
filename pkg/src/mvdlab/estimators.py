"""Score-function, reparametrization and MVD gradient estimators.

Each estimator returns an unbiased estimate of ``grad_omega E_{p(x; omega)}[f(x)]``
for a diagonal Gaussian ``p``, with ``omega = (mean, scale)`` flattened in
that order. Function oracles are vectorized: ``evaluate`` maps an array of
shape ``(..., n)`` to ``(...)`` and ``input_gradient`` to ``(..., n)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .distributions import (
    DiagGaussianParams,
    gaussian_sample,
    gaussian_score,
    mvd_triplets,
)

ESTIMATORS = ("sf", "reparam", "mvd")


class UnsupportedOracleError(TypeError):
    """Raised when an estimator needs an input gradient the oracle lacks."""


@dataclass
class FunctionOracle:
    evaluate: Callable[[np.ndarray], np.ndarray]
    input_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def differentiable(self) -> bool:
        return self.input_gradient is not None


class CountingOracle(FunctionOracle):
    """Wraps an oracle and counts every point it is asked to evaluate."""

    def __init__(self, inner: FunctionOracle):
        self.inner = inner
        self.evaluations = 0
        self.gradient_evaluations = 0
        super().__init__(self._evaluate, self._gradient if inner.differentiable else None)

    def _evaluate(self, x):
        x = np.asarray(x, dtype=float)
        self.evaluations += int(np.prod(x.shape[:-1]))
        return self.inner.evaluate(x)

    def _gradient(self, x):
        x = np.asarray(x, dtype=float)
        self.gradient_evaluations += int(np.prod(x.shape[:-1]))
        return self.inner.input_gradient(x)


@dataclass
class GradEstimate:
    """Averaged gradient plus the sample variance of its per-sample terms.

    ``per_coordinate_variance`` is the unbiased variance of the ``samples``
    individual terms, so the standard error of ``gradient`` is
    ``sqrt(per_coordinate_variance / samples)``.
    """

    gradient: np.ndarray
    per_coordinate_variance: np.ndarray
    function_evaluations: int
    samples: int

    @property
    def standard_error(self) -> np.ndarray:
        return np.sqrt(self.per_coordinate_variance / self.samples)


def _summarize(terms: np.ndarray, evaluations: int) -> GradEstimate:
    m = terms.shape[0]
    var = terms.var(axis=0, ddof=1) if m > 1 else np.zeros(terms.shape[1])
    return GradEstimate(terms.mean(axis=0), var, evaluations, m)


def optimal_baseline_loo(values: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Leave-one-out estimate of ``E[f s_k^2] / E[s_k^2]``.

    Args:
        values: ``(M,)`` function values.
        scores: ``(M, d)`` score vectors.

    Returns:
        ``(M, d)`` baselines; entry ``(i, k)`` uses every sample except ``i``.
        Where the held-out denominator vanishes the baseline falls back to 0.
    """
    s2 = scores**2
    num = (values[:, None] * s2).sum(axis=0) - values[:, None] * s2
    den = s2.sum(axis=0) - s2
    safe = den > 0
    return np.where(safe, num / np.where(safe, den, 1.0), 0.0)


def sf_gradient(
    oracle: FunctionOracle,
    params: DiagGaussianParams,
    samples: int,
    rng: np.random.Generator,
    baseline_mode: str = "optimal",
) -> GradEstimate:
    if baseline_mode not in ("none", "optimal"):
        raise ValueError(f"unknown baseline mode {baseline_mode!r}")
    if baseline_mode == "optimal" and samples < 2:
        raise ValueError("the leave-one-out baseline needs at least 2 samples")
    x = gaussian_sample(params, rng, samples)
    f = np.asarray(oracle.evaluate(x), dtype=float)
    scores = gaussian_score(x, params)
    if baseline_mode == "optimal":
        b = optimal_baseline_loo(f, scores)
    else:
        b = 0.0
    terms = (f[:, None] - b) * scores
    return _summarize(terms, samples)


def reparam_gradient(
    oracle: FunctionOracle,
    params: DiagGaussianParams,
    samples: int,
    rng: np.random.Generator,
) -> GradEstimate:
    if not oracle.differentiable:
        raise UnsupportedOracleError("the reparametrization estimator requires an input gradient")
    eps = rng.standard_normal((samples, params.dim))
    grad_x = np.asarray(oracle.input_gradient(params.mean + params.scale * eps), dtype=float)
    terms = np.concatenate([grad_x, grad_x * eps], axis=1)
    return _summarize(terms, samples)


def mvd_gradient(
    oracle: FunctionOracle,
    params: DiagGaussianParams,
    samples: int,
    rng: np.random.Generator,
    coupled: bool = True,
) -> GradEstimate:
    """MVD estimate over all ``2n`` parameters with ``samples`` pairs each.

    With ``coupled=False`` the negative sample of every pair is drawn
    independently of the positive one; this exists for variance comparisons.
    Pairs whose positive and negative points coincide contribute exactly zero
    and are not evaluated.
    """
    if samples < 1:
        raise ValueError("need at least one sample pair")
    triplets = mvd_triplets(params)
    plus, minus, consts = [], [], []
    for t in triplets:
        xp, xm = t.sample_pair(rng, samples)
        if not coupled:
            xm = t.sample_pair(rng, samples)[1]
        plus.append(xp)
        minus.append(xm)
        consts.append(t.constant)
    plus = np.stack(plus)
    minus = np.stack(minus)
    consts = np.asarray(consts)

    distinct = np.any(plus != minus, axis=-1)
    diff = np.zeros(distinct.shape)
    if distinct.any():
        points = np.concatenate([plus[distinct], minus[distinct]])
        values = np.asarray(oracle.evaluate(points), dtype=float)
        half = values.shape[0] // 2
        diff[distinct] = values[:half] - values[half:]
    terms = (consts[:, None] * diff).T
    return _summarize(terms, 2 * int(distinct.sum()))


def get_estimator(name: str) -> Callable[..., GradEstimate]:
    try:
        return {"sf": sf_gradient, "reparam": reparam_gradient, "mvd": mvd_gradient}[name]
    except KeyError:
        raise ValueError(f"unknown estimator {name!r}; choose from {ESTIMATORS}") from None


def estimator_variance_study(
    oracle: FunctionOracle,
    params: DiagGaussianParams,
    estimator: Callable[..., GradEstimate],
    samples: int,
    repetitions: int,
    rng: np.random.Generator,
    **kwargs,
) -> np.ndarray:
    """Unbiased per-coordinate variance across independent estimates.

    Each repetition gets its own child generator spawned from ``rng``, so the
    result does not depend on how repetitions are scheduled.
    """
    if repetitions < 2:
        raise ValueError("need at least 2 repetitions")
    children = rng.spawn(repetitions)
    grads = np.stack([estimator(oracle, params, samples, child, **kwargs).gradient for child in children])
    return grads.var(axis=0, ddof=1)
