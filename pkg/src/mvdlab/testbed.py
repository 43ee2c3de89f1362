"""Gradient ascent on Gaussian-smoothed 2-D test functions."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import numpy as np

from .distributions import DiagGaussianParams, gaussian_sample
from .estimators import FunctionOracle, get_estimator

SCALE_FLOOR = 1e-3
STYBLINSKI_ARGMAX = -2.903534027771178
STYBLINSKI_MAX_PER_DIM = 39.16616570377142


@dataclass(frozen=True)
class TestFunction:
    name: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    input_gradient: Callable[[np.ndarray], np.ndarray]
    known_maximizer: np.ndarray
    known_maximum: float

    __test__ = False  # not a pytest class

    def oracle(self) -> FunctionOracle:
        return FunctionOracle(self.evaluate, self.input_gradient)


def quadratic(x, center=(0.0, 0.0)):
    x = np.asarray(x, dtype=float)
    return -np.sum((x - np.asarray(center)) ** 2, axis=-1)


def quadratic_gradient(x, center=(0.0, 0.0)):
    x = np.asarray(x, dtype=float)
    return -2.0 * (x - np.asarray(center))


def styblinski_tang(x):
    """Negated Styblinski-Tang, so the global optimum is a maximum."""
    x = np.asarray(x, dtype=float)
    return -0.5 * np.sum(x**4 - 16.0 * x**2 + 5.0 * x, axis=-1)


def styblinski_tang_gradient(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * (4.0 * x**3 - 32.0 * x + 5.0)


TEST_FUNCTIONS = {
    "quadratic": TestFunction("quadratic", quadratic, quadratic_gradient, np.zeros(2), 0.0),
    "styblinski": TestFunction(
        "styblinski",
        styblinski_tang,
        styblinski_tang_gradient,
        np.full(2, STYBLINSKI_ARGMAX),
        2 * STYBLINSKI_MAX_PER_DIM,
    ),
}


def load_default_config() -> dict:
    text = resources.files("mvdlab.configs").joinpath("testfuncs.json").read_text()
    return json.loads(text)


class AscentDiverged(RuntimeError):
    def __init__(self, message: str, trace: "AscentTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass
class AscentTrace:
    seed: Optional[int]
    means: list = field(default_factory=list)
    scales: list = field(default_factory=list)
    objectives: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.means) - 1

    def append(self, params: DiagGaussianParams, objective: float) -> None:
        self.means.append(params.mean.copy())
        self.scales.append(params.scale.copy())
        self.objectives.append(float(objective))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = len(self.means[0]) if self.means else 0
        w.writerow(["step"] + [f"mean_{i}" for i in range(n)] + [f"scale_{i}" for i in range(n)] + ["objective_mc"])
        for t, (m, s, o) in enumerate(zip(self.means, self.scales, self.objectives)):
            w.writerow([t] + [repr(float(v)) for v in m] + [repr(float(v)) for v in s] + [repr(o)])
        return buf.getvalue()


def run_ascent(
    fn: TestFunction,
    estimator: str,
    init: DiagGaussianParams,
    steps: int,
    samples: int,
    step_size: float,
    rng: np.random.Generator,
    seed: Optional[int] = None,
) -> AscentTrace:
    """Plain gradient ascent on ``(mean, scale)`` of ``E_{N(mean, scale)}[fn]``.

    The objective column of the trace is a Monte Carlo estimate from a
    separate stream, so it does not perturb the estimator's samples.
    Scales are projected back onto ``[SCALE_FLOOR, inf)`` after every step.

    Raises:
        AscentDiverged: on a non-finite gradient or objective; the partial
            trace is attached.
    """
    if estimator == "sf" and samples < 2:
        raise ValueError("SF with the optimal baseline needs at least 2 samples per step")
    estimate = get_estimator(estimator)
    grad_rng, obj_rng = rng.spawn(2)
    oracle = fn.oracle()
    params = init
    trace = AscentTrace(seed)

    def objective(p):
        return float(np.mean(fn.evaluate(gaussian_sample(p, obj_rng, samples))))

    trace.append(params, objective(params))
    for _ in range(steps):
        g = estimate(oracle, params, samples, grad_rng).gradient
        if not np.all(np.isfinite(g)):
            raise AscentDiverged(f"non-finite gradient at step {trace.steps}", trace)
        flat = params.flat + step_size * g
        n = params.dim
        params = DiagGaussianParams(flat[:n], np.maximum(flat[n:], SCALE_FLOOR))
        obj = objective(params)
        if not np.isfinite(obj):
            raise AscentDiverged(f"non-finite objective at step {trace.steps + 1}", trace)
        trace.append(params, obj)
    return trace
