"""Peak GPU memory forecasting from per-iteration allocator samples.

Two linear trends are fitted on every iteration: requested bytes (with the
constant library workspace taken out) and the inverse reuse ratio. The
forecast peak is the largest physical demand implied by the requested-memory
upper confidence bound divided by the inverse reuse point estimate, scanned
from the current iteration to the horizon, with workspace and CUDA context
added back as constants.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import OutOfOrderSample, ParseError

DEFAULT_Z = 2.326  # one-sided 99%
DEFAULT_EPSILON = 0.01
DEFAULT_K = 3
DEFAULT_N_MIN = 5
DEFAULT_HORIZON = 1000


@dataclass(frozen=True)
class IterationSample:
    iteration: int
    requested_bytes: float
    reuse_ratio: float = 1.0

    def __post_init__(self):
        if self.iteration < 1:
            raise ValueError("iteration is 1-based")
        if self.requested_bytes < 0:
            raise ValueError("requested_bytes must be >= 0")
        if not 0 < self.reuse_ratio <= 1:
            raise ValueError(f"reuse_ratio must be in (0, 1], got {self.reuse_ratio}")

    @property
    def inverse_reuse(self) -> float:
        return 1.0 / self.reuse_ratio


def physical_bytes(sample: IterationSample, workspace_bytes: int = 0) -> float:
    """Bytes actually resident for one iteration, context excluded."""
    tracked = max(sample.requested_bytes - workspace_bytes, 0.0)
    return tracked * sample.reuse_ratio + min(workspace_bytes, sample.requested_bytes)


@dataclass(frozen=True)
class TrendModel:
    a: float
    b: float
    sigma: float
    n: int

    def point(self, t):
        return self.a * t + self.b


def fit_linear(series: Iterable[tuple[float, float]]) -> TrendModel:
    """Ordinary least squares of value on t.

    sigma is the residual standard deviation with n - 2 degrees of freedom,
    0 when n <= 2.
    """
    pts = np.asarray(list(series), dtype=float)
    if pts.size == 0:
        raise ValueError("fit_linear needs at least one point")
    t, v = pts[:, 0], pts[:, 1]
    n = len(t)
    if n == 1:
        return TrendModel(0.0, float(v[0]), 0.0, 1)
    tbar, vbar = t.mean(), v.mean()
    dt = t - tbar
    sxx = float(dt @ dt)
    a = float(dt @ (v - vbar)) / sxx if sxx > 0 else 0.0
    b = float(vbar - a * tbar)
    if n <= 2:
        return TrendModel(a, b, 0.0, n)
    resid = v - (a * t + b)
    sigma = math.sqrt(float(resid @ resid) / (n - 2))
    return TrendModel(a, b, sigma, n)


def upper_bound(model: TrendModel, t, z: float = DEFAULT_Z):
    """a*t + b + z*sigma, floored at zero. Vectorises over ``t``."""
    return np.maximum(model.a * np.asarray(t, dtype=float) + model.b + z * model.sigma, 0.0)


@dataclass(frozen=True)
class StaticOverheads:
    workspace_bytes: int = 0
    context_bytes: int = 0

    def __post_init__(self):
        if self.workspace_bytes < 0 or self.context_bytes < 0:
            raise ValueError("overheads must be non-negative")


def predict_peak(
    mem_model: TrendModel,
    reuse_model: TrendModel,
    max_iter: int,
    z: float = DEFAULT_Z,
    overheads: StaticOverheads = StaticOverheads(),
    current: Optional[int] = None,
) -> float:
    current = mem_model.n if current is None else current
    current = max(current, 1)
    t = np.arange(current, max(max_iter, current) + 1, dtype=float)
    inv = np.maximum(reuse_model.point(t), 1.0)
    physical = upper_bound(mem_model, t, z) / inv
    return float(physical.max()) + overheads.workspace_bytes + overheads.context_bytes


def check_convergence(
    history: Sequence[float],
    epsilon: float = DEFAULT_EPSILON,
    k: int = DEFAULT_K,
    n_min: int = DEFAULT_N_MIN,
) -> bool:
    if len(history) < max(n_min, k + 1):
        return False
    tail = history[-(k + 1):]
    for prev, cur in zip(tail, tail[1:]):
        diff = abs(cur - prev)
        if diff != 0 and diff >= epsilon * abs(prev):
            return False
    return True


_WS_PAIR = re.compile(r":(\d+):(\d+)")


def estimate_workspace(config_string: str, layer_count: int = 1) -> int:
    """Workspace bytes from a ``CUBLAS_WORKSPACE_CONFIG`` style string.

    ``":4096:8"`` is eight 4096 KiB buffers; pairs are comma separated and the
    total is repeated for every layer that launches library kernels.
    """
    config_string = config_string.strip()
    if not config_string:
        return 0
    per_layer = 0
    for part in config_string.split(","):
        m = _WS_PAIR.fullmatch(part.strip())
        if m is None:
            raise ParseError(f"malformed workspace config entry {part!r}")
        per_layer += int(m.group(1)) * 1024 * int(m.group(2))
    return per_layer * layer_count


@dataclass(frozen=True)
class PredictorConfig:
    z: float = DEFAULT_Z
    epsilon: float = DEFAULT_EPSILON
    k: int = DEFAULT_K
    n_min: int = DEFAULT_N_MIN
    horizon: int = DEFAULT_HORIZON


@dataclass(frozen=True)
class MemoryForecast:
    max_iter: int
    config: PredictorConfig = PredictorConfig()
    overheads: StaticOverheads = StaticOverheads()
    mem_model: Optional[TrendModel] = None
    reuse_model: Optional[TrendModel] = None
    peak_prediction_bytes: float = 0.0
    converged: bool = False
    history: tuple[float, ...] = ()
    mem_series: tuple[tuple[int, float], ...] = field(default=(), repr=False)
    reuse_series: tuple[tuple[int, float], ...] = field(default=(), repr=False)

    @property
    def z(self) -> float:
        return self.config.z

    @property
    def iteration(self) -> int:
        return len(self.mem_series)

    def to_json(self) -> dict:
        def model(m):
            return None if m is None else {"a": m.a, "b": m.b, "sigma": m.sigma, "n": m.n}

        return {
            "max_iter": self.max_iter,
            "z": self.config.z,
            "iterations_seen": self.iteration,
            "mem_model": model(self.mem_model),
            "reuse_model": model(self.reuse_model),
            "peak_prediction_bytes": self.peak_prediction_bytes,
            "converged": self.converged,
            "history": list(self.history),
        }


def new_forecast(
    max_iter: Optional[int],
    config: PredictorConfig = PredictorConfig(),
    overheads: StaticOverheads = StaticOverheads(),
) -> MemoryForecast:
    if max_iter is None:
        max_iter = config.horizon
    return MemoryForecast(max_iter=max_iter, config=config, overheads=overheads)


def step(forecast: MemoryForecast, sample: IterationSample) -> MemoryForecast:
    """Absorb one iteration and return the refreshed forecast."""
    if sample.iteration != forecast.iteration + 1:
        raise OutOfOrderSample(
            f"expected iteration {forecast.iteration + 1}, got {sample.iteration}"
        )
    ws = forecast.overheads.workspace_bytes
    mem_series = forecast.mem_series + (
        (sample.iteration, max(sample.requested_bytes - ws, 0.0)),
    )
    reuse_series = forecast.reuse_series + ((sample.iteration, sample.inverse_reuse),)
    mem_model = fit_linear(mem_series)
    reuse_model = fit_linear(reuse_series)
    cfg = forecast.config
    peak = predict_peak(
        mem_model, reuse_model, forecast.max_iter, cfg.z, forecast.overheads, sample.iteration
    )
    history = forecast.history + (peak,)
    return replace(
        forecast,
        mem_model=mem_model,
        reuse_model=reuse_model,
        peak_prediction_bytes=peak,
        converged=check_convergence(history, cfg.epsilon, cfg.k, cfg.n_min),
        history=history,
        mem_series=mem_series,
        reuse_series=reuse_series,
    )


def run_forecast(
    samples: Iterable[IterationSample],
    max_iter: Optional[int],
    config: PredictorConfig = PredictorConfig(),
    overheads: StaticOverheads = StaticOverheads(),
) -> list[MemoryForecast]:
    """Forecast after each sample, in order."""
    fc = new_forecast(max_iter, config, overheads)
    out = []
    for s in samples:
        fc = step(fc, s)
        out.append(fc)
    return out
