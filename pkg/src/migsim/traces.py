"""Synthetic per-iteration memory traces and the trace CSV format."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .errors import ParseError
from .predictor import IterationSample

TRACE_HEADER = ("iteration", "requested_bytes", "reuse_ratio")


def gen_trace(
    a: float,
    b: float,
    sigma_noise: float = 0.0,
    reuse_params: Optional[tuple[float, float]] = None,
    n: int = 1,
    seed: int = 0,
) -> list[IterationSample]:
    """Linear requested-memory trace with Gaussian noise.

    ``reuse_params`` is ``(inv_a, inv_b)``: the reuse ratio at iteration t is
    ``1 / (inv_a * t + inv_b)`` clipped into (0, 1]. None means no reuse.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma_noise < 0:
        raise ValueError("sigma_noise must be >= 0")
    rng = np.random.default_rng(seed)
    t = np.arange(1, n + 1, dtype=float)
    noise = rng.normal(0.0, sigma_noise, n) if sigma_noise > 0 else np.zeros(n)
    requested = np.maximum(a * t + b + noise, 0.0)
    if reuse_params is None:
        reuse = np.ones(n)
    else:
        inv_a, inv_b = reuse_params
        reuse = 1.0 / np.maximum(inv_a * t + inv_b, 1.0)
    return [
        IterationSample(int(i), float(r), float(u)) for i, r, u in zip(t, requested, reuse)
    ]


def write_trace_csv(samples: Iterable[IterationSample], path: Union[str, Path, io.TextIOBase]):
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for s in samples:
            w.writerow([s.iteration, repr(float(s.requested_bytes)), repr(float(s.reuse_ratio))])

    if isinstance(path, (str, Path)):
        with open(path, "w", newline="") as fh:
            _write(fh)
    else:
        _write(path)


def read_trace_csv(path: Union[str, Path]) -> list[IterationSample]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot read trace {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames[:3]) != TRACE_HEADER:
            raise ParseError(f"{path}: header must be {','.join(TRACE_HEADER)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(
                    IterationSample(
                        int(row["iteration"]),
                        float(row["requested_bytes"]),
                        float(row["reuse_ratio"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return out
