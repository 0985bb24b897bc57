from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .rng import rng_stream
from .tensor import Tape, Tensor


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: tuple[str, tuple] | None
    n_checked: int
    tape_grads: dict[str, np.ndarray]

    def __float__(self) -> float:
        return self.max_rel_error


def relative_error(g_tape: float, g_fd: float) -> float:
    return abs(g_tape - g_fd) / max(1e-8, abs(g_tape) + abs(g_fd))


def grad_check(f: Callable[[dict[str, Tensor]], Tensor], params: dict[str, np.ndarray],
               eps: float = 1e-4, n_coords: int | None = None, seed: int = 0,
               names: list[str] | None = None) -> GradCheckResult:
    """Compare tape gradients of a scalar function against central differences.

    ``f`` receives a dict of tensors keyed like ``params``. The checked
    quantity is the sum of its output's components; differences are taken
    per component before summing, so a small component is not lost to
    rounding in a large total. With ``n_coords`` set, that many coordinates are sampled
    uniformly (by flat position over all checked parameters); otherwise every
    coordinate is probed.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape()
    out = f(tape.watch_all(params))
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError(f"non-finite function value {out.data}")
    grads = tape.backward(out, seed=np.ones_like(out.data))
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite tape gradient for {k}")

    names = list(params) if names is None else list(names)
    sizes = np.array([params[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    if n_coords is None or n_coords >= total:
        flat = np.arange(total)
    else:
        flat = np.sort(rng_stream(seed, "gradcheck").permutation(total)[:n_coords])

    def value(p) -> np.ndarray:
        v = np.asarray(f({k: Tensor(a) for k, a in p.items()}).data, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(f"non-finite function value {v}")
        return v

    worst, worst_at = 0.0, None
    for pos in flat:
        i = int(np.searchsorted(offsets, pos, side="right") - 1)
        name = names[i]
        idx = np.unravel_index(int(pos - offsets[i]), params[name].shape)
        base = params[name][idx]
        params[name][idx] = base + eps
        fp = value(params)
        params[name][idx] = base - eps
        fm = value(params)
        params[name][idx] = base
        g_fd = math.fsum(np.ravel(fp - fm)) / (2.0 * eps)
        err = relative_error(float(grads[name][idx]), g_fd)
        if err > worst or worst_at is None:
            worst, worst_at = err, (name, tuple(int(j) for j in idx))
    return GradCheckResult(worst, worst_at, len(flat), grads)
