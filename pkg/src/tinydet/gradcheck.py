"""Central-finite-difference gradient checking for tensor-to-scalar maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GradCheckError, ShapeError
from .tensor import Tape, Tensor, backward

ABS_FLOOR = 1e-8  # absolute fallback: differences at or below this count as zero


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    coords_checked: int

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return f"max_rel_err={self.max_rel_err:.3e} over {self.coords_checked} coords: {status}"


def _scalar_value(t):
    if not isinstance(t, Tensor) or t.shape != (1, 1, 1, 1):
        raise ShapeError("grad_check functions must return a scalar [1,1,1,1] tensor")
    return t.item()


def grad_check(function, x, epsilon: float = 1e-4, tolerance: float = 1e-3,
               max_coords=None, rng=None) -> GradCheckReport:
    """Compare the taped gradient of `function` at `x` against central differences.

    `function` maps one Tensor to a scalar Tensor and must be deterministic
    and pure; any other inputs it needs are closed over as constants. Each
    coordinate of `x` is perturbed by +/- epsilon and the numerical slope is
    compared with the analytic gradient. The relative error uses
    |a - n| / max(|a|, |n|), with differences at or below 1e-8 treated as
    exact (absolute fallback near zero). When `max_coords` is given, a
    random subset of coordinates of that size is checked instead of all.
    """
    if not (0.0 < epsilon <= 1e-2):
        raise ConfigError(f"epsilon must lie in (0, 1e-2]; got {epsilon}")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if x0.ndim != 4:
        raise ShapeError(f"grad_check input must be rank-4; got shape {x0.shape}")

    # a double evaluation that disagrees bitwise means the map is not a function
    v1 = _scalar_value(function(Tensor(x0.copy())))
    v2 = _scalar_value(function(Tensor(x0.copy())))
    if v1 != v2:
        raise GradCheckError(f"function is non-deterministic: {v1!r} vs {v2!r} on identical input")

    tape = Tape()
    xt = Tensor(x0.copy(), tape)
    out = function(xt)
    if not isinstance(out, Tensor) or out.tape is not tape:
        raise GradCheckError("function output is not recorded on the probe tape")
    _scalar_value(out)
    backward(tape, out)
    analytic = xt.grad

    coords = list(np.ndindex(x0.shape))
    if max_coords is not None and max_coords < len(coords):
        rng = rng if rng is not None else np.random.default_rng(0)
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(picks)]

    max_rel = 0.0
    for idx in coords:
        xp = x0.copy()
        xp[idx] += epsilon
        f_plus = _scalar_value(function(Tensor(xp)))
        xp[idx] -= 2.0 * epsilon
        f_minus = _scalar_value(function(Tensor(xp)))
        numeric = (f_plus - f_minus) / (2.0 * epsilon)
        a = analytic[idx]
        diff = abs(a - numeric)
        if diff <= ABS_FLOOR:
            continue
        rel = diff / max(abs(a), abs(numeric))
        max_rel = max(max_rel, rel)

    return GradCheckReport(max_rel_err=max_rel, passed=max_rel <= tolerance,
                           coords_checked=len(coords))
