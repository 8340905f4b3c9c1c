"""Poincare-ball operations: Mobius addition, exponential maps, distance.

Points live in the ball ``{x : c * ||x||^2 < 1}`` for curvature parameter
``c > 0`` (default 0.1).  Batched inputs are treated row-independently
along the last axis; every operation is differentiable through the tensor
module.  Convention notes:

* ``exp_map_0`` uses ``tanh(sqrt(c)||f||)`` and is the canonical map for
  the pipeline.
* ``exp_map_v`` keeps the halved tanh argument of its printed form; at
  v = 0 it therefore disagrees with ``exp_map_0`` by a factor of two
  inside tanh.  It is provided as-is and unused elsewhere.
* the inverse-tanh argument is clamped to ``1 - EPS_BALL`` since artanh
  diverges (and its gradient explodes) at 1.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

DEFAULT_CURVATURE = 0.1
EPS_BALL = 1e-5
# tanh saturates to exactly 1.0 in float64 past ~19; cap the argument so
# exp-map outputs stay strictly inside the ball without projection.
TANH_CAP = 15.0


class OutsideBall(T.TensorError):
    pass


def check_curvature(c: float) -> float:
    c = float(c)
    if not c > 0:
        raise ValueError(f"curvature must be positive, got {c}")
    return c


def _check_in_ball(x: Tensor, c: float, op: str) -> None:
    sq = np.sum(x.data * x.data, axis=-1)
    if np.any(c * sq >= 1.0 - 1e-9):
        raise OutsideBall(f"{op}: point with c*||x||^2 >= 1 - 1e-9")


def _sqnorm(x: Tensor) -> Tensor:
    return T.sum_(x * x, axes=[-1], keepdims=True)


def _dot(a: Tensor, b: Tensor) -> Tensor:
    return T.sum_(a * b, axes=[-1], keepdims=True)


def mobius_add(v: Tensor, w: Tensor, c: float = DEFAULT_CURVATURE) -> Tensor:
    """Gyrogroup addition on the ball; result re-projected if rounding
    pushed it across the boundary."""
    c = check_curvature(c)
    _check_in_ball(v, c, "mobius_add")
    _check_in_ball(w, c, "mobius_add")
    v2 = _sqnorm(v)
    w2 = _sqnorm(w)
    vw = _dot(v, w)
    num = (1.0 + 2.0 * c * vw + c * w2) * v + (1.0 - c * v2) * w
    den = 1.0 + 2.0 * c * vw + (c * c) * v2 * w2
    out = num / den
    return project_to_ball(out, c, margin_only=True)


def exp_map_0(f: Tensor, c: float = DEFAULT_CURVATURE) -> Tensor:
    """Map a tangent vector at the origin onto the ball.

    ``tanh(sqrt(c)||f||) * f / (sqrt(c)||f||)``; the ||f|| -> 0 limit is
    the identity, realised by the guarded denominator.
    """
    c = check_curvature(c)
    sc = np.sqrt(c)
    n = T.norm(f, axis=-1, keepdims=True)
    scn = T.clamp(sc * n, hi=TANH_CAP)
    scale = T.tanh(scn) / T.clamp(sc * n, lo=T.NORM_EPS)
    return f * scale


def exp_map_v(v: Tensor, f: Tensor, c: float = DEFAULT_CURVATURE) -> Tensor:
    """Exponential map centered at ``v``, with the halved tanh argument of
    its printed form (see module docstring)."""
    c = check_curvature(c)
    _check_in_ball(v, c, "exp_map_v")
    sc = np.sqrt(c)
    n = T.norm(f, axis=-1, keepdims=True)
    scn = T.clamp(0.5 * sc * n, hi=TANH_CAP)
    scale = T.tanh(scn) / T.clamp(sc * n, lo=T.NORM_EPS)
    return mobius_add(v, f * scale, c)


def distance(z1: Tensor, z2: Tensor, c: float = DEFAULT_CURVATURE) -> Tensor:
    """Geodesic distance ``(2/sqrt(c)) * artanh(sqrt(c) ||-z1 (+) z2||)``,
    row-wise for batched points."""
    c = check_curvature(c)
    sc = np.sqrt(c)
    w = mobius_add(-z1, z2, c)
    arg = T.clamp(sc * T.norm(w, axis=-1), hi=1.0 - EPS_BALL)
    return (2.0 / sc) * artanh(arg)


def artanh(x: Tensor) -> Tensor:
    """Inverse hyperbolic tangent via 0.5*ln((1+x)/(1-x)); callers clamp
    the argument away from 1."""
    return 0.5 * (T.ln(1.0 + x) - T.ln(1.0 - x))


def project_to_ball(x: Tensor, c: float = DEFAULT_CURVATURE,
                    margin_only: bool = False) -> Tensor:
    """Rescale rows with ``c||x||^2 >= (1 - EPS_BALL)^2`` back to the
    boundary margin; interior rows pass through unchanged.

    ``margin_only`` skips the work when every row is already interior
    (the common case after an exponential map).
    """
    c = check_curvature(c)
    T._check_finite(x.data, "project_to_ball")
    sc = np.sqrt(c)
    max_norm = (1.0 - EPS_BALL) / sc
    if margin_only:
        sq = np.sum(x.data * x.data, axis=-1)
        if not np.any(sq >= max_norm * max_norm):
            return x
    n = T.norm(x, axis=-1, keepdims=True)
    # clamp(scale, hi=1) leaves interior rows untouched with unit gradient.
    scale = T.clamp(Tensor(max_norm) / T.clamp(n, lo=T.NORM_EPS), hi=1.0)
    return x * scale
