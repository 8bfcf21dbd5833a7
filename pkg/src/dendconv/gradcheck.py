"""Central finite-difference checks for the analytic operator gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import ConvParams, DdcParams, Scope, conv_backward, conv_forward, ddc_backward, ddc_forward

EPS = 1e-5
TOLERANCE = 1e-4


def numeric_grad(f, x: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated in place, then restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        f_pos = f()
        x[idx] = old - eps
        f_neg = f()
        x[idx] = old
        grad[idx] = (f_pos - f_neg) / (2 * eps)
    return grad


def rel_error(a, b, floor: float = 1e-8) -> float:
    """Max elementwise |a-b| / max(|a|+|b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))


@dataclass
class GradCheckReport:
    errors: dict  # parameter group -> max relative error

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    def passed(self, tol: float = TOLERANCE) -> bool:
        return self.max_error < tol


def random_case(rng: np.random.Generator, op: str, max_dim: int = 4, max_k: int = 3):
    """Draw a small random (input, params) pair whose geometry is valid."""
    n = int(rng.integers(1, max_dim + 1))
    c_in = int(rng.integers(1, max_dim + 1))
    c_out = int(rng.integers(1, max_dim + 1))
    k = int(rng.integers(1, max_k + 1))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, k))
    h = int(rng.integers(max(1, k - 2 * padding), max_dim + 1))
    w = int(rng.integers(max(1, k - 2 * padding), max_dim + 1))
    x = rng.uniform(-1, 1, (n, c_in, h, w))
    base = ConvParams(
        rng.uniform(-1, 1, (c_out, c_in, k, k)), rng.uniform(-1, 1, c_out), stride, padding
    )
    if op == "conv":
        return x, base
    params = DdcParams(
        base,
        alpha=float(rng.uniform(-0.5, 0.5)),
        alpha_learnable=True,
        scope=Scope.PER_CHANNEL if rng.random() < 0.5 else Scope.FULL_PATCH,
        normalize_s=bool(rng.random() < 0.5),
    )
    return x, params


def check_operator(x, params, op: str, rng: np.random.Generator, fault: float = 0.0) -> GradCheckReport:
    """Compare analytic gradients of ``sum(r * op(x))`` (random projection ``r``) with finite differences.

    ``fault`` adds a constant to the analytic input gradient; used as a negative control.
    """
    x = np.array(x, dtype=np.float64)
    forward = ddc_forward if op == "ddc" else conv_forward
    out, cache = forward(x, params, training=True)
    r = rng.standard_normal(out.shape)
    if op == "ddc":
        gx, gw, gb, ga = ddc_backward(r, cache, params)
        base = params.base
    else:
        gx, gw, gb = conv_backward(r, cache, params)
        ga, base = None, params
    gx = gx + fault

    def loss():
        return float(np.sum(r * forward(x, params)[0]))

    errors = {
        "input": rel_error(gx, numeric_grad(loss, x)),
        "weights": rel_error(gw, numeric_grad(loss, base.weights)),
        "bias": rel_error(gb, numeric_grad(loss, base.bias)),
    }
    if ga is not None:
        holder = np.array([params.alpha])

        def loss_alpha():
            params.alpha = float(holder[0])
            return loss()

        errors["alpha"] = rel_error(ga, numeric_grad(loss_alpha, holder))
        params.alpha = float(holder[0])
    return GradCheckReport(errors)


def run_trials(op: str, trials: int, seed: int, fault: float = 0.0) -> GradCheckReport:
    """Worst-case relative error per parameter group over ``trials`` random cases."""
    rng = np.random.default_rng(seed)
    worst: dict = {}
    for _ in range(trials):
        x, params = random_case(rng, op)
        report = check_operator(x, params, op, rng, fault)
        for name, err in report.errors.items():
            worst[name] = max(worst.get(name, 0.0), err)
    return GradCheckReport(worst)
