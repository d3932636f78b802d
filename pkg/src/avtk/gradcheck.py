"""Central-difference gradient checking for scalar losses."""

from __future__ import annotations

import numpy as np

from .autodiff import ContractError, Tensor


def grad_check(f, x, h=1e-3):
    """Max relative error between the analytic gradient of ``f`` at ``x`` and
    central differences.

    ``f`` maps a Tensor to a scalar Tensor.  The whole check runs in float64:
    the relative error is |analytic - fd| / max(1, |fd|), maximized over
    coordinates.
    """
    x0 = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    y = f(xt)
    if not isinstance(y, Tensor) or y.data.size != 1:
        raise ContractError("grad_check requires a scalar-valued computation")
    y.backward()
    analytic = np.zeros_like(x0) if xt.grad is None else np.asarray(xt.grad, dtype=np.float64)

    worst = 0.0
    flat = x0.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(x0.copy())).data.reshape(()))
        flat[i] = orig - h
        fm = float(f(Tensor(x0.copy())).data.reshape(()))
        flat[i] = orig
        fd = (fp - fm) / (2.0 * h)
        err = abs(analytic.reshape(-1)[i] - fd) / max(1.0, abs(fd))
        worst = max(worst, err)
    return worst


def grad_check_params(f, params, h=1e-3, max_coords=None, rng=None):
    """Run ``grad_check`` over a dict of parameter tensors.

    ``f(params64)`` must return a scalar Tensor built from the float64 copies
    it is handed.  With ``max_coords`` set, only a random subset of coordinates
    per tensor is finite-differenced (the analytic gradient is still exact).
    Returns {name: max relative error}.
    """
    base = {k: np.asarray(v.data if isinstance(v, Tensor) else v, dtype=np.float64)
            for k, v in params.items()}
    p64 = {k: Tensor(v.copy(), requires_grad=True) for k, v in base.items()}
    y = f(p64)
    if y.data.size != 1:
        raise ContractError("grad_check_params requires a scalar-valued computation")
    y.backward()

    errors = {}
    for name, t in p64.items():
        analytic = np.zeros_like(base[name]) if t.grad is None else t.grad
        flat = base[name].reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(_eval(f, base).data.reshape(()))
            flat[i] = orig - h
            fm = float(_eval(f, base).data.reshape(()))
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            worst = max(worst, abs(analytic.reshape(-1)[i] - fd) / max(1.0, abs(fd)))
        errors[name] = worst
    return errors


def _eval(f, base):
    return f({k: Tensor(v.copy()) for k, v in base.items()})
