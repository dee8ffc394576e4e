"""Central finite-difference oracle for end-to-end gradient verification."""

from __future__ import annotations

import numpy as np

from .backbone import omega_of_rho, rho_of_x
from .spectral import solve_master, track_mode
from .ssm import compute_ssm


def backbone_response(
    builder,
    mu,
    *,
    x0: float,
    dof_index: int,
    order: int,
    n_theta: int = 128,
    reference=None,
) -> float:
    """Omega at fixed target amplitude for the model built at mu.

    builder(mu) -> MechModel. The master mode is tracked against `reference`
    when given (recommended for finite differencing), else mode 0 is used.
    """
    model = builder(np.asarray(mu, dtype=float))
    if reference is not None:
        master = track_mode(model, reference)
    else:
        master = solve_master(model, 0)
    exp = compute_ssm(model, master, order)
    rho = rho_of_x(exp, dof_index, x0, n_theta)
    return omega_of_rho(exp, rho)


def fd_gradient(fun, mu0, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences with per-component step rel_step*(1+|mu_i|)."""
    mu0 = np.asarray(mu0, dtype=float)
    grad = np.zeros_like(mu0)
    for i in range(len(mu0)):
        h = rel_step * (1.0 + abs(mu0[i]))
        up = mu0.copy()
        up[i] += h
        dn = mu0.copy()
        dn[i] -= h
        grad[i] = (fun(up) - fun(dn)) / (2.0 * h)
    return grad


def fd_gradient_richardson(fun, mu0, rel_step: float = 1e-5):
    """(extrapolated gradient, consistency ratio per component).

    Central differences at steps h and h/2; the error ratio of a smooth
    function is ~4, and the Richardson combination cancels the leading term.
    """
    g1 = fd_gradient(fun, mu0, rel_step)
    g2 = fd_gradient(fun, mu0, rel_step / 2.0)
    extrap = (4.0 * g2 - g1) / 3.0
    denom = np.maximum(np.abs(g2 - extrap), 1e-300)
    ratio = np.abs(g1 - extrap) / denom
    return extrap, ratio
