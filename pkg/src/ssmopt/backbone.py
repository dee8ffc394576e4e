"""Physical-space backbone: Omega(rho), theta-grid RMS amplitude, inversion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AmplitudeUnreachableError, ConjugacyError, TurningPointError
from .multiindex import order
from .ssm import SsmExpansion

DEFAULT_N_THETA = 128
VALIDITY_DIVERGENCE = 0.10  # order-O vs order-(O-2) truncation disagreement cap
IMAG_RESIDUE_RTOL = 1e-10
RHO_X_RTOL = 1e-10


def _check_n_theta(exp: SsmExpansion, n_theta: int):
    if n_theta < 2 * exp.order + 1:
        raise ValueError(
            f"n_theta={n_theta} undersamples an order-{exp.order} expansion; "
            f"need at least {2 * exp.order + 1}"
        )


def omega_of_rho(exp: SsmExpansion, rho: float, form: str = "compact") -> float:
    """Backbone frequency at reduced amplitude rho.

    Both forms are mathematically identical: "compact" sums Im(R1) over the
    active odd orders, "paired" uses the conjugate-pair difference form that
    the sensitivity passes differentiate. They agree to roundoff.
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if form == "compact":
        total = exp.master.omega_d
        for q, a in exp.r1_terms():
            total += exp.R(a)[0].imag * rho ** (q - 1)
        return float(total)
    if form == "paired":
        lam = exp.master.lam
        total = 0.5j * (np.conj(lam) - lam)
        for q, a in exp.r1_terms():
            r1 = exp.R(a)[0]
            r2 = exp.R((a[1], a[0]))[1]
            total += 0.5j * (r2 - r1) * rho ** (q - 1)
        if abs(total.imag) > IMAG_RESIDUE_RTOL * max(1.0, abs(total.real)):
            raise ConjugacyError(f"paired backbone sum has imaginary residue {total.imag:.2e}")
        return float(total.real)
    raise ValueError(f"unknown form {form!r}")


def domega_drho(exp: SsmExpansion, rho: float) -> float:
    """d Omega / d rho."""
    total = 0.0
    for q, a in exp.r1_terms():
        if q >= 3:
            total += exp.R(a)[0].imag * (q - 1) * rho ** (q - 2)
    return float(total)


def _theta_grid(n_theta: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(1, n_theta + 1) / n_theta


def x_theta_samples(
    exp: SsmExpansion,
    dof_index: int,
    rho: float,
    n_theta: int,
    max_order: int | None = None,
) -> np.ndarray:
    """Displacement of one DOF over the theta grid; real by conjugate pairing."""
    thetas = _theta_grid(n_theta)
    x = np.zeros(n_theta, dtype=complex)
    for m, rec in exp.data.items():
        q = order(m)
        if max_order is not None and q > max_order:
            continue
        x += rec.w[dof_index] * rho**q * np.exp(1j * (m[0] - m[1]) * thetas)
    scale = max(1.0, float(np.abs(x.real).max()))
    if np.abs(x.imag).max() > IMAG_RESIDUE_RTOL * scale:
        raise ConjugacyError(
            f"theta samples have imaginary residue {np.abs(x.imag).max():.2e}"
        )
    return x.real


def x_rms(
    exp: SsmExpansion,
    dof_index: int,
    rho: float,
    n_theta: int = DEFAULT_N_THETA,
    max_order: int | None = None,
) -> float:
    """RMS over the theta grid of the observed DOF displacement."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    _check_n_theta(exp, n_theta)
    if rho == 0.0:
        return 0.0
    xk = x_theta_samples(exp, dof_index, rho, n_theta, max_order)
    return float(np.sqrt(np.mean(xk**2)))


def dx_drho(exp: SsmExpansion, dof_index: int, rho: float, n_theta: int = DEFAULT_N_THETA) -> float:
    """Analytic d x_rms / d rho (used by the inversion and the adjoint pass)."""
    _check_n_theta(exp, n_theta)
    thetas = _theta_grid(n_theta)
    xk = x_theta_samples(exp, dof_index, rho, n_theta)
    x = np.sqrt(np.mean(xk**2))
    if x == 0.0:
        raise TurningPointError("dx/drho is undefined at zero amplitude")
    dxk = np.zeros(n_theta, dtype=complex)
    for m, rec in exp.data.items():
        q = order(m)
        dxk += rec.w[dof_index] * q * rho ** (q - 1) * np.exp(1j * (m[0] - m[1]) * thetas)
    val = np.sum(xk * dxk) / (n_theta * x)
    return float(val.real)


def _validity_cap(exp: SsmExpansion, dof_index: int, n_theta: int) -> float:
    """Largest rho where the top two truncations still agree within 10%.

    The expansion carries no a-priori radius of convergence; the practical
    radius is taken where dropping the two highest orders moves the predicted
    amplitude by more than VALIDITY_DIVERGENCE.
    """
    if exp.order <= 3:
        lower = 1
    else:
        lower = exp.order - 2
    rho = _linear_rho_scale(exp, dof_index)
    for _ in range(200):
        xf = x_rms(exp, dof_index, rho, n_theta)
        xl = x_rms(exp, dof_index, rho, n_theta, max_order=lower)
        if xf == 0.0 or abs(xf - xl) > VALIDITY_DIVERGENCE * xf:
            return rho
        rho *= 1.25
    return rho


def _linear_rho_scale(exp: SsmExpansion, dof_index: int) -> float:
    amp = abs(exp.master.phi[dof_index])
    if amp == 0.0:
        amp = float(np.abs(exp.master.phi).max())
    return 1e-6 / (np.sqrt(2.0) * amp)


def rho_of_x(
    exp: SsmExpansion,
    dof_index: int,
    x0: float,
    n_theta: int = DEFAULT_N_THETA,
) -> float:
    """Reduced amplitude with x_rms(rho) = x0, by bracketing plus safeguarded Newton."""
    if x0 <= 0:
        raise ValueError("target amplitude must be positive")
    _check_n_theta(exp, n_theta)
    cap = _validity_cap(exp, dof_index, n_theta)

    phi_i = abs(exp.master.phi[dof_index])
    if phi_i > 0:
        rho_hi = min(x0 / (np.sqrt(2.0) * phi_i), cap)
    else:
        rho_hi = cap * 1e-3
    rho_hi = max(rho_hi, 1e-300)
    x_hi = x_rms(exp, dof_index, rho_hi, n_theta)
    while x_hi < x0:
        if rho_hi >= cap:
            raise AmplitudeUnreachableError(
                x0, x_rms(exp, dof_index, cap, n_theta), rho_cap=cap
            )
        rho_hi = min(rho_hi * 1.5, cap)
        x_hi = x_rms(exp, dof_index, rho_hi, n_theta)
    rho_lo = 0.0
    x_lo = 0.0

    rho = rho_hi * min(1.0, x0 / x_hi)
    for _ in range(200):
        x = x_rms(exp, dof_index, rho, n_theta)
        if abs(x - x0) <= RHO_X_RTOL * x0:
            return rho
        if x < x0:
            rho_lo, x_lo = rho, x
        else:
            rho_hi, x_hi = rho, x
        slope = dx_drho(exp, dof_index, rho, n_theta)
        cand = rho - (x - x0) / slope if slope > 0 else None
        if cand is None or not rho_lo < cand < rho_hi:
            cand = 0.5 * (rho_lo + rho_hi)
        rho = cand
    raise TurningPointError(
        f"amplitude inversion failed to converge for x0={x0:.6g} "
        f"(bracket [{rho_lo:.6g}, {rho_hi:.6g}])"
    )


@dataclass(frozen=True)
class BackbonePoint:
    rho: float
    omega: float
    x: float


@dataclass(frozen=True)
class BackboneCurve:
    dof_index: int
    n_theta: int
    points: tuple[BackbonePoint, ...]
    monotone: bool  # x strictly increasing in rho over the sampled range


def sample_backbone(
    exp: SsmExpansion,
    dof_index: int,
    x_targets,
    n_theta: int = DEFAULT_N_THETA,
) -> BackboneCurve:
    """One backbone point per target amplitude, in the given order."""
    pts = []
    for x0 in x_targets:
        rho = rho_of_x(exp, dof_index, float(x0), n_theta)
        pts.append(BackbonePoint(rho, omega_of_rho(exp, rho), float(x0)))
    by_rho = sorted(pts, key=lambda p: p.rho)
    monotone = all(b.x > a.x for a, b in zip(by_rho, by_rho[1:]))
    return BackboneCurve(dof_index, n_theta, tuple(pts), monotone)


def backbone_to_csv(curve: BackboneCurve) -> str:
    lines = ["rho,omega,x"]
    for p in curve.points:
        lines.append(f"{p.rho:.16e},{p.omega:.16e},{p.x:.16e}")
    return "\n".join(lines) + "\n"
