"""Direct-differentiation sensitivity of the backbone frequency.

Propagates per-parameter derivatives forward through the whole pipeline:
eigenpair, damping ratio, eigenvalue, then every expansion coefficient in
ascending order, finally the reduced amplitude (at fixed target physical
amplitude) and the response frequency. Cost scales linearly with the number
of design variables; serves as the cross-check oracle for the adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .backbone import dx_drho, x_theta_samples
from .errors import ConjugacyError, DegenerateModeError
from .mechmodel import MechModel, ParamDerivatives
from .multiindex import (
    all_indices,
    canonical_indices,
    order,
    pair_decomps,
    symmetric,
    triple_decomps,
)
from .ssm import SsmExpansion, index_solve, v_decomps

IMAG_RESIDUE_RTOL = 1e-10


@dataclass
class DirectDerivatives:
    """Forward-mode derivatives per design variable.

    coeffs[p] maps each multi-index to (dw, dwdot, dR); leading-order entries
    hold the mode-shape derivative.
    """

    names: tuple[str, ...]
    d_omega: np.ndarray  # dOmega/dmu at fixed target amplitude
    d_rho: np.ndarray
    d_phi: np.ndarray  # (P, n)
    d_omega0: np.ndarray  # natural-frequency derivative
    d_lambda: np.ndarray  # complex eigenvalue derivative
    d_xi: np.ndarray
    coeffs: list[dict]


def eig_derivatives(
    model: MechModel, master, params: ParamDerivatives
) -> tuple[np.ndarray, np.ndarray]:
    """Mode-shape and frequency derivatives from the bordered eigenpair system.

    One factorization serves all parameters (the matrix does not depend on
    the design variables).
    """
    n = model.n
    phi, omega = master.phi, master.omega
    Mphi = model.M @ phi
    B = np.zeros((n + 1, n + 1))
    B[:n, :n] = model.K - omega**2 * model.M
    B[:n, n] = -2.0 * omega * Mphi
    B[n, :n] = -2.0 * omega * Mphi
    try:
        lu = scipy.linalg.lu_factor(B)
    except scipy.linalg.LinAlgError:
        raise DegenerateModeError("bordered eigenpair system is singular") from None
    dphi = np.zeros((params.count, n))
    domega = np.zeros(params.count)
    for p in range(params.count):
        rhs = np.empty(n + 1)
        rhs[:n] = (omega**2 * params.dM[p] - params.dK[p]) @ phi
        rhs[n] = omega * (phi @ params.dM[p] @ phi)
        sol = scipy.linalg.lu_solve(lu, rhs)
        dphi[p] = sol[:n]
        domega[p] = sol[n]
    return dphi, domega


def lambda_derivative(master, alpha_r: float, beta_r: float, domega: float):
    """(dxi, dlam) from the natural-frequency derivative."""
    omega, xi = master.omega, master.xi
    dxi = (beta_r * omega**2 - alpha_r) / (2.0 * omega**2) * domega
    sq = np.sqrt(1.0 - xi * xi)
    dlam = -xi * domega - omega * dxi + 1j * (domega * sq - omega * xi / sq * dxi)
    return dxi, dlam


def _mirror_coeff(dw, dwdot, dR):
    return np.conj(dw), np.conj(dwdot), np.conj(dR[::-1])


def chain_derivatives(
    model: MechModel,
    exp: SsmExpansion,
    params: ParamDerivatives,
    dof_index: int,
    rho: float,
    n_theta: int = 128,
) -> DirectDerivatives:
    """Full forward derivative chain at fixed target physical amplitude.

    The reported dOmega/dmu holds the observed RMS amplitude constant: the
    reduced-amplitude derivative comes from differentiating the amplitude
    map at x = const.
    """
    master = exp.master
    phi = master.phi
    lam = master.lam
    omega = master.omega
    Cmat = model.damping()
    M = model.M
    n = model.n
    P = params.count

    dphi_all, domega_all = eig_derivatives(model, master, params)

    xk = x_theta_samples(exp, dof_index, rho, n_theta)
    thetas = 2.0 * np.pi * np.arange(1, n_theta + 1) / n_theta
    max_d = exp.order
    phase = {
        d: np.sum(xk * np.exp(1j * d * thetas)) for d in range(-max_d, max_d + 1)
    }
    x = float(np.sqrt(np.mean(xk**2)))
    dxdr = dx_drho(exp, dof_index, rho, n_theta)

    d_omega = np.zeros(P)
    d_rho = np.zeros(P)
    d_lambda = np.zeros(P, dtype=complex)
    d_xi = np.zeros(P)
    coeffs_out: list[dict] = []

    for p in range(P):
        dM, dK = params.dM[p], params.dK[p]
        dT2, dT3 = params.dT2[p], params.dT3[p]
        dCmat = params.dC(p, model)
        dphi = dphi_all[p].astype(complex)
        domega = domega_all[p]
        dxi, dlam = lambda_derivative(master, model.alpha_r, model.beta_r, domega)
        dlam_pair = np.array([dlam, np.conj(dlam)])
        d_lambda[p] = dlam
        d_xi[p] = dxi

        dcoef: dict = {
            (1, 0): (dphi, dlam * phi + lam * dphi, np.array([dlam, 0.0], complex)),
            (0, 1): (
                dphi,
                np.conj(dlam * phi + lam * dphi),
                np.array([0.0, np.conj(dlam)], complex),
            ),
        }

        for q in range(2, exp.order + 1):
            targets = all_indices(q) if exp.full_set else canonical_indices(q)
            for m in targets:
                rec = exp.coeffs(m)
                dLam = m[0] * dlam_pair[0] + m[1] * dlam_pair[1]

                df = np.zeros(n, dtype=complex)
                for u, v in pair_decomps(m):
                    wu, wv = exp.w(u), exp.w(v)
                    df += dT2.contract_pair(wu, wv)
                    df += model.T2.contract_pair(dcoef[u][0], wv)
                    df += model.T2.contract_pair(wu, dcoef[v][0])
                for u, v, t in triple_decomps(m):
                    wu, wv, wt = exp.w(u), exp.w(v), exp.w(t)
                    df += dT3.contract_triple(wu, wv, wt)
                    df += model.T3.contract_triple(dcoef[u][0], wv, wt)
                    df += model.T3.contract_triple(wu, dcoef[v][0], wt)
                    df += model.T3.contract_triple(wu, wv, dcoef[t][0])

                dV = np.zeros(n, dtype=complex)
                dVdot = np.zeros(n, dtype=complex)
                for u, j, k in v_decomps(m, exp.r_orders()):
                    Rkj = exp.R(k)[j]
                    dRkj = dcoef[k][2][j]
                    dV += u[j] * (dcoef[u][0] * Rkj + exp.w(u) * dRkj)
                    dVdot += u[j] * (dcoef[u][1] * Rkj + exp.wdot(u) * dRkj)

                dC = (
                    -dM @ rec.Vdot
                    - M @ dVdot
                    - (rec.Lam * M + Cmat) @ dV
                    - (dLam * M + rec.Lam * dM + dCmat) @ rec.V
                    - df
                )

                dR = np.zeros(2, dtype=complex)
                dD = [None, None]
                if rec.slot is not None:
                    j = rec.slot
                    lam_j = master.lambda_pair[j]
                    den = rec.Lam + lam_j + model.alpha_r + model.beta_r * omega**2
                    dden = dLam + dlam_pair[j] + 2.0 * model.beta_r * omega * domega
                    dR[j] = (dphi @ rec.C + phi @ dC) / den - rec.R[j] * dden / den
                    dD[j] = (
                        -((rec.Lam + lam_j) * M + Cmat) @ dphi
                        - ((dLam + dlam_pair[j]) * M + (rec.Lam + lam_j) * dM + dCmat)
                        @ phi.astype(complex)
                    )

                dh = dC.copy()
                if rec.slot is not None:
                    j = rec.slot
                    dh = dh + dD[j] * rec.R[j] + rec.D[j] * dR[j]

                dLw = (dK + rec.Lam * dCmat + rec.Lam**2 * dM) @ rec.w + dLam * (
                    (Cmat + 2.0 * rec.Lam * M) @ rec.w
                )
                rhs = dh - dLw
                if rec.bordered:
                    border_rhs = -((dM @ phi + M @ dphi) @ rec.w)
                    dw, _ = index_solve(rec, rhs, border_rhs)
                else:
                    dw, _ = index_solve(rec, rhs)

                dwdot = (
                    dLam * rec.w
                    + rec.Lam * dw
                    + dV
                    + (dR[0] + dR[1]) * phi
                    + (rec.R[0] + rec.R[1]) * dphi
                )
                dcoef[m] = (dw, dwdot, dR)
                if not exp.full_set and m[0] != m[1]:
                    dcoef[symmetric(m)] = _mirror_coeff(dw, dwdot, dR)

        # reduced-amplitude derivative at fixed physical amplitude
        num = 0.0 + 0.0j
        for m, (dw, _, _) in dcoef.items():
            num += dw[dof_index] * rho ** order(m) * phase[m[0] - m[1]]
        drho = -num / (n_theta * x * dxdr)
        if abs(drho.imag) > IMAG_RESIDUE_RTOL * max(1.0, abs(drho.real)):
            raise ConjugacyError(f"drho has imaginary residue {drho.imag:.2e}")
        drho = drho.real

        dOm = 0.5j * (dlam_pair[1] - dlam_pair[0])
        for q, a in exp.r1_terms():
            dR1 = dcoef[a][2][0]
            dR2 = dcoef[symmetric(a)][2][1]
            r1 = exp.R(a)[0]
            r2 = exp.R(symmetric(a))[1]
            dOm += 0.5j * (
                (dR2 - dR1) * rho ** (q - 1)
                + (r2 - r1) * (q - 1) * rho ** (q - 2) * drho
            )
        if abs(dOm.imag) > IMAG_RESIDUE_RTOL * max(1.0, abs(dOm.real)):
            raise ConjugacyError(f"dOmega has imaginary residue {dOm.imag:.2e}")

        d_omega[p] = dOm.real
        d_rho[p] = drho
        coeffs_out.append(dcoef)

    return DirectDerivatives(
        names=params.names,
        d_omega=d_omega,
        d_rho=d_rho,
        d_phi=dphi_all,
        d_omega0=domega_all,
        d_lambda=d_lambda,
        d_xi=d_xi,
        coeffs=coeffs_out,
    )
