"""Adjoint sensitivity of the backbone frequency at fixed physical amplitude.

The Lagrangian couples the response frequency with the amplitude map, the
cohomological equations, the eigenproblem and the mass normalization. Adjoint
variables are obtained by a reverse sweep: the amplitude adjoint first, then
the per-index vectors from the highest order downward (reusing the primal
factorizations; the operators are complex symmetric), finally a coupled
bordered real system for the mode-shape/frequency pair. Per-parameter cost is
a contraction with the explicit operator derivatives: no extra linear solves.

All cross-order couplings are evaluated as vector-times-operator products;
dense Jacobians between coefficient blocks are never materialized.

Resonant indices are solved in bordered form in the primal, so each carries
one extra adjoint scalar for the accompanying orthogonality constraint; its
contribution enters the mode-shape equation and the mass-matrix contraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import domega_drho, dx_drho, x_theta_samples
from .errors import ConjugacyError, TurningPointError
from .mechmodel import MechModel, ParamDerivatives
from .multiindex import (
    all_indices,
    canonical_indices,
    is_canonical,
    order,
    pair_decomps,
    symmetric,
    triple_decomps,
)
from .sens_direct import lambda_derivative
from .ssm import SsmExpansion, index_solve, v_decomps

IMAG_RESIDUE_RTOL = 1e-10


def _assert_real(value, what: str, rtol: float = IMAG_RESIDUE_RTOL):
    value = np.asarray(value)
    scale = max(1.0, float(np.abs(value.real).max()))
    residue = float(np.abs(value.imag).max())
    if residue > rtol * scale:
        raise ConjugacyError(f"{what} has imaginary residue {residue:.2e} (scale {scale:.2e})")
    return value.real if value.ndim else float(value.real)


@dataclass
class AdjointState:
    """Adjoint variables of the fixed-amplitude frequency response.

    lambda_m holds the canonical half; values at swapped indices are the
    elementwise conjugates. nu_m are the scalars adjoint to the orthogonality
    constraints of the bordered (resonant) solves.
    """

    lambda_rho: float
    lambda_m: dict
    nu_m: dict
    lambda_phi: np.ndarray
    lambda_omega: float
    rho: float
    dof_index: int
    n_theta: int

    def lam_m(self, m) -> np.ndarray:
        if m in self.lambda_m:
            return self.lambda_m[m]
        return np.conj(self.lambda_m[symmetric(m)])

    def nu(self, m) -> complex:
        if m in self.nu_m:
            return self.nu_m[m]
        ms = symmetric(m)
        return np.conj(self.nu_m[ms]) if ms in self.nu_m else 0.0


@dataclass
class _Bars:
    """Reverse-mode accumulators over the expansion graph."""

    n: int
    w: dict = field(default_factory=dict)
    wdot: dict = field(default_factory=dict)
    R: dict = field(default_factory=dict)
    V: dict = field(default_factory=dict)
    phi: np.ndarray | None = None
    lam: np.ndarray | None = None  # (2,) bars of the eigenvalue pair
    omega: complex = 0.0

    def __post_init__(self):
        self.phi = np.zeros(self.n, dtype=complex)
        self.lam = np.zeros(2, dtype=complex)

    def vec(self, store: dict, m) -> np.ndarray:
        if m not in store:
            store[m] = np.zeros(self.n, dtype=complex)
        return store[m]

    def rbar(self, m) -> np.ndarray:
        if m not in self.R:
            self.R[m] = np.zeros(2, dtype=complex)
        return self.R[m]


def solve_adjoint_rho(exp: SsmExpansion, dof_index: int, rho: float, n_theta: int = 128) -> float:
    """Amplitude adjoint: -(dOmega/drho)/(dx/drho)."""
    slope = dx_drho(exp, dof_index, rho, n_theta)
    if slope == 0.0:
        raise TurningPointError("dx/drho vanished; amplitude constraint is degenerate")
    return -domega_drho(exp, rho) / slope


def _seed_bars(exp, bars: _Bars, lambda_rho: float, dof_index: int, rho: float, n_theta: int):
    # frequency seeds (conjugate-pair difference form)
    bars.lam[0] += -0.5j
    bars.lam[1] += +0.5j
    for q, a in exp.r1_terms():
        bars.rbar(a)[0] += -0.5j * rho ** (q - 1)
        bars.rbar(symmetric(a))[1] += +0.5j * rho ** (q - 1)
    # amplitude seeds
    xk = x_theta_samples(exp, dof_index, rho, n_theta)
    x = float(np.sqrt(np.mean(xk**2)))
    thetas = 2.0 * np.pi * np.arange(1, n_theta + 1) / n_theta
    phase = {d: np.sum(xk * np.exp(1j * d * thetas)) for d in range(-exp.order, exp.order + 1)}
    for m in exp.data:
        coef = lambda_rho / (n_theta * x) * rho ** order(m) * phase[m[0] - m[1]]
        if order(m) == 1:
            bars.phi[dof_index] += coef
        else:
            bars.vec(bars.w, m)[dof_index] += coef


def _backprop_wdot(exp, bars: _Bars, m, rec):
    b = bars.wdot.pop(m, None)
    if b is None:
        return
    bars.vec(bars.w, m)[:] += rec.Lam * b
    if rec.slot is not None:
        bars.rbar(m)[rec.slot] += b @ exp.master.phi
    bars.vec(bars.V, m)[:] += b
    bars.phi += (rec.R[0] + rec.R[1]) * b
    _add_lam_bar(bars, m, b @ rec.w)


def _add_lam_bar(bars: _Bars, m, value: complex):
    bars.lam[0] += m[0] * value
    bars.lam[1] += m[1] * value


def _route_force_bar(exp, bars: _Bars, u, vec):
    if order(u) == 1:
        bars.phi += vec
    else:
        bars.vec(bars.w, u)[:] += vec


def _backprop_index(model: MechModel, exp, bars: _Bars, m, rec, lam_m, nu_m):
    master = exp.master
    phi = master.phi
    M, Cmat = model.M, model.damping()

    # lambda^T (L_m w_m - h_m): operator depends on omega through Lam_m
    _add_lam_bar(bars, m, lam_m @ (Cmat @ rec.w + 2.0 * rec.Lam * (M @ rec.w)))
    bar_h = -lam_m

    # h = C + sum_j D_j R_j
    bar_c = bar_h.copy()
    if rec.slot is not None:
        j = rec.slot
        bars.rbar(m)[j] += bar_h @ rec.D[j]
        bar_d = rec.R[j] * bar_h
        bars.phi += -(((rec.Lam + master.lambda_pair[j]) * M + Cmat) @ bar_d)
        sc = -(bar_d @ (M @ phi))
        _add_lam_bar(bars, m, sc)
        bars.lam[j] += sc

    # orthogonality constraint of the bordered solve
    if nu_m != 0.0:
        bars.phi += nu_m * (M @ rec.w)

    # R_m = phi^T C_m / den
    if rec.slot is not None:
        j = rec.slot
        den = rec.Lam + master.lambda_pair[j] + model.alpha_r + model.beta_r * master.omega**2
        g = bars.R.pop(m, np.zeros(2, complex))[j]
        if g != 0.0:
            bar_c += (g / den) * phi
            bars.phi += (g / den) * rec.C
            t = -g * rec.R[j] / den
            _add_lam_bar(bars, m, t)
            bars.lam[j] += t
            bars.omega += t * 2.0 * model.beta_r * master.omega

    # C = -M Vdot - (Lam M + C) V - f
    bar_vdot = -(M @ bar_c)
    bar_v = bars.V.pop(m, np.zeros(model.n, complex)) - (rec.Lam * M + Cmat) @ bar_c
    bar_f = -bar_c
    _add_lam_bar(bars, m, -(bar_c @ (M @ rec.V)))

    # V, Vdot sums over lower-order coefficients
    for u, j, k in v_decomps(m, exp.r_orders()):
        Rkj = exp.R(k)[j]
        bars.vec(bars.w, u)[:] += u[j] * Rkj * bar_v
        bars.rbar(k)[j] += u[j] * (bar_v @ exp.w(u))
        bars.vec(bars.wdot, u)[:] += u[j] * Rkj * bar_vdot
        bars.rbar(k)[j] += u[j] * (bar_vdot @ exp.wdot(u))

    # nonlinear force convolution
    for u, v in pair_decomps(m):
        _route_force_bar(exp, bars, u, model.T2.vjp_pair(bar_f, 0, exp.w(v)))
        _route_force_bar(exp, bars, v, model.T2.vjp_pair(bar_f, 1, exp.w(u)))
    for u, v, t in triple_decomps(m):
        _route_force_bar(exp, bars, u, model.T3.vjp_triple(bar_f, 0, exp.w(v), exp.w(t)))
        _route_force_bar(exp, bars, v, model.T3.vjp_triple(bar_f, 1, exp.w(u), exp.w(t)))
        _route_force_bar(exp, bars, t, model.T3.vjp_triple(bar_f, 2, exp.w(u), exp.w(v)))


def solve_adjoint_w(
    model: MechModel,
    exp: SsmExpansion,
    lambda_rho: float,
    dof_index: int,
    rho: float,
    n_theta: int = 128,
    full_set: bool = False,
):
    """Reverse sweep over the coefficient adjoints, highest order first.

    Returns (lambda_m over all indices, nu_m, bars) with the mode-shape and
    frequency bars accumulated and ready for the final coupled solve. In the
    default mode only canonical indices are solved and conjugates are
    implied; full_set solves every index independently (verification path).
    """
    bars = _Bars(model.n)
    _seed_bars(exp, bars, lambda_rho, dof_index, rho, n_theta)

    lambda_m: dict = {}
    nu_m: dict = {}
    for q in range(exp.order, 1, -1):
        idx_q = all_indices(q)
        for m in idx_q:
            _backprop_wdot(exp, bars, m, exp.coeffs(m))
        for m in idx_q:
            if not is_canonical(m) and not full_set:
                continue
            rhs = -bars.w.pop(m, np.zeros(model.n, complex))
            rec_solve = exp.coeffs(m)
            if rec_solve.lu is not None:
                lam, extra = index_solve(rec_solve, rhs)
            else:
                # conjugate record: L at the swapped index is the conjugate
                # operator, so solve with the canonical factorization
                rec_solve = exp.coeffs(symmetric(m))
                lam, extra = index_solve(rec_solve, np.conj(rhs))
                lam, extra = np.conj(lam), np.conj(extra)
            lambda_m[m] = lam
            if rec_solve.bordered:
                nu_m[m] = extra
            if not full_set and m[0] != m[1]:
                ms = symmetric(m)
                lambda_m[ms] = np.conj(lam)
                if rec_solve.bordered:
                    nu_m[ms] = np.conj(extra)
        for m in idx_q:
            _backprop_index(
                model, exp, bars, m, exp.coeffs(m), lambda_m[m], nu_m.get(m, 0.0)
            )
    return lambda_m, nu_m, bars


def solve_adjoint_phi_omega(model: MechModel, exp: SsmExpansion, bars: _Bars):
    """Coupled bordered solve for the mode-shape and frequency adjoints."""
    master = exp.master
    _, dlam_domega = lambda_derivative(master, model.alpha_r, model.beta_r, 1.0)
    bars.omega += bars.lam[0] * dlam_domega + bars.lam[1] * np.conj(dlam_domega)
    g_phi = _assert_real(bars.phi, "mode-shape adjoint source")
    g_omega = _assert_real(bars.omega, "frequency adjoint source")

    n = model.n
    Mphi = model.M @ master.phi
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = model.K - master.omega**2 * model.M
    A[:n, n] = 2.0 * Mphi
    A[n, :n] = -2.0 * master.omega * Mphi
    rhs = np.concatenate([-g_phi, [-g_omega]])
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        from .errors import DegenerateModeError

        raise DegenerateModeError(
            "bordered mode-shape adjoint system is singular (repeated frequency)"
        ) from None
    return sol[:n], float(sol[n])


def solve_adjoint(
    model: MechModel,
    exp: SsmExpansion,
    dof_index: int,
    rho: float,
    n_theta: int = 128,
    full_set: bool = False,
) -> AdjointState:
    """All adjoint variables for Omega at the given reduced amplitude."""
    lambda_rho = solve_adjoint_rho(exp, dof_index, rho, n_theta)
    lambda_m, nu_m, bars = solve_adjoint_w(
        model, exp, lambda_rho, dof_index, rho, n_theta, full_set
    )
    lambda_phi, lambda_omega = solve_adjoint_phi_omega(model, exp, bars)
    canonical_lm = {m: v for m, v in lambda_m.items() if is_canonical(m)}
    canonical_nu = {m: v for m, v in nu_m.items() if is_canonical(m)}
    return AdjointState(
        lambda_rho=lambda_rho,
        lambda_m=canonical_lm,
        nu_m=canonical_nu,
        lambda_phi=lambda_phi,
        lambda_omega=lambda_omega,
        rho=rho,
        dof_index=dof_index,
        n_theta=n_theta,
    )


@dataclass
class AdjointReport:
    names: tuple[str, ...]
    d_omega: np.ndarray
    method: str = "adjoint"
    seconds: float = 0.0


def contract_gradient(
    model: MechModel,
    exp: SsmExpansion,
    adjoint: AdjointState,
    params: ParamDerivatives,
) -> AdjointReport:
    """dOmega/dmu for every design variable from the solved adjoint state.

    One ascending pass of explicit operator-derivative contractions,
    vectorized across the parameters: the force-tensor derivatives of all
    parameters are stacked into one entry list, the per-index partials are
    (P, n) arrays, and the adjoint vectors enter through cached row products.
    No linear solves and no dense matrix products appear per parameter, so
    the cost stays nearly independent of the parameter count. Parameters with
    mass/stiffness derivatives get their few extra dense terms in a short
    scalar loop.
    """
    master = exp.master
    phi = master.phi
    rho = adjoint.rho
    n = model.n
    P = params.count
    M, Cmat = model.M, model.damping()
    lam_pair = master.lambda_pair
    shift = model.alpha_r + model.beta_r * master.omega**2

    # stacked tensor-derivative entries with a parameter id per entry
    def stack2():
        pids, idxs, vals = [], [], []
        for p in range(P):
            t = params.dT2[p]
            if t.nnz:
                pids.append(np.full(t.nnz, p))
                idxs.append(t.idx)
                vals.append(t.vals)
        if not pids:
            return None
        return np.concatenate(pids), np.vstack(idxs), np.concatenate(vals)

    def stack3():
        pids, idxs, vals = [], [], []
        for p in range(P):
            t = params.dT3[p]
            if t.nnz:
                pids.append(np.full(t.nnz, p))
                idxs.append(t.idx)
                vals.append(t.vals)
        if not pids:
            return None
        return np.concatenate(pids), np.vstack(idxs), np.concatenate(vals)

    s2, s3 = stack2(), stack3()
    matrix_params = [
        p
        for p in range(P)
        if np.any(params.dM[p]) or np.any(params.dK[p])
    ]
    dC = {p: params.dC(p, model) for p in matrix_params}

    def pf_all(m):
        out = np.zeros((P, n), dtype=complex)
        if s2 is not None:
            pid, idx, vals = s2
            i, j, k = idx.T
            G = np.zeros(len(vals), dtype=complex)
            for u, v in pair_decomps(m):
                G += exp.w(u)[j] * exp.w(v)[k]
            flat = np.bincount(pid * n + i, (vals * G).real, minlength=P * n).astype(
                complex
            )
            flat += 1j * np.bincount(pid * n + i, (vals * G).imag, minlength=P * n)
            out += flat.reshape(P, n)
        if s3 is not None:
            pid, idx, vals = s3
            i, j, k, l = idx.T
            G = np.zeros(len(vals), dtype=complex)
            for u, v, t in triple_decomps(m):
                G += exp.w(u)[j] * exp.w(v)[k] * exp.w(t)[l]
            flat = np.bincount(pid * n + i, (vals * G).real, minlength=P * n).astype(
                complex
            )
            flat += 1j * np.bincount(pid * n + i, (vals * G).imag, minlength=P * n)
            out += flat.reshape(P, n)
        return out

    phiM = phi @ M
    phiC = phi @ Cmat
    zero_pn = np.zeros((P, n), dtype=complex)
    prevR = {(1, 0): np.zeros((P, 2), complex), (0, 1): np.zeros((P, 2), complex)}
    prevW = {(1, 0): zero_pn, (0, 1): zero_pn}
    accum = np.zeros(P, dtype=complex)

    for q in range(2, exp.order + 1):
        targets = all_indices(q) if exp.full_set else canonical_indices(q)
        for m in targets:
            rec = exp.coeffs(m)
            lam = adjoint.lam_m(m)
            lamM = lam @ M
            lamLC = rec.Lam * lamM + lam @ Cmat
            phiLC = rec.Lam * phiM + phiC

            pf = pf_all(m)
            pV = np.zeros((P, n), dtype=complex)
            pVdot = np.zeros((P, n), dtype=complex)
            for u, j, k in v_decomps(m, exp.r_orders()):
                pRkj = prevR[k][:, j]
                pV += u[j] * pRkj[:, None] * exp.w(u)[None, :]
                pVdot += u[j] * (
                    prevW[u] * exp.R(k)[j] + pRkj[:, None] * exp.wdot(u)[None, :]
                )

            # phi^T pC and lambda^T ph without forming pC / ph
            phi_pC = -(pVdot @ phiM) - (pV @ phiLC) - (pf @ phi)
            lam_pC = -(pVdot @ lamM) - (pV @ lamLC) - (pf @ lam)
            for p in matrix_params:
                extra = (
                    -params.dM[p] @ rec.Vdot
                    - (rec.Lam * params.dM[p] + dC[p]) @ rec.V
                )
                phi_pC[p] += phi @ extra
                lam_pC[p] += lam @ extra

            pR = np.zeros((P, 2), dtype=complex)
            lam_ph = lam_pC.copy()
            if rec.slot is not None:
                j = rec.slot
                den = rec.Lam + lam_pair[j] + shift
                pR[:, j] = phi_pC / den
                lamD = lam @ rec.D[j]
                lam_ph += lamD * pR[:, j]
                for p in matrix_params:
                    pD = -((rec.Lam + lam_pair[j]) * params.dM[p] + dC[p]) @ phi
                    lam_ph[p] += (lam @ pD) * rec.R[j]

            lam_pLw = np.zeros(P, dtype=complex)
            for p in matrix_params:
                pLw = (
                    params.dK[p] + rec.Lam * dC[p] + rec.Lam**2 * params.dM[p]
                ) @ rec.w
                lam_pLw[p] = lam @ pLw

            term = lam_pLw - lam_ph
            if rec.bordered:
                nu = adjoint.nu(m)
                for p in matrix_params:
                    term[p] += nu * (phi @ (params.dM[p] @ rec.w))
            accum += term

            pwdot = (pR[:, 0] + pR[:, 1])[:, None] * phi[None, :] + pV
            prevR[m] = pR
            prevW[m] = pwdot
            if not exp.full_set and m[0] != m[1]:
                ms = symmetric(m)
                prevR[ms] = np.conj(pR[:, ::-1])
                prevW[ms] = np.conj(pwdot)
                accum += np.conj(term)

    p_omega = np.zeros(P, dtype=complex)
    for q, a in exp.r1_terms():
        p_omega += 0.5j * (prevR[symmetric(a)][:, 1] - prevR[a][:, 0]) * rho ** (q - 1)
    total = p_omega + accum
    for p in matrix_params:
        total[p] += adjoint.lambda_phi @ (
            (params.dK[p] - master.omega**2 * params.dM[p]) @ phi
        )
        total[p] += adjoint.lambda_omega * (phi @ (params.dM[p] @ phi))
    d_omega = np.array(
        [
            _assert_real(total[p], f"gradient for parameter {params.names[p]!r}")
            for p in range(P)
        ]
    )
    return AdjointReport(names=params.names, d_omega=d_omega)
