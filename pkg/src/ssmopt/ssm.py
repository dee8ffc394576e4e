"""Two-dimensional autonomous SSM expansion via per-index cohomological solves.

For each multi-index m (order >= 2) the displacement coefficient w_m solves
``L_m w_m = h_m`` with ``L_m = K + Lam_m*C + Lam_m**2*M``. Near-resonant
indices (|m1 - m2| = 1, odd order) carry a reduced-dynamics coefficient R_m
chosen to project the right-hand side out of the master direction; their
operator is solved in bordered form with the constraint phi^T M w_m = 0 so the
exactly-singular undamped case is handled by the same path as the lightly
damped one (for which the bordered and plain solutions coincide).

All coefficients at the swapped index (m2, m1) are elementwise conjugates of
those at (m1, m2); by default only canonical indices are solved and the rest
are written by conjugation. `full_set=True` solves every index independently,
which exists to let tests verify the conjugacy property.
"""

from __future__ import annotations

import warnings

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .errors import (
    DegenerateParametrizationError,
    OuterResonanceError,
    SsmError,
)
from .mechmodel import MechModel
from .multiindex import (
    E1,
    E2,
    MultiIndex,
    all_indices,
    canonical_indices,
    monomial,
    order,
    pair_decomps,
    r1_active_index,
    resonant_slot,
    symmetric,
    triple_decomps,
)
from .spectral import MasterPair

RCOND_SINGULAR = 1e-12
DENOMINATOR_TOL = 1e-10
SOLVE_RESIDUAL_RTOL = 1e-9


@dataclass
class IndexCoeffs:
    """Coefficients and cached solver data for one multi-index."""

    m: MultiIndex
    w: np.ndarray
    wdot: np.ndarray
    R: np.ndarray  # shape (2,), complex reduced-dynamics coefficients
    Lam: complex
    f: np.ndarray
    V: np.ndarray
    Vdot: np.ndarray
    C: np.ndarray
    D: list  # two slots, complex n-vectors where the slot is resonant else None
    slot: int | None  # resonant slot (0 or 1) or None
    canonical: bool
    lu: tuple | None = None  # LU of L_m, or of the scaled bordered operator
    bordered: bool = False
    border_gamma: float = 0.0


def _factor_with_rcond(A: np.ndarray, m: MultiIndex):
    anorm = np.linalg.norm(A, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A)
    rcond, info = lapack.zgecon(lu, anorm)
    if info != 0 or not np.isfinite(rcond) or rcond < RCOND_SINGULAR:
        raise OuterResonanceError(m, float(rcond))
    return lu, piv


def index_solve(rec: IndexCoeffs, b1: np.ndarray, border_rhs: complex = 0.0):
    """Solve the cached operator of a canonical index against a new RHS.

    For bordered (resonant) records the system is
    [L_m, c; c^T, 0] [w; s] = [b1; border_rhs] with c = M phi; returns
    (w, s). Plain records return (w, 0). The operator is complex symmetric,
    so the same factorization serves transposed (adjoint) systems.
    """
    if rec.lu is None:
        raise SsmError(f"index {rec.m} carries no factorization (conjugate record)")
    if not rec.bordered:
        return scipy.linalg.lu_solve(rec.lu, b1), 0.0
    rhs = np.concatenate([b1, [rec.border_gamma * border_rhs]])
    sol = scipy.linalg.lu_solve(rec.lu, rhs)
    return sol[:-1], rec.border_gamma * sol[-1]


def v_decomps(m: MultiIndex, r_orders: tuple[int, ...]):
    """Terms (u, j, k) of the lower-order coupling sum for index m.

    k runs over near-resonant indices of orders in r_orders below order(m);
    u = m + e_j - k must be a valid index of order >= 2 with u[j] > 0.
    """
    out = []
    q = order(m)
    for qk in r_orders:
        if qk >= q:
            break
        a = r1_active_index(qk)
        for k, j, e in ((a, 0, E1), (symmetric(a), 1, E2)):
            u = (m[0] + e[0] - k[0], m[1] + e[1] - k[1])
            if u[0] >= 0 and u[1] >= 0 and u[j] > 0:
                out.append((u, j, k))
    return out


class SsmExpansion:
    """SSM coefficients up to a given odd order, plus per-index solver cache."""

    def __init__(self, model: MechModel, master: MasterPair, full_set: bool = False):
        self.model = model
        self.master = master
        self.full_set = full_set
        self.order = 1
        self.data: dict[MultiIndex, IndexCoeffs] = {}
        self.n_solves = 0
        self._init_leading()

    def _init_leading(self):
        phi = self.master.phi.astype(complex)
        lam = self.master.lam
        n = self.model.n
        zero = np.zeros(n, dtype=complex)
        for m, lam_j, slot in (((1, 0), lam, 0), ((0, 1), np.conj(lam), 1)):
            R = np.zeros(2, dtype=complex)
            R[slot] = lam_j
            self.data[m] = IndexCoeffs(
                m=m,
                w=phi.copy(),
                wdot=lam_j * phi,
                R=R,
                Lam=lam_j,
                f=zero.copy(),
                V=zero.copy(),
                Vdot=zero.copy(),
                C=zero.copy(),
                D=[None, None],
                slot=slot,
                canonical=(m == (1, 0)),
            )

    # -- accessors ---------------------------------------------------------

    def coeffs(self, m: MultiIndex) -> IndexCoeffs:
        return self.data[m]

    def w(self, m: MultiIndex) -> np.ndarray:
        return self.data[m].w

    def wdot(self, m: MultiIndex) -> np.ndarray:
        return self.data[m].wdot

    def R(self, m: MultiIndex) -> np.ndarray:
        return self.data[m].R

    def indices(self, min_order: int = 2) -> list[MultiIndex]:
        out = []
        for q in range(min_order, self.order + 1):
            out.extend(all_indices(q))
        return out

    def r_orders(self) -> tuple[int, ...]:
        """Odd orders >= 3 carrying reduced-dynamics coefficients."""
        return tuple(q for q in range(3, self.order + 1, 2))

    def r1_terms(self) -> list[tuple[int, MultiIndex]]:
        """(order, index) pairs of the active first reduced coefficients."""
        return [(q, r1_active_index(q)) for q in self.r_orders()]


def leading_order(master: MasterPair, model: MechModel) -> SsmExpansion:
    """Order-1 expansion seeded with the master pair."""
    return SsmExpansion(model, master)


def _conjugate_record(rec: IndexCoeffs) -> IndexCoeffs:
    ms = symmetric(rec.m)
    slot = None if rec.slot is None else 1 - rec.slot
    D = [None if rec.D[1] is None else np.conj(rec.D[1]),
         None if rec.D[0] is None else np.conj(rec.D[0])]
    return IndexCoeffs(
        m=ms,
        w=np.conj(rec.w),
        wdot=np.conj(rec.wdot),
        R=np.conj(rec.R[::-1]),
        Lam=np.conj(rec.Lam),
        f=np.conj(rec.f),
        V=np.conj(rec.V),
        Vdot=np.conj(rec.Vdot),
        C=np.conj(rec.C),
        D=D,
        slot=slot,
        canonical=False,
    )


def order_step(model: MechModel, exp: SsmExpansion, m: MultiIndex) -> IndexCoeffs:
    """Compute the coefficients at one multi-index from all lower orders."""
    master = exp.master
    phi = master.phi
    lam_pair = master.lambda_pair
    Cmat = model.damping()
    M, K = model.M, model.K
    n = model.n

    Lam = m[0] * lam_pair[0] + m[1] * lam_pair[1]

    f = model.T2.contract_pair_sum(
        [(exp.w(u), exp.w(v)) for u, v in pair_decomps(m)]
    ) + model.T3.contract_triple_sum(
        [(exp.w(u), exp.w(v), exp.w(t)) for u, v, t in triple_decomps(m)]
    )

    V = np.zeros(n, dtype=complex)
    Vdot = np.zeros(n, dtype=complex)
    for u, j, k in v_decomps(m, exp.r_orders()):
        coef = u[j] * exp.R(k)[j]
        V += coef * exp.w(u)
        Vdot += coef * exp.wdot(u)

    C_m = -M @ Vdot - (Lam * M + Cmat) @ V - f

    slot = resonant_slot(m)
    R = np.zeros(2, dtype=complex)
    D: list = [None, None]
    if slot is not None:
        lam_j = lam_pair[slot]
        den = Lam + lam_j + model.alpha_r + model.beta_r * master.omega**2
        if abs(den) < DENOMINATOR_TOL:
            raise DegenerateParametrizationError(
                f"near-resonant denominator {abs(den):.2e} at index {m}"
            )
        R[slot] = (phi @ C_m) / den
        D[slot] = -((Lam + lam_j) * M + Cmat) @ phi.astype(complex)

    h = C_m.copy()
    if slot is not None:
        h = h + D[slot] * R[slot]

    L = (K + Lam * Cmat + Lam**2 * M).astype(complex)
    if slot is None:
        lu = _factor_with_rcond(L, m)
        rec = IndexCoeffs(m, np.zeros(n, complex), np.zeros(n, complex), R, Lam, f, V,
                          Vdot, C_m, D, slot, canonical=True, lu=lu, bordered=False)
        w, _ = index_solve(rec, h)
    else:
        # Bordered operator: the reduced coefficient removed the master
        # projection from h, so the solution with phi^T M w = 0 is the
        # regular limit; for xi > 0 it equals the plain solve.
        c = (M @ phi).astype(complex)
        # Characteristic magnitude of L's terms: L itself may cancel to zero
        # at exact resonance, but the border must stay on the matrix scale.
        lscale = (
            np.linalg.norm(K, 1)
            + abs(Lam) * np.linalg.norm(Cmat, 1)
            + abs(Lam) ** 2 * np.linalg.norm(M, 1)
        )
        gamma = max(lscale, 1e-300) / max(np.linalg.norm(c, 1), 1e-300)
        B = np.zeros((n + 1, n + 1), dtype=complex)
        B[:n, :n] = L
        B[:n, n] = gamma * c
        B[n, :n] = gamma * c
        lu = _factor_with_rcond(B, m)
        rec = IndexCoeffs(m, np.zeros(n, complex), np.zeros(n, complex), R, Lam, f, V,
                          Vdot, C_m, D, slot, canonical=True, lu=lu, bordered=True,
                          border_gamma=gamma)
        w, _ = index_solve(rec, h)

    # h can be a round-off-level difference of large terms (e.g. a 1-DOF
    # resonant index); accept residuals on that cancellation floor.
    cancel_scale = np.linalg.norm(C_m)
    if slot is not None:
        cancel_scale += abs(R[slot]) * np.linalg.norm(D[slot])
    resid = np.linalg.norm(L @ w - h)
    tol = SOLVE_RESIDUAL_RTOL * np.linalg.norm(h) + 100 * np.finfo(float).eps * cancel_scale
    if resid > tol:
        raise SsmError(
            f"cohomological solve at index {m} failed: residual {resid:.2e} above {tol:.2e}"
        )

    if m[0] == m[1]:
        # self-symmetric index: every quantity is real in exact arithmetic;
        # dropping the roundoff imaginary part makes the conjugacy invariant
        # hold by construction
        w = w.real.astype(complex)
        for arr in (rec.f, rec.V, rec.Vdot, rec.C):
            arr.imag = 0.0

    rec.w = w
    rec.wdot = Lam * w + (R[0] + R[1]) * phi + V
    exp.n_solves += 1
    return rec


def compute_ssm(
    model: MechModel,
    master: MasterPair,
    order_: int,
    from_expansion: SsmExpansion | None = None,
    full_set: bool = False,
) -> SsmExpansion:
    """Expansion up to the given odd order >= 3.

    Passing a lower-order expansion extends it: the recursion is lower
    triangular in order, so existing coefficients are reused unchanged.
    """
    if order_ < 3 or order_ % 2 == 0:
        raise ValueError(f"expansion order must be odd and >= 3, got {order_}")
    if from_expansion is None:
        exp = SsmExpansion(model, master, full_set=full_set)
    else:
        if from_expansion.model is not model or from_expansion.full_set != full_set:
            raise ValueError("extension requires the same model and full_set mode")
        exp = from_expansion
        if exp.order >= order_:
            return exp
    for q in range(exp.order + 1, order_ + 1):
        targets = all_indices(q) if full_set else canonical_indices(q)
        for m in targets:
            rec = order_step(model, exp, m)
            if full_set:
                rec.canonical = m[0] >= m[1]
            exp.data[m] = rec
            if not full_set and m[0] != m[1]:
                exp.data[symmetric(m)] = _conjugate_record(rec)
        exp.order = q
    return exp


# -- invariance residual -----------------------------------------------------


@dataclass(frozen=True)
class ErrorMeasure:
    """Relative residual of the invariance equation sampled on a theta grid."""

    epsilon: float
    rho_max: float
    theta_samples: int


@dataclass(frozen=True)
class AdaptResult:
    expansion: SsmExpansion
    error: ErrorMeasure
    warned: bool


def invariance_residual(
    model: MechModel, exp: SsmExpansion, rho: float, theta_samples: int = 32
) -> ErrorMeasure:
    """Relative residual of the invariance equation, max over the theta grid.

    The defect B dW/dp R - A W - F(W) is measured against A W + F(W) in a
    compliance-weighted state norm: the force-balance block is preconditioned
    by the static stiffness and the velocity block by the mass matrix and the
    natural frequency. A raw force-relative measure over-penalizes stiff
    components (e.g. axial FE DOFs) whose defect has no bearing on the master
    dynamics; the weighted measure tracks the accuracy of the predicted
    response itself.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    B, A = model.first_order_operators()
    n = model.n
    Kreg = model.K + 1e-14 * np.linalg.norm(model.K, 1) * np.eye(n)
    luK = scipy.linalg.lu_factor(Kreg)
    luM = scipy.linalg.lu_factor(model.M)
    omega = exp.master.omega

    def state_norm(vec: np.ndarray) -> float:
        s1 = scipy.linalg.lu_solve(luK, vec[:n])
        s2 = scipy.linalg.lu_solve(luM, vec[n:]) / omega
        return float(np.sqrt(np.linalg.norm(s1) ** 2 + np.linalg.norm(s2) ** 2))

    eps = 0.0
    for k in range(1, theta_samples + 1):
        theta = 2.0 * np.pi * k / theta_samples
        p = np.array([rho * np.exp(1j * theta), rho * np.exp(-1j * theta)])
        W = np.zeros(2 * n, dtype=complex)
        dW1 = np.zeros(2 * n, dtype=complex)
        dW2 = np.zeros(2 * n, dtype=complex)
        Rp = np.zeros(2, dtype=complex)
        for m, rec in exp.data.items():
            pm = monomial(p, m)
            Wm = np.concatenate([rec.w, rec.wdot])
            W += Wm * pm
            if m[0] > 0:
                dW1 += m[0] * monomial(p, (m[0] - 1, m[1])) * Wm
            if m[1] > 0:
                dW2 += m[1] * monomial(p, (m[0], m[1] - 1)) * Wm
            Rp += rec.R * pm
        x = W[:n]
        F = np.zeros(2 * n, dtype=complex)
        F[:n] = -(model.T2.force(x) + model.T3.force(x))
        rhs = A @ W + F
        lhs = B @ (dW1 * Rp[0] + dW2 * Rp[1])
        den = state_norm(rhs)
        if den == 0.0:
            raise SsmError("degenerate evaluation point: zero invariance denominator")
        eps = max(eps, state_norm(lhs - rhs) / den)
    return ErrorMeasure(eps, rho, theta_samples)


def adapt_order(
    model: MechModel,
    master: MasterPair,
    tol: float,
    rho: float,
    order_range: tuple[int, int] = (3, 13),
    theta_samples: int = 32,
) -> AdaptResult:
    """Smallest odd order in range whose residual at rho meets the tolerance.

    Returns the highest order with warned=True when none qualifies.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    lo, hi = order_range
    if lo % 2 == 0 or hi % 2 == 0 or lo < 3 or hi < lo:
        raise ValueError(f"order range must be odd bounds with 3 <= lo <= hi, got {order_range}")
    exp = None
    err = None
    for O in range(lo, hi + 1, 2):
        exp = compute_ssm(model, master, O, from_expansion=exp)
        err = invariance_residual(model, exp, rho, theta_samples)
        if err.epsilon <= tol:
            return AdaptResult(exp, err, False)
    return AdaptResult(exp, err, True)


def dump_expansion(exp: SsmExpansion) -> dict:
    """JSON-ready dump of all coefficients (golden-file regression format)."""
    entries = []
    for m in sorted(exp.data.keys(), key=lambda t: (order(t), -t[0])):
        rec = exp.data[m]
        entries.append(
            {
                "m1": m[0],
                "m2": m[1],
                "w_re": rec.w.real.tolist(),
                "w_im": rec.w.imag.tolist(),
                "wdot_re": rec.wdot.real.tolist(),
                "wdot_im": rec.wdot.imag.tolist(),
                "R1_re": rec.R[0].real,
                "R1_im": rec.R[0].imag,
                "R2_re": rec.R[1].real,
                "R2_im": rec.R[1].imag,
            }
        )
    return {
        "order": exp.order,
        "omega": exp.master.omega,
        "xi": exp.master.xi,
        "lambda_re": exp.master.lam.real,
        "lambda_im": exp.master.lam.imag,
        "phi": exp.master.phi.tolist(),
        "coefficients": entries,
    }
