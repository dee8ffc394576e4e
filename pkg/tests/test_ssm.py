import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ssmopt import compute_ssm, invariance_residual, leading_order, solve_master
from ssmopt.models import ChainSpec, build_chain
from ssmopt.multiindex import monomial, order, symmetric
from ssmopt.ssm import adapt_order


def make_duffing_exp(duffing, duffing_master, O=5):
    model, _ = duffing
    return model, compute_ssm(model, duffing_master, O)


class TestLeadingOrder:
    def test_unit_oscillator_coefficients(self, duffing, duffing_master):
        model, _ = duffing
        exp = leading_order(duffing_master, model)
        assert exp.w((1, 0))[0] == 1.0
        assert exp.R((1, 0))[0] == 1j

    def test_velocity_coefficient_definition(self, chain2, chain2_master):
        model, _ = chain2
        exp = leading_order(chain2_master, model)
        assert np.allclose(exp.wdot((1, 0)) - chain2_master.lam * exp.w((1, 0)), 0.0)

    def test_leading_conjugacy(self, chain2, chain2_master):
        model, _ = chain2
        exp = leading_order(chain2_master, model)
        assert np.array_equal(np.conj(exp.w((0, 1))), exp.w((1, 0)))


class TestOrderStep:
    def test_linear_model_all_higher_coefficients_vanish(self, linear_chain):
        model, _ = linear_chain
        exp = compute_ssm(model, solve_master(model, 0), 7)
        for m in exp.indices(min_order=2):
            assert np.abs(exp.w(m)).max() == 0.0
            assert np.abs(exp.R(m)).max() == 0.0

    def test_duffing_cubic_backbone_coefficient(self, duffing, duffing_master):
        # oracle: first-order harmonic balance Omega^2 = omega^2 + (3/4)g a^2
        # with a = 2 rho, Taylor-expanded: Omega = 1 + (3g/2) rho^2
        model, exp = make_duffing_exp(duffing, duffing_master, 3)
        gamma = 0.1
        assert exp.R((2, 1))[0].imag == pytest.approx(1.5 * gamma, abs=1e-12)
        assert exp.R((2, 1))[0].real == pytest.approx(0.0, abs=1e-14)

    def test_cohomological_residual_per_index(self, chain2, chain2_exp5):
        model, _ = chain2
        Cmat = model.damping()
        for m in chain2_exp5.indices(min_order=2):
            rec = chain2_exp5.coeffs(m)
            L = model.K + rec.Lam * Cmat + rec.Lam**2 * model.M
            h = rec.C.copy()
            if rec.slot is not None:
                h = h + rec.D[rec.slot] * rec.R[rec.slot]
            resid = np.linalg.norm(L @ rec.w - h)
            assert resid <= 1e-9 * np.linalg.norm(h) + 1e-14

    def test_even_orders_carry_no_reduced_dynamics(self, chain2_exp5):
        for m in chain2_exp5.indices(min_order=2):
            if order(m) % 2 == 0:
                assert np.abs(chain2_exp5.R(m)).max() == 0.0


class TestComputeSsm:
    def test_canonical_solve_counts(self, chain2, chain2_master):
        model, _ = chain2
        exp = compute_ssm(model, chain2_master, 3)
        # two canonical indices at order 2 and two at order 3
        assert exp.n_solves == 4

    def test_extension_preserves_lower_orders(self, chain2, chain2_master):
        model, _ = chain2
        e5 = compute_ssm(model, chain2_master, 5)
        snapshot = {m: e5.w(m).copy() for m in e5.indices(min_order=2)}
        e7 = compute_ssm(model, chain2_master, 7, from_expansion=e5)
        assert e7.order == 7
        for m, w in snapshot.items():
            assert np.array_equal(e7.w(m), w)

    def test_full_set_matches_canonical_conjugation(self):
        # independent full-index recomputation against the conjugate shortcut
        spec = ChainSpec(n_masses=3)
        model, _ = build_chain(spec)
        master = solve_master(model, 0)
        canon = compute_ssm(model, master, 7)
        full = compute_ssm(model, master, 7, full_set=True)
        for m in canon.indices(min_order=2):
            assert np.allclose(canon.w(m), full.w(m), rtol=0, atol=1e-13)
            assert np.allclose(canon.wdot(m), full.wdot(m), rtol=0, atol=1e-13)
            assert np.allclose(canon.R(m), full.R(m), rtol=0, atol=1e-13)

    def test_conjugacy_of_stored_records(self, chain2_exp5):
        for m in chain2_exp5.indices(min_order=2):
            ms = symmetric(m)
            assert np.array_equal(np.conj(chain2_exp5.w(m)), chain2_exp5.w(ms))
            assert np.array_equal(np.conj(chain2_exp5.R(m)[::-1]), chain2_exp5.R(ms))

    def test_rejects_even_order(self, chain2, chain2_master):
        model, _ = chain2
        with pytest.raises(ValueError):
            compute_ssm(model, chain2_master, 4)


class TestInvarianceResidual:
    def test_linear_model_is_exactly_invariant(self, linear_chain):
        model, _ = linear_chain
        exp = compute_ssm(model, solve_master(model, 0), 5)
        assert invariance_residual(model, exp, 0.5).epsilon <= 1e-12

    def test_monotone_in_order(self, duffing, duffing_master):
        model, _ = duffing
        eps = []
        exp = None
        for O in (3, 5, 7):
            exp = compute_ssm(model, duffing_master, O, from_expansion=exp)
            eps.append(invariance_residual(model, exp, 0.3).epsilon)
        assert eps[1] <= eps[0] and eps[2] <= eps[1]

    def test_vanishes_toward_origin(self, chain2, chain2_exp5):
        model, _ = chain2
        assert invariance_residual(model, chain2_exp5, 1e-8).epsilon <= 1e-10

    def test_unnormalized_defect_slope(self, chain2, chain2_master):
        # independent residual evaluation: with a nonzero quadratic
        # nonlinearity the absolute defect of the invariance equation scales
        # as rho**(order+1). Measured over a decade where the defect sits
        # well above the float64 roundoff floor.
        model, _ = chain2
        O = 3
        exp = compute_ssm(model, chain2_master, O)
        B, A = model.first_order_operators()
        n = model.n

        def defect(rho):
            worst = 0.0
            for k in range(1, 9):
                th = 2 * np.pi * k / 8
                p = np.array([rho * np.exp(1j * th), rho * np.exp(-1j * th)])
                W = np.zeros(2 * n, dtype=complex)
                d1 = np.zeros(2 * n, dtype=complex)
                d2 = np.zeros(2 * n, dtype=complex)
                R = np.zeros(2, dtype=complex)
                for m, rec in exp.data.items():
                    pm = monomial(p, m)
                    Wm = np.concatenate([rec.w, rec.wdot])
                    W += Wm * pm
                    if m[0]:
                        d1 += m[0] * monomial(p, (m[0] - 1, m[1])) * Wm
                    if m[1]:
                        d2 += m[1] * monomial(p, (m[0], m[1] - 1)) * Wm
                    R += rec.R * pm
                F = np.zeros(2 * n)
                F[:n] = -model.nonlinear_force(W[:n].real)
                worst = max(worst, np.linalg.norm(B @ (d1 * R[0] + d2 * R[1]) - A @ W - F))
            return worst

        rhos = np.array([3e-3, 3e-2])
        slope = np.log(defect(rhos[1]) / defect(rhos[0])) / np.log(rhos[1] / rhos[0])
        assert abs(slope - (O + 1)) <= 0.5

    def test_rejects_zero_amplitude(self, chain2, chain2_exp5):
        model, _ = chain2
        with pytest.raises(ValueError):
            invariance_residual(model, chain2_exp5, 0.0)


class TestAdaptOrder:
    def test_linear_model_stops_at_three(self, linear_chain):
        model, _ = linear_chain
        res = adapt_order(model, solve_master(model, 0), tol=1e-8, rho=0.5)
        assert res.expansion.order == 3 and not res.warned

    def test_infinite_tolerance_returns_three(self, chain2, chain2_master):
        model, _ = chain2
        res = adapt_order(model, chain2_master, tol=np.inf, rho=0.2)
        assert res.expansion.order == 3

    def test_warning_flag_when_range_exhausted(self, duffing, duffing_master):
        model, _ = duffing
        res = adapt_order(model, duffing_master, tol=1e-14, rho=0.5, order_range=(3, 5))
        assert res.warned and res.expansion.order == 5

    def test_order_increases_with_amplitude_on_beam(self, beam, beam_master, beam_center_dof):
        from ssmopt.backbone import rho_of_x

        model, _ = beam
        exp = compute_ssm(model, beam_master, 9)
        orders = []
        for xt in (0.0005, 0.002, 0.004):
            rho = rho_of_x(exp, beam_center_dof, xt)
            res = adapt_order(model, beam_master, tol=1e-3, rho=rho, order_range=(3, 9))
            orders.append(res.expansion.order)
        assert orders == sorted(orders)
        assert orders[-1] > orders[0]


class TestBackboneAgainstSimulation:
    def test_undamped_chain_ringdown_frequency(self):
        # oracle: time integration from an on-manifold initial condition; the
        # oscillation period must match the backbone prediction
        spec = ChainSpec(alpha_r=0.0, beta_r=0.0)
        model, _ = build_chain(spec)
        master = solve_master(model, 0)
        exp = compute_ssm(model, master, 7)
        from ssmopt.backbone import omega_of_rho

        n = model.n
        Minv = np.linalg.inv(model.M)

        def rhs(_t, z):
            x, v = z[:n], z[n:]
            return np.concatenate([v, -Minv @ (model.K @ x + model.nonlinear_force(x))])

        for rho in (0.05, 0.25):
            Om = omega_of_rho(exp, rho)
            W = np.zeros(2 * n, dtype=complex)
            for m, rec in exp.data.items():
                W += np.concatenate([rec.w, rec.wdot]) * rho ** order(m)
            z0 = W.real
            T = 2 * np.pi / Om
            sol = solve_ivp(rhs, (0, 3.2 * T), z0, rtol=1e-11, atol=1e-13, dense_output=True)
            tt = np.linspace(0, 3.2 * T, 8000)
            v = sol.sol(tt)[n]
            sgn = np.sign(v)
            idx = np.nonzero((sgn[:-1] > 0) & (sgn[1:] <= 0))[0]
            cross = [tt[i] - v[i] * (tt[i + 1] - tt[i]) / (v[i + 1] - v[i]) for i in idx]
            Om_sim = 2 * np.pi / np.diff(cross).mean()
            assert Om == pytest.approx(Om_sim, rel=2e-4)
