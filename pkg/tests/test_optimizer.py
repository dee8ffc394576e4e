import numpy as np
import pytest
from scipy.optimize import brentq

from ssmopt import compute_ssm, omega_of_rho, rho_of_x, solve_master
from ssmopt.errors import ConfigError
from ssmopt.models import ChainSpec, build_chain
from ssmopt.optimizer import (
    BackboneTarget,
    EigfreqTarget,
    OptProblem,
    OptTolerances,
    evaluate,
    objective_value_grad,
    order_policy,
    solve,
    trace_to_csv,
)


def chain_builder(mu):
    model, derivs = build_chain(
        ChainSpec(n_masses=2, mass=1.0, k=1.0, k2=0.5, k3=float(mu[0]), beta_r=0.1),
        params=("k3",),
    )
    return model, derivs


def chain_problem(target_omega, x0=0.35, **tol_kwargs):
    return OptProblem(
        builder=chain_builder,
        names=("k3",),
        mu0=np.array([0.2]),
        lower=np.array([-1.0]),
        upper=np.array([1.0]),
        objective={"type": "constant"},
        backbone_targets=(BackboneTarget(1, x0, target_omega),),
        tolerances=OptTolerances(
            constraint_tol=1e-8, max_iter=50, eps_tol=1e-2, **tol_kwargs
        ),
        start_order=5,
    )


@pytest.fixture(scope="module")
def chain_target():
    model, _ = chain_builder([0.2])
    master = solve_master(model, 0)
    exp = compute_ssm(model, master, 5)
    x0 = 0.35
    nominal = omega_of_rho(exp, rho_of_x(exp, 1, x0))
    return x0, nominal


class TestObjectiveRegistry:
    names = ("a", "b", "c")

    def test_constant(self):
        v, g = objective_value_grad({"type": "constant", "value": 2.0}, self.names, np.ones(3))
        assert v == 2.0 and np.all(g == 0.0)

    def test_variable(self):
        v, g = objective_value_grad({"type": "variable", "name": "b"}, self.names, np.array([1.0, 3.0, 5.0]))
        assert v == 3.0 and np.array_equal(g, [0.0, 1.0, 0.0])

    def test_linear(self):
        v, g = objective_value_grad(
            {"type": "linear", "coeffs": {"a": 2.0, "c": -1.0}, "offset": 1.0},
            self.names,
            np.array([1.0, 9.0, 4.0]),
        )
        assert v == pytest.approx(-1.0) and np.array_equal(g, [2.0, 0.0, -1.0])

    def test_product(self):
        v, g = objective_value_grad(
            {"type": "product", "vars": ["a", "c"]}, self.names, np.array([2.0, 9.0, 4.0])
        )
        assert v == 8.0 and np.array_equal(g, [4.0, 0.0, 2.0])

    def test_unknown_rejected(self):
        with pytest.raises(ConfigError):
            objective_value_grad({"type": "magic"}, self.names, np.ones(3))


class TestOrderPolicy:
    def test_unchanged_when_within_tolerance(self):
        assert order_policy(1e-3, 1e-2, 5, 13) == 5

    def test_bumped_by_two(self):
        assert order_policy(1.0, 1e-2, 3, 13) == 5

    def test_capped_at_max(self):
        assert order_policy(1.0, 1e-2, 13, 13) == 13


class TestEvaluate:
    def test_feasible_start_has_zero_violation(self, chain_target):
        x0, nominal = chain_target
        prob = chain_problem(nominal, x0)
        res = evaluate(prob, prob.mu0, order=5, reference=solve_master(chain_builder([0.2])[0], 0).phi,
                       omega_scale=nominal)
        assert abs(res.constraints[0]) <= 1e-12

    def test_gradient_against_fd(self, chain_target):
        x0, nominal = chain_target
        prob = chain_problem(0.98 * nominal, x0)
        ref = solve_master(chain_builder([0.2])[0], 0).phi
        res = evaluate(prob, prob.mu0, order=5, reference=ref, omega_scale=nominal)
        h = 1e-6
        up = evaluate(prob, prob.mu0 + h, order=5, reference=ref, omega_scale=nominal)
        dn = evaluate(prob, prob.mu0 - h, order=5, reference=ref, omega_scale=nominal)
        fd = (up.constraints[0] - dn.constraints[0]) / (2 * h)
        assert res.con_jac[0, 0] == pytest.approx(fd, rel=1e-5)

    def test_eigfreq_constraint_path(self, chain_target):
        x0, nominal = chain_target
        model, _ = chain_builder([0.2])
        master = solve_master(model, 0)
        prob = OptProblem(
            builder=chain_builder,
            names=("k3",),
            mu0=np.array([0.2]),
            lower=np.array([-1.0]),
            upper=np.array([1.0]),
            objective={"type": "constant"},
            eigfreq_targets=(EigfreqTarget(0, master.omega),),
        )
        res = evaluate(prob, prob.mu0, order=3, reference=master.phi, omega_scale=master.omega)
        assert abs(res.constraints[0]) <= 1e-12
        assert res.con_jac[0, 0] == 0.0  # k3 does not move the linear spectrum


class TestSolve:
    def test_feasible_start_converges_immediately(self, chain_target):
        x0, nominal = chain_target
        res = solve(chain_problem(nominal, x0))
        assert res.converged
        assert res.iterations <= 2
        assert abs(res.mu_star[0] - 0.2) <= 1e-6

    def test_chain_toy_matches_bisection(self, chain_target):
        # oracle: 1-D root solve on the same response
        x0, nominal = chain_target
        target = 0.98 * nominal
        res = solve(chain_problem(target, x0))
        assert res.converged

        def resid(k3):
            m, _ = chain_builder([k3])
            mm = solve_master(m, 0)
            e = compute_ssm(m, mm, 5)
            return omega_of_rho(e, rho_of_x(e, 1, x0)) - target

        k3_star = brentq(resid, -0.8, 0.5, xtol=1e-14)
        assert res.mu_star[0] == pytest.approx(k3_star, abs=1e-7)
        assert res.trace[-1].max_violation <= 1e-8 * res.omega_ref

    def test_replay_is_bitwise_deterministic(self, chain_target):
        x0, nominal = chain_target
        a = solve(chain_problem(0.99 * nominal, x0))
        b = solve(chain_problem(0.99 * nominal, x0))
        assert len(a.trace) == len(b.trace)
        for ra, rb in zip(a.trace, b.trace):
            assert np.array_equal(ra.mu, rb.mu)

    def test_gradient_method_switch_keeps_iterates(self, chain_target):
        x0, nominal = chain_target
        a = solve(chain_problem(0.99 * nominal, x0), method="adjoint")
        b = solve(chain_problem(0.99 * nominal, x0), method="direct")
        assert len(a.trace) == len(b.trace)
        for ra, rb in zip(a.trace, b.trace):
            assert np.allclose(ra.mu, rb.mu, rtol=1e-8, atol=1e-12)

    def test_stationarity_at_converged_point(self, chain_target):
        x0, nominal = chain_target
        res = solve(chain_problem(0.99 * nominal, x0))
        assert res.converged
        assert res.stationarity <= 1e-6

    def test_nonconverged_flagged(self, chain_target):
        x0, nominal = chain_target
        res = solve(chain_problem(0.5 * nominal, x0, max_order=5))  # unreachable shift
        assert not res.converged

    def test_trace_csv_shape(self, chain_target):
        x0, nominal = chain_target
        res = solve(chain_problem(0.99 * nominal, x0))
        text = trace_to_csv(res.trace)
        lines = text.strip().split("\n")
        assert lines[0].startswith("iteration,objective,max_violation,epsilon,order,mac,grad_norm")
        assert len(lines) == len(res.trace) + 1


class TestProblemValidation:
    def test_bounds_must_be_finite(self):
        with pytest.raises(ConfigError):
            OptProblem(
                builder=chain_builder,
                names=("k3",),
                mu0=np.array([0.2]),
                lower=np.array([-np.inf]),
                upper=np.array([1.0]),
                objective={"type": "constant"},
                backbone_targets=(BackboneTarget(1, 0.1, 0.6),),
            )

    def test_needs_constraint_or_objective(self):
        with pytest.raises(ConfigError):
            OptProblem(
                builder=chain_builder,
                names=("k3",),
                mu0=np.array([0.2]),
                lower=np.array([-1.0]),
                upper=np.array([1.0]),
                objective={"type": "constant"},
            )
