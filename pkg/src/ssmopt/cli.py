"""Batch command-line front-end.

Subcommands: backbone, sens, verify, optimize, bench. Everything but paths
and small overrides lives in a JSON config for reproducible runs. Exit codes:
0 success, 1 config/schema error, 2 model error, 3 expansion/sensitivity
error, 4 verification or convergence failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .backbone import backbone_to_csv, sample_backbone, x_rms
from .config import (
    load_config,
    make_builder,
    model_design_vector,
    resolve_model,
)
from .errors import ConfigError, ModelError, SsmError, SsmOptError
from .fdcheck import backbone_response, fd_gradient
from .models import ChainSpec, build_chain, chain_per_spring_k3
from .optimizer import (
    BackboneTarget,
    EigfreqTarget,
    OptProblem,
    OptTolerances,
    solve,
    trace_to_csv,
)
from .sens_adjoint import contract_gradient, solve_adjoint
from .sens_direct import chain_derivatives
from .spectral import mac, solve_master
from .ssm import adapt_order, compute_ssm, dump_expansion, invariance_residual
from .backbone import omega_of_rho, rho_of_x

EXIT_CONFIG = 1
EXIT_MODEL = 2
EXIT_SSM = 3
EXIT_FAILED = 4


def _write(outdir: Path, name: str, text: str):
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / name).write_text(text)
    print(f"wrote {outdir / name}")


def _json_dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _resolve_order(cfg_block, model, master, rho_probe, n_theta):
    order = cfg_block.get("order", "auto")
    if order == "auto":
        result = adapt_order(
            model,
            master,
            tol=cfg_block.get("eps_tol", 1e-3),
            rho=rho_probe,
            order_range=(3, cfg_block.get("max_order", 13)),
        )
        return result.expansion, result.error, result.warned
    exp = compute_ssm(model, master, int(order))
    err = invariance_residual(model, exp, rho_probe)
    return exp, err, False


def cmd_backbone(cfg: dict, outdir: Path) -> int:
    model, _, _ = resolve_model(cfg["model"])
    block = cfg["backbone"]
    master = solve_master(model, block.get("mode", 0))
    n_theta = block.get("n_theta", 128)
    dof = block["dof"]
    targets = block["x_targets"]

    # probe amplitude for the order decision: largest target mapped through a
    # low-order expansion first
    probe_exp = compute_ssm(model, master, 3)
    rho_probe = rho_of_x(probe_exp, dof, max(targets), n_theta)
    exp, err, warned = _resolve_order(block, model, master, rho_probe, n_theta)

    curve = sample_backbone(exp, dof, targets, n_theta)
    _write(outdir, "backbone.csv", backbone_to_csv(curve))
    _write(outdir, "expansion.json", _json_dumps(dump_expansion(exp)))
    _write(
        outdir,
        "error_report.json",
        _json_dumps(
            {
                "epsilon": err.epsilon,
                "rho_max": err.rho_max,
                "theta_samples": err.theta_samples,
                "order": exp.order,
                "order_warning": warned,
                "xi": exp.master.xi,
                "monotone": curve.monotone,
            }
        ),
    )
    if not curve.monotone:
        print("warning: sampled amplitude-frequency curve is not monotone in rho")
    return 0


def cmd_sens(cfg: dict, outdir: Path, verify_fd: bool) -> int:
    model, params, _ = resolve_model(cfg["model"])
    if params is None or params.count == 0:
        raise ConfigError("sensitivity needs a parametrized model (declare params)")
    block = cfg["sens"]
    master = solve_master(model, block.get("mode", 0))
    order = block.get("order", 5)
    n_theta = block.get("n_theta", 128)
    dof, x0 = block["dof"], block["x0"]
    exp = compute_ssm(model, master, order)
    rho = rho_of_x(exp, dof, x0, n_theta)

    methods = block.get("methods", ["adjoint"])
    results = {}
    for method in methods:
        t0 = time.perf_counter()
        if method == "adjoint":
            adj = solve_adjoint(model, exp, dof, rho, n_theta)
            grads = contract_gradient(model, exp, adj, params).d_omega
        else:
            grads = chain_derivatives(model, exp, params, dof, rho, n_theta).d_omega
        dt = time.perf_counter() - t0
        report = {
            "method": method,
            "order": order,
            "x0": x0,
            "rho": rho,
            "seconds": dt,
            "gradients": [
                {"param": nm, "dOmega": float(v)}
                for nm, v in zip(params.names, grads)
            ],
        }
        results[method] = grads
        _write(outdir, f"sens_{method}.json", _json_dumps(report))

    if verify_fd:
        builder = make_builder(cfg["model"])
        mu0, _ = model_design_vector(cfg["model"])
        fd = fd_gradient(
            lambda mu: backbone_response(
                lambda m: builder(m)[0],
                mu,
                x0=x0,
                dof_index=dof,
                order=order,
                n_theta=n_theta,
                reference=master.phi,
            ),
            mu0,
        )
        block_out = {"fd": fd.tolist()}
        for method, grads in results.items():
            rel = np.abs(grads - fd) / np.maximum(np.abs(fd), 1e-300)
            block_out[f"max_rel_err_{method}"] = float(rel.max())
        _write(outdir, "sens_fd_check.json", _json_dumps(block_out))
    return 0


def cmd_optimize(cfg: dict, outdir: Path, method_override: str | None) -> int:
    block = cfg["optimize"]
    builder = make_builder(cfg["model"])
    mu0, names = model_design_vector(cfg["model"])
    if "mu0" in block:
        mu0 = np.asarray(block["mu0"], dtype=float)
    lower = np.asarray(block["bounds"]["lower"], dtype=float)
    upper = np.asarray(block["bounds"]["upper"], dtype=float)
    bb = tuple(
        BackboneTarget(c["dof"], c["x"], c["omega"])
        for c in block["constraints"]
        if c["type"] == "backbone"
    )
    ef = tuple(
        EigfreqTarget(c["mode"], c["omega"])
        for c in block["constraints"]
        if c["type"] == "eigfreq"
    )
    tol = OptTolerances(**block.get("tolerances", {}))
    problem = OptProblem(
        builder=builder,
        names=names,
        mu0=mu0,
        lower=lower,
        upper=upper,
        objective=block["objective"],
        backbone_targets=bb,
        eigfreq_targets=ef,
        tolerances=tol,
        mode_index=block.get("mode", 0),
    )
    method = method_override or block.get("method", "adjoint")
    result = solve(problem, method=method)
    _write(outdir, "trace.csv", trace_to_csv(result.trace))
    _write(
        outdir,
        "summary.json",
        _json_dumps(
            {
                "converged": result.converged,
                "iterations": result.iterations,
                "message": result.message,
                "mu_star": result.mu_star.tolist(),
                "names": list(names),
                "objective": result.objective,
                "omega_ref": result.omega_ref,
                "stationarity": result.stationarity,
                "seconds": result.seconds,
                "method": method,
            }
        ),
    )
    if not result.converged:
        print(f"optimization did not converge: {result.message}")
        return EXIT_FAILED
    return 0


def cmd_bench(cfg: dict, outdir: Path) -> int:
    block = cfg.get("bench", {})
    n_masses = block.get("n_masses", 101)
    param_counts = block.get("param_counts", [1, 10, 100])
    orders = block.get("orders", [3, 5, 7])
    x0 = block.get("x0", 0.05)
    repeats = block.get("repeats", 3)

    spec = ChainSpec(n_masses=n_masses, alpha_r=0.0, beta_r=0.02)
    model, _ = build_chain(spec)
    master = solve_master(model, 0)
    rows = ["method,order,nparams,seconds"]
    for order in orders:
        exp = compute_ssm(model, master, order)
        rho = rho_of_x(exp, n_masses - 1, x0)
        for count in param_counts:
            params = chain_per_spring_k3(spec, count)
            best = {"direct": np.inf, "adjoint": np.inf}
            for _ in range(repeats):
                t0 = time.perf_counter()
                chain_derivatives(model, exp, params, n_masses - 1, rho)
                best["direct"] = min(best["direct"], time.perf_counter() - t0)
                t0 = time.perf_counter()
                adj = solve_adjoint(model, exp, n_masses - 1, rho)
                contract_gradient(model, exp, adj, params)
                best["adjoint"] = min(best["adjoint"], time.perf_counter() - t0)
            for method in ("direct", "adjoint"):
                rows.append(f"{method},{order},{count},{best[method]:.6e}")
                print(rows[-1])
    _write(outdir, "bench.csv", "\n".join(rows) + "\n")
    return 0


def cmd_verify(cfg: dict | None, outdir: Path) -> int:
    """Structural-invariant suite; prints one pass/fail line per invariant."""
    failures = 0

    def check(name: str, ok: bool, detail: str = ""):
        nonlocal failures
        tag = "PASS" if ok else "FAIL"
        print(f"[{tag}] {name}" + (f" ({detail})" if detail else ""))
        failures += 0 if ok else 1

    model, _ = build_chain(ChainSpec())
    master = solve_master(model, 0)
    exp = compute_ssm(model, master, 7)

    worst = 0.0
    for m, rec in exp.data.items():
        q = m[0] + m[1]
        if q >= 2 and q % 2 == 0:
            worst = max(worst, float(np.abs(rec.R).max()))
    check("even-order reduced coefficients identically zero", worst == 0.0, f"max |R| = {worst:.1e}")

    om0 = omega_of_rho(exp, 0.0)
    check(
        "backbone at zero amplitude equals the damped frequency",
        om0 == master.omega_d,
        f"Omega(0)={om0!r}, omega_d={master.omega_d!r}",
    )

    rho = 0.3
    xa = x_rms(exp, 1, rho, 64)
    xb = x_rms(exp, 1, rho, 128)
    check(
        "theta-grid RMS amplitude is grid-size exact",
        abs(xa - xb) <= 1e-12 * max(xa, 1.0),
        f"|x(64)-x(128)| = {abs(xa - xb):.2e}",
    )

    rng = np.random.default_rng(42)
    ok = True
    for _ in range(20):
        a = rng.normal(size=5)
        b = rng.normal(size=5)
        s = rng.uniform(0.1, 10.0) * np.sign(rng.normal())
        if abs(mac(a, b) - mac(s * a, b)) > 1e-12:
            ok = False
    check("MAC is invariant under nonzero scaling", ok)

    print(f"{failures} failures")
    return 0 if failures == 0 else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ssmopt",
        description="Backbone curves and backbone tailoring via 2D SSM reduction",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, needs_config in (
        ("backbone", True),
        ("sens", True),
        ("optimize", True),
        ("bench", False),
        ("verify", False),
    ):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=needs_config, help="JSON run configuration")
        sp.add_argument("--out", default="out", help="output directory")
        if name == "sens":
            sp.add_argument(
                "--verify-fd",
                action="store_true",
                help="add a central finite-difference verification block",
            )
        if name == "backbone":
            sp.add_argument("--order", help="expansion order (odd integer or 'auto')")
            sp.add_argument("--eps-tol", type=float, help="residual tolerance for 'auto'")
        if name == "optimize":
            sp.add_argument("--method", choices=["adjoint", "direct"])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    outdir = Path(args.out)
    try:
        cfg = None
        if getattr(args, "config", None):
            cfg = load_config(args.config, args.command)
        if args.command == "backbone":
            if args.order is not None:
                cfg["backbone"]["order"] = (
                    "auto" if args.order == "auto" else int(args.order)
                )
            if args.eps_tol is not None:
                cfg["backbone"]["eps_tol"] = args.eps_tol
            return cmd_backbone(cfg, outdir)
        if args.command == "sens":
            return cmd_sens(cfg, outdir, args.verify_fd)
        if args.command == "optimize":
            return cmd_optimize(cfg, outdir, args.method)
        if args.command == "bench":
            return cmd_bench(cfg or {}, outdir)
        if args.command == "verify":
            return cmd_verify(cfg, outdir)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelError as e:
        print(f"model error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except SsmError as e:
        print(f"computation error: {e}", file=sys.stderr)
        return EXIT_SSM
    except SsmOptError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
