"""Command-line entry point: ``contractlab <subcommand> [--config PATH] ...``.

Exit codes: 0 when every check passes, 2 when a bound check fails, 1 on errors.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import bismut, harness, model, otdist, sde, zvonkin
from .errors import ContractLabError

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read_config(args, required=True):
    if not args.config:
        if required:
            raise UsageError("--config is required")
        return {}
    try:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    return doc


def _out_dir(args):
    out = os.environ.get("CONTRACTLAB_OUT") or args.out_dir
    if out:
        os.makedirs(out, exist_ok=True)
    return out


def _dump(obj, out, name):
    text = json.dumps(harness._jsonable(obj), sort_keys=True, indent=2) + "\n"
    if out:
        with open(os.path.join(out, name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    sys.stdout.write(text)


def _problem_doc(doc):
    return doc.get("problem", doc)


def _seed(args, section):
    return int(args.seed) if args.seed is not None else int(section.get("seed", 0))


def cmd_certificate(args):
    doc = _read_config(args)
    pdoc = _problem_doc(doc)
    cert_opts = doc.get("certificate", {})
    q = float(cert_opts.get("q", pdoc.get("profile", {}).get("q", 1.0)))
    cfg = harness.ExperimentConfig.from_dict({"problem": pdoc, "certificate": {**cert_opts, "q": q}})
    problem = model.load_problem(cfg.problem)
    cert = harness.build_certificate(cfg, problem)
    out = _out_dir(args)
    if out and cert.psi_table is not None:
        cert.psi_table.to_csv(os.path.join(out, "psi.csv"))
    _dump(cert.to_dict(), out, "certificate.json")
    return EXIT_OK


def cmd_simulate(args):
    doc = _read_config(args)
    sim = doc.get("simulation", {})
    problem = model.load_problem(_problem_doc(doc))
    cfg = sde.StepConfig(dt=float(sim.get("dt", 1e-3)), scheme=sim.get("scheme") or sde.default_scheme(problem),
                         eps_couple=sim.get("eps_couple"))
    T = float(sim.get("T", 1.0))
    times = sim.get("times") or np.linspace(0.0, T, int(sim.get("n_out", 41)))
    ens = sde.simulate_ensemble(problem, sim.get("x0", 1.0), sim.get("y0", 0.0), T, cfg,
                                int(sim.get("n_paths", 1000)), _seed(args, sim), times, args.threads)
    out = _out_dir(args) or "."
    path = os.path.join(out, "ensemble.csv")
    ens.to_csv(path)
    _dump({"ensemble_csv": path, "frac_coupled_final": float(ens.frac_coupled()[-1]),
           "problem_hash": ens.problem_hash}, None, "")
    return EXIT_OK


def cmd_wasserstein(args):
    a, b = otdist.load_cloud(args.a), otdist.load_cloud(args.b)
    w, plan = otdist.wq_empirical(a, b, args.q, args.method, args.eps)
    res = {"distance": w, "q": args.q, "method": plan.method, "bias_bound": plan.bias_bound, "n_a": a.n, "n_b": b.n}
    if args.n_boot:
        res["bootstrap_stderr"] = otdist.bootstrap_stderr(a, b, args.q, args.n_boot, args.seed or 0, args.method)
    _dump(res, _out_dir(args), "wasserstein.json")
    return EXIT_OK


def cmd_verify(args):
    doc = _read_config(args)
    if args.seed is not None:
        doc.setdefault("simulation", {})["seed"] = int(args.seed)
    doc.setdefault("simulation", {})["threads"] = args.threads
    cfg = harness.ExperimentConfig.from_dict(doc)
    out = _out_dir(args)
    report, _, _ = harness.run_experiment(cfg, out_dir=out)
    sys.stdout.write(report.to_json())
    return EXIT_OK if report.all_pass else EXIT_FAIL


_TEST_FUNCTIONS = {
    "identity": lambda y: y[:, 0],
    "sin": lambda y: np.sin(y[:, 0]),
    "tanh": lambda y: np.tanh(y[:, 0]),
    "square": lambda y: np.sum(y * y, axis=-1),
}


def cmd_bismut(args):
    doc = _read_config(args)
    opts = doc.get("bismut", {})
    problem = model.load_problem(_problem_doc(doc))
    name = opts.get("f", "identity")
    if name not in _TEST_FUNCTIONS:
        raise UsageError(f"unknown test function {name!r}; choose from {sorted(_TEST_FUNCTIONS)}")
    f = _TEST_FUNCTIONS[name]
    d = problem.dimension
    y = np.broadcast_to(np.asarray(opts.get("y", 0.5), float), (d,))
    v = np.broadcast_to(np.asarray(opts.get("v", 1.0), float), (d,))
    t, n, dt = float(opts.get("t", 1.0)), int(opts.get("n", 10_000)), float(opts.get("dt", 1e-3))
    seed = _seed(args, opts)
    est = bismut.bismut_gradient(problem, f, t, y, v, n, dt, seed)
    fd = bismut.fd_gradient(problem, f, t, y, v, float(opts.get("h", 1e-2)), n, dt, seed)
    gap = abs(est.value - fd.value)
    slack = 3.0 * float(np.hypot(est.stderr, fd.stderr))
    res = {"bismut": est.value, "bismut_stderr": est.stderr, "fd": fd.value, "fd_stderr": fd.stderr,
           "gap": gap, "slack": slack, "pass": bool(gap <= slack), "config": est.config, "f": name}
    _dump(res, _out_dir(args), "bismut.json")
    return EXIT_OK if res["pass"] else EXIT_FAIL


def cmd_zvonkin(args):
    doc = _read_config(args)
    opts = doc.get("zvonkin", {})
    Z = model.load_problem(_problem_doc(doc))
    if Z.dimension != 1:
        raise UsageError("the Zvonkin solver is one-dimensional")
    if Z.reference_drift is not None:
        Z = model.ProblemSpec(Z.reference_drift, Z.diffusion, Z.profile, Z.label, None, Z.doc)
    b = model.build_drift(opts.get("b", {"kind": "sine", "params": {"amp": 1.0}}), 1)
    cfg = zvonkin.ZvonkinConfig(lam=opts.get("lambda"), L=opts.get("L"), n_nodes=int(opts.get("n_nodes", 801)),
                                semigroup_eval=opts.get("semigroup_eval", "grid_pde"),
                                tol=float(opts.get("tol", 1e-8)), max_iter=int(opts.get("max_iter", 200)),
                                seed=_seed(args, opts))
    K1, K2 = float(opts.get("K1", 0.0)), float(opts.get("K2", 1.0))
    phi, info = zvonkin.solve_phi_auto(Z, b, cfg, K1, K2)
    out = _out_dir(args)
    if out:
        phi.to_csv(os.path.join(out, "phi.csv"))
    res = {"lambda": info["lambda"], "tried": info["tried"], "iterations": len(phi.iteration_history) + 1,
           "rho": list(phi.iteration_history), "diffeo": info["diffeo"]}
    if "A1" in opts:
        a1 = opts["A1"]
        res["monotonicity"] = zvonkin.transformed_drift_monotonicity(
            Z, phi, int(a1.get("n_pairs", 10_000)), float(a1.get("radius", 3.0)), cfg.seed,
            *(float(a1[k]) for k in ("K1", "K2", "K3", "K4", "beta")))
    ok = info["diffeo"]["passed"] and res.get("monotonicity", {}).get("passed", True)
    _dump(res, out, "zvonkin.json")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_probe_ultra(args):
    doc = _read_config(args)
    opts = doc.get("probe", {})
    problem = model.load_problem(_problem_doc(doc))
    res = bismut.ultracontractivity_probe(problem, float(opts.get("delta", 0.1)), opts.get("t_list", [0.5, 1.0, 2.0]),
                                          opts.get("x0_grid", [0.0, 1.0, 2.0]), int(opts.get("n", 2000)),
                                          float(opts.get("dt", 1e-3)), _seed(args, opts),
                                          float(opts.get("beta", 2.0)))
    _dump(res, _out_dir(args), "probe_ultra.json")
    return EXIT_OK if not res["overflow"] else EXIT_FAIL


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out-dir", default=None, help="output directory (CONTRACTLAB_OUT overrides)")
    parser = _Parser(prog="contractlab", description="Contraction certificates and coupling experiments.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    for name, fn, help_ in [
        ("certificate", cmd_certificate, "profile -> certificate JSON and psi table CSV"),
        ("simulate", cmd_simulate, "coupled ensemble CSV"),
        ("verify", cmd_verify, "run an experiment and check the bound"),
        ("bismut", cmd_bismut, "Bismut versus finite-difference gradient"),
        ("zvonkin", cmd_zvonkin, "one-dimensional Zvonkin solve"),
        ("probe-ultra", cmd_probe_ultra, "exponential-moment probe"),
    ]:
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
    p = sub.add_parser("wasserstein", parents=[common], help="distance between two sample CSVs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--method", choices=["exact", "entropic"], default="exact")
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--n-boot", type=int, default=0)
    p.set_defaults(func=cmd_wasserstein)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        sys.stderr.write(parser.format_usage())
        return EXIT_ERROR
    except (ContractLabError, ValueError, KeyError, TypeError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
