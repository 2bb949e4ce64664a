"""Experiment orchestration and bound verification."""

import csv
import datetime as _dt
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__, auxfun, model, otdist, rng, sde
from .errors import ConfigError, ContractLabError, StageError

REPORT_COLUMNS = ["t", "emp_psi", "stderr_psi", "u_theta", "allowance", "w_hat", "w_stderr", "bound", "pass"]
TIMESTAMP_KEY = "generated_at"


@dataclass(frozen=True)
class ExperimentConfig:
    problem: dict
    q: float = 1.0
    point: Optional[tuple] = None  # (ktilde2, v0); None: search
    search_box: tuple = ((0.05, 20.0), (0.05, 20.0))
    kappa_scale: float = 1.0  # != 1 only for negative controls
    x0: tuple = (2.0,)
    y0: tuple = (0.0,)
    T: float = 4.0
    dt: float = 1e-3
    n_paths: int = 10_000
    seed: int = 0
    times: Optional[tuple] = None
    n_out: int = 41
    scheme: Optional[str] = None
    wasserstein: bool = True
    w_method: str = "exact"
    w_eps: Optional[float] = None
    w_paths: Optional[int] = None
    n_boot: int = 200
    threads: int = 1
    out_dir: Optional[str] = None
    name: str = "experiment"

    def __post_init__(self):
        prof = self.problem.get("profile") if isinstance(self.problem, dict) else None
        if prof is not None and "q" in prof and abs(float(prof["q"]) - self.q) > 1e-12:
            raise ConfigError(f"q={self.q} disagrees with the profile's q={prof['q']}")
        if self.times is not None and (min(self.times) < 0 or max(self.times) > self.T + 1e-12):
            raise ConfigError("output times must lie in [0, T]")
        if self.T <= 0 or self.dt <= 0 or self.n_paths < 1:
            raise ConfigError("T, dt and n_paths must be positive")

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if "problem" not in doc:
            raise ConfigError("config needs a 'problem' entry")
        cert = doc.get("certificate", {})
        sim = doc.get("simulation", {})
        ws = doc.get("wasserstein", {})
        rep = doc.get("report", {})
        problem = doc["problem"]
        q = float(cert.get("q", sim.get("q", 1.0)))
        if "builtin" in problem:
            params = dict(problem.get("params", {}))
            params.setdefault("q", q)
            problem = {"builtin": problem["builtin"], "params": params}
        point = cert.get("point")
        if isinstance(point, dict):
            point = (float(point["ktilde2"]), float(point["v0"]))
        kw = dict(
            problem=problem, q=q, point=tuple(point) if point is not None else None,
            x0=tuple(np.atleast_1d(sim.get("x0", 2.0)).tolist()), y0=tuple(np.atleast_1d(sim.get("y0", 0.0)).tolist()),
            T=float(sim.get("T", 4.0)), dt=float(sim.get("dt", 1e-3)), n_paths=int(sim.get("n_paths", 10_000)),
            seed=int(sim.get("seed", doc.get("seed", 0))), n_out=int(sim.get("n_out", 41)),
            scheme=sim.get("scheme"), threads=int(sim.get("threads", 1)),
            wasserstein=bool(ws.get("enabled", True)), w_method=ws.get("method", "exact"), w_eps=ws.get("eps"),
            w_paths=ws.get("n_paths"), n_boot=int(ws.get("n_boot", 200)),
            out_dir=rep.get("out_dir"), name=rep.get("name", doc.get("name", "experiment")),
        )
        if "kappa_scale" in cert:
            kw["kappa_scale"] = float(cert["kappa_scale"])
        if "search_box" in cert:
            kw["search_box"] = tuple(tuple(map(float, b)) for b in cert["search_box"])
        if sim.get("times") is not None:
            kw["times"] = tuple(float(t) for t in sim["times"])
        return cls(**kw)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class VerificationReport:
    rows: list
    metadata: dict = field(default_factory=dict)

    @property
    def all_pass(self):
        return all(r["pass"] for r in self.rows)

    @property
    def n_fail(self):
        return sum(not r["pass"] for r in self.rows)

    def to_dict(self, timestamp=True):
        meta = dict(self.metadata)
        if timestamp:
            meta[TIMESTAMP_KEY] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        return {"metadata": meta, "rows": self.rows, "all_pass": self.all_pass, "n_fail": self.n_fail}

    def to_json(self, timestamp=True):
        return json.dumps(_jsonable(self.to_dict(timestamp)), sort_keys=True, indent=2) + "\n"

    def write(self, path_stem):
        with open(f"{path_stem}.json", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())
        with open(f"{path_stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])


def strip_timestamp(text):
    """Report JSON with the timestamp field removed, for byte comparisons."""
    doc = json.loads(text)
    doc.get("metadata", {}).pop(TIMESTAMP_KEY, None)
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if v is None:
        return ""
    return f"{v:.12g}"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def verify_bound(ensemble, psi, cert, problem, w_hat=None, w_stderr=None):
    """Per-time check Êψ(|X_t−Y_t|^p) ≤ U_θ(t) + 3·stderr + 2κ·dt·U_θ(t)."""
    if ensemble.problem_hash != problem.hash:
        raise ConfigError("ensemble was simulated for a different problem")
    if cert.profile_hash != auxfun.profile_hash(problem.profile, problem.diffusion.sigma0):
        raise ConfigError("certificate was built for a different profile")
    psi = psi if psi is not None else cert.psi_table
    p, q = cert.p, cert.q
    mean, se = ensemble.psi_stats(psi.psi, p)
    r0 = float(np.linalg.norm(np.subtract(ensemble.x0, ensemble.y0)))
    v0 = r0 ** p
    psi0 = float(psi.psi(v0)) if v0 > 0 else 0.0
    t = ensemble.times
    u = auxfun.u_theta(cert, psi0, t)
    allow = 2.0 * cert.kappa * ensemble.step_config.dt * u
    bound = auxfun.theoretical_bound(cert, q, r0, t)
    rows = []
    for k in range(len(t)):
        rows.append({
            "t": float(t[k]), "emp_psi": float(mean[k]), "stderr_psi": float(se[k]), "u_theta": float(u[k]),
            "allowance": float(allow[k]),
            "w_hat": None if w_hat is None else float(w_hat[k]),
            "w_stderr": None if w_stderr is None else float(w_stderr[k]),
            "bound": float(bound[k]),
            "pass": bool(mean[k] <= u[k] + 3.0 * se[k] + allow[k]),
        })
    meta = {"certificate": cert.to_dict(), "problem_hash": problem.hash, "n_paths": ensemble.n_paths,
            "master_seed": ensemble.master_seed, "dt": ensemble.step_config.dt,
            "scheme": ensemble.step_config.scheme, "x0": list(ensemble.x0), "y0": list(ensemble.y0),
            "pass_rule": "emp_psi <= u_theta + 3*stderr_psi + 2*kappa*dt*u_theta", "version": __version__}
    return VerificationReport(rows, meta)


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except ContractLabError as exc:
        raise StageError(name, exc) from exc
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def build_certificate(cfg, problem):
    prof = problem.profile
    if prof is None:
        raise ConfigError("problem has no dissipativity profile")
    sigma0 = problem.diffusion.sigma0
    p = 2.0 * cfg.q - 1.0
    if cfg.point is not None:
        return auxfun.certificate(prof, sigma0, p, auxfun.FeasiblePoint(*cfg.point))
    return auxfun.optimize_certificate(prof, sigma0, cfg.q, cfg.search_box)[1]


def _marginal_seeds(cfg):
    sx = rng.derive_seed(cfg.seed, "marginal", "x0")
    # identical starts have identical laws: share the stream so the estimate is exactly 0
    if np.array_equal(np.atleast_1d(cfg.x0), np.atleast_1d(cfg.y0)):
        return [sx, sx]
    return [sx, rng.derive_seed(cfg.seed, "marginal", "y0")]


def marginal_wasserstein(problem, cfg, step_cfg, times):
    """Ŵ_q(t) and bootstrap stderr from independent ensembles started at x0 and y0."""
    n = cfg.w_paths or cfg.n_paths
    sx, sy = _marginal_seeds(cfg)
    _, xs = sde.simulate_marginal(problem, cfg.x0, cfg.T, step_cfg, n, sx, times, cfg.threads)
    _, ys = sde.simulate_marginal(problem, cfg.y0, cfg.T, step_cfg, n, sy, times, cfg.threads)
    w, s = np.zeros(len(times)), np.zeros(len(times))
    for k in range(len(times)):
        a = otdist.EmpiricalMeasure.from_samples(xs[k])
        b = otdist.EmpiricalMeasure.from_samples(ys[k])
        w[k] = otdist.wq_empirical(a, b, cfg.q, cfg.w_method, cfg.w_eps)[0]
        s[k] = otdist.bootstrap_stderr(a, b, cfg.q, cfg.n_boot, rng.derive_seed(cfg.seed, "boot", k), cfg.w_method)
    return w, s


def run_experiment(cfg, out_dir=None, cert_override=None):
    """Certificate, coupled ensemble, ψ statistics, marginal Ŵ_q and the report.

    ``cert_override`` maps the built certificate to another one (negative controls).
    Files are written when ``out_dir`` (or the config's) is set.
    """
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    problem = _stage("problem", model.load_problem, cfg.problem)
    cert = _stage("certificate", build_certificate, cfg, problem)
    if cfg.kappa_scale != 1.0:
        cert = cert.with_kappa(cfg.kappa_scale * cert.kappa)
    if cert_override is not None:
        cert = cert_override(cert)
    scheme = cfg.scheme or sde.default_scheme(problem)
    step_cfg = sde.StepConfig(dt=cfg.dt, scheme=scheme)
    times = np.asarray(cfg.times) if cfg.times is not None else np.linspace(0.0, cfg.T, cfg.n_out)
    ens = _stage("simulation", sde.simulate_ensemble, problem, cfg.x0, cfg.y0, cfg.T, step_cfg, cfg.n_paths,
                 cfg.seed, times, cfg.threads)
    w_hat = w_se = None
    if cfg.wasserstein:
        w_hat, w_se = _stage("wasserstein", marginal_wasserstein, problem, cfg, step_cfg, ens.times)
    report = _stage("verification", verify_bound, ens, cert.psi_table, cert, problem, w_hat, w_se)
    report.metadata.update({"name": cfg.name, "seed": cfg.seed, "q": cfg.q, "T": cfg.T,
                            "kappa_scale": cfg.kappa_scale,
                            "marginal_seeds": _marginal_seeds(cfg)
                            if cfg.wasserstein else None,
                            "w_method": cfg.w_method if cfg.wasserstein else None})
    out_dir = out_dir or cfg.out_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        stem = os.path.join(out_dir, cfg.name)
        report.write(stem + "_report")
        with open(stem + "_certificate.json", "w", newline="\n") as fh:
            fh.write(cert.to_json() + "\n")
        if cert.psi_table is not None:
            cert.psi_table.to_csv(stem + "_psi.csv")
        ens.to_csv(stem + "_ensemble.csv", cert.psi_table.psi if cert.psi_table is not None else None, cert.p)
    return report, cert, ens


def log_slope_fit(t, w):
    """Least-squares slope and R² of log w against t."""
    t = np.asarray(t, dtype=float)
    y = np.log(np.asarray(w, dtype=float))
    A = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return float(coef[0]), r2
