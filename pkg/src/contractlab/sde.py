"""Euler schemes for the split SDE, the reflection-coupled pair and the variation flow.

The diffusion is split as σσ* = σ̃σ̃* + σ₀²I: the σ̃ part is driven
synchronously for both components, the σ₀ part by mirrored noise.
"""

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng
from .errors import DomainError, SimulationError
from .linalg import sqrt_psd  # noqa: F401  (re-exported)

SCHEMES = ("euler", "tamed_euler")


@dataclass(frozen=True)
class StepConfig:
    dt: float = 1e-3
    scheme: str = "euler"
    eps_couple: Optional[float] = None  # default 1e-5·|x0−y0|
    magnitude_cap: float = 1e8
    # also merge when the discrete difference crosses zero or a Brownian-bridge
    # draw says the continuous difference hit zero inside the step
    bridge: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be > 0")
        if self.scheme not in SCHEMES:
            raise DomainError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class PairState:
    t: float
    x: np.ndarray
    y: np.ndarray
    coupled: bool = False
    tau: Optional[float] = None

    def __post_init__(self):
        if self.coupled and not np.array_equal(self.x, self.y):
            raise DomainError("coupled pair must have x == y")


def default_scheme(spec):
    return "tamed_euler" if spec.drift.growth_class != "globally-Lipschitz" else "euler"


def _sigma_tilde_fn(spec):
    diff = spec.diffusion
    d = spec.dimension
    if diff.constant is not None:
        m = diff.constant
        st = sqrt_psd(m @ m.T - diff.sigma0 ** 2 * np.eye(d), neg_tol=1e-8)
        if not np.any(st):
            return lambda t, x: None
        return lambda t, x: st

    def f(t, x):
        s = diff.evaluator(t, x)
        a = s @ np.swapaxes(s, -1, -2) - diff.sigma0 ** 2 * np.eye(d)
        return sqrt_psd(0.5 * (a + np.swapaxes(a, -1, -2)), neg_tol=1e-8)
    return f


def _apply(mat, noise):
    if mat is None:
        return 0.0
    if mat.ndim == 2:
        return noise @ mat.T
    return np.einsum("...ij,...j->...i", mat, noise)


def _drift_increment(spec, t, x, dt, scheme):
    # drift time at the step midpoint: drifts singular at t = 0 stay integrable
    b = spec.drift.evaluator(t + 0.5 * dt, x)
    if scheme == "tamed_euler":
        nb = np.linalg.norm(b, axis=-1, keepdims=True)
        b = b / (1.0 + dt * nb)
    return b * dt


def _check(x, t, cap, step=None, paths=None):
    bad = ~np.all(np.isfinite(x), axis=-1) | (np.linalg.norm(x, axis=-1) > cap)
    if np.any(bad):
        i = int(np.flatnonzero(np.atleast_1d(bad))[0])
        path = None if paths is None else int(np.atleast_1d(paths)[i])
        raise SimulationError(f"state left the finite region at t={t:.6g}", step=step, path=path, time=t)


def em_step(spec, x, dt, noise1, noise2, t=0.0, scheme="euler", cap=np.inf):
    """x + b̃dt + σ̃(x)·noise1 + σ₀·noise2; noises are N(0, dt·I) draws."""
    x = np.asarray(x, dtype=float)
    st = _sigma_tilde_fn(spec)(t, x)
    out = x + _drift_increment(spec, t, x, dt, scheme) + _apply(st, noise1) + spec.diffusion.sigma0 * noise2
    _check(out, t + dt, cap)
    return out


def reflection_matrix(z, eps=0.0):
    z = np.asarray(z, dtype=float)
    n = np.linalg.norm(z)
    if not n > eps:
        raise DomainError("reflection of a (near) zero vector")
    u = z / n
    return np.eye(len(z)) - 2.0 * np.outer(u, u)


def _pair_batch(spec, t, x, y, coupled, tau, cfg, n1, n2, u, st_fn, eps):
    """Vectorised coupled step; returns (x′, y′, coupled′, tau′)."""
    dt = cfg.dt
    s0 = spec.diffusion.sigma0
    tn = t + dt
    z = x - y
    r = np.linalg.norm(z, axis=-1)
    active = ~coupled
    unit = np.zeros_like(z)
    unit[active] = z[active] / r[active, None]
    st_x = st_fn(t, x)
    xn = x + _drift_increment(spec, t, x, dt, cfg.scheme) + _apply(st_x, n1) + s0 * n2
    refl = n2 - 2.0 * unit * np.sum(unit * n2, axis=-1, keepdims=True)
    st_y = st_fn(t, y)
    yn = y + _drift_increment(spec, t, y, dt, cfg.scheme) + _apply(st_y, n1) + s0 * refl
    zn = xn - yn
    hit = np.linalg.norm(zn, axis=-1) <= eps
    if cfg.bridge:
        along = np.sum(zn * unit, axis=-1)
        hit |= along <= 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            p_hit = np.exp(-r * np.maximum(along, 0.0) / (2.0 * s0 ** 2 * dt))
        hit |= u < p_hit
    newly = active & hit
    yn = np.where((coupled | newly)[:, None], xn, yn)
    tau = np.where(newly, tn, tau)
    return xn, yn, coupled | newly, tau


def coupled_step(spec, pair, cfg, noise1, noise2, u=1.0):
    """One step of the reflection-coupled pair.  ``u`` is the bridge uniform (1 disables it)."""
    x = np.atleast_2d(pair.x).astype(float)
    y = np.atleast_2d(pair.y).astype(float)
    eps = cfg.eps_couple if cfg.eps_couple is not None else 0.0
    if pair.coupled:
        xn = em_step(spec, x, cfg.dt, np.atleast_2d(noise1), np.atleast_2d(noise2), pair.t, cfg.scheme,
                     cfg.magnitude_cap)
        return PairState(pair.t + cfg.dt, xn[0], xn[0].copy(), True, pair.tau)
    if np.linalg.norm(x - y) <= eps:
        raise DomainError("pair already within eps_couple; mark it coupled")
    xn, yn, c, tau = _pair_batch(spec, pair.t, x, y, np.array([False]), np.array([np.nan]), cfg,
                                 np.atleast_2d(noise1), np.atleast_2d(noise2), np.atleast_1d(u),
                                 _sigma_tilde_fn(spec), eps)
    _check(xn, pair.t + cfg.dt, cfg.magnitude_cap)
    _check(yn, pair.t + cfg.dt, cfg.magnitude_cap)
    return PairState(pair.t + cfg.dt, xn[0], yn[0], bool(c[0]), float(tau[0]) if c[0] else None)


# --------------------------------------------------------------------------
# ensembles
# --------------------------------------------------------------------------

def output_grid(T, dt, times=None, n_out=41):
    if times is None:
        times = np.linspace(0.0, T, n_out)
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(times > T + 1e-12) or np.any(np.diff(times) <= 0):
        raise DomainError("output times must be increasing within [0, T]")
    steps = np.floor(times / dt + 1e-9).astype(int)
    return times, steps


@dataclass
class CoupledEnsemble:
    times: np.ndarray
    dist: np.ndarray  # (n_paths, n_times) |X_t − Y_t|
    tau: np.ndarray  # coupling times, inf if not coupled by T
    n_paths: int
    master_seed: int
    step_config: StepConfig
    problem_hash: str = ""
    x0: tuple = ()
    y0: tuple = ()
    x_final: np.ndarray = field(default=None, repr=False)
    y_final: np.ndarray = field(default=None, repr=False)

    def frac_coupled(self):
        return np.mean(self.tau[:, None] <= self.times[None, :] + 1e-12, axis=0)

    def survival(self, t):
        return float(np.mean(self.tau > t))

    def psi_stats(self, psi=None, p=1.0):
        """Mean and standard error of ψ(|X_t−Y_t|^p) per output time."""
        v = self.dist ** p
        if psi is None:
            vals = v
        else:
            vals = np.zeros_like(v)
            pos = v > 0
            vals[pos] = psi(v[pos])
        n = self.n_paths
        # shifted by the first path: exact when a column is constant (t = 0, x0 = y0)
        shifted = vals - vals[0]
        mean = vals[0] + shifted.mean(axis=0)
        se = shifted.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
        return mean, se

    def summary_rows(self, psi=None, p=1.0):
        mp, sp = self.psi_stats(psi, p)
        md = self.dist.mean(axis=0)
        fc = self.frac_coupled()
        return [{"t": float(t), "mean_dist": float(a), "mean_psi_dist": float(b), "stderr_psi": float(c),
                 "frac_coupled": float(f)} for t, a, b, c, f in zip(self.times, md, mp, sp, fc)]

    def to_csv(self, path, psi=None, p=1.0):
        cols = ["t", "mean_dist", "mean_psi_dist", "stderr_psi", "frac_coupled"]
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(cols) + "\n")
            for row in self.summary_rows(psi, p):
                fh.write(",".join(f"{row[c]:.12g}" for c in cols) + "\n")
        side = {"n_paths": self.n_paths, "master_seed": self.master_seed, "problem_hash": self.problem_hash,
                "x0": list(self.x0), "y0": list(self.y0),
                "step_config": {"dt": self.step_config.dt, "scheme": self.step_config.scheme,
                                "eps_couple": self.step_config.eps_couple,
                                "magnitude_cap": self.step_config.magnitude_cap,
                                "bridge": self.step_config.bridge}}
        with open(str(path) + ".json", "w", newline="\n") as fh:
            json.dump(side, fh, sort_keys=True, indent=2)


def _chunks(n, threads, chunk):
    size = chunk or max(1, math.ceil(n / max(threads, 1)))
    return [np.arange(a, min(a + size, n)) for a in range(0, n, size)]


def _run_pairs(spec, x0, y0, cfg, n_steps, steps_out, seed, paths, eps):
    n, d = len(paths), spec.dimension
    x = np.broadcast_to(x0, (n, d)).astype(float).copy()
    y = np.broadcast_to(y0, (n, d)).astype(float).copy()
    init = np.linalg.norm(x - y, axis=-1) <= eps
    coupled = init.copy()
    y[coupled] = x[coupled]
    tau = np.where(coupled, 0.0, np.inf)
    out = np.zeros((n, len(steps_out)))
    st_fn = _sigma_tilde_fn(spec)
    sq = math.sqrt(cfg.dt)
    k_out = 0
    while k_out < len(steps_out) and steps_out[k_out] == 0:
        out[:, k_out] = np.linalg.norm(x - y, axis=-1)
        k_out += 1
    for k in range(n_steps):
        t = k * cfg.dt
        n1 = sq * rng.normals(seed, paths, k, rng.STREAM_W1, d)
        n2 = sq * rng.normals(seed, paths, k, rng.STREAM_W2, d)
        u = rng.uniforms(seed, paths, k, rng.STREAM_BRIDGE, 1)[:, 0] if cfg.bridge else np.ones(n)
        x, y, coupled, tau = _pair_batch(spec, t, x, y, coupled, tau, cfg, n1, n2, u, st_fn, eps)
        try:
            _check(x, t + cfg.dt, cfg.magnitude_cap, k, paths)
            _check(y, t + cfg.dt, cfg.magnitude_cap, k, paths)
        except SimulationError as exc:
            raise SimulationError(str(exc), step=k, path=exc.path, time=t + cfg.dt) from None
        while k_out < len(steps_out) and steps_out[k_out] == k + 1:
            out[:, k_out] = np.linalg.norm(x - y, axis=-1)
            k_out += 1
    tau = np.where(init, 0.0, tau)
    return out, tau, x, y


def simulate_ensemble(spec, x0, y0, T, cfg=None, n_paths=1000, master_seed=0, times=None, threads=1,
                      chunk=None):
    """Simulate ``n_paths`` reflection-coupled pairs from (x0, y0) up to T."""
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    d = spec.dimension
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (d,))
    y0 = np.broadcast_to(np.asarray(y0, dtype=float), (d,))
    cfg = cfg or StepConfig(scheme=default_scheme(spec))
    r0 = float(np.linalg.norm(x0 - y0))
    eps = cfg.eps_couple if cfg.eps_couple is not None else 1e-5 * r0
    if cfg.eps_couple is not None and r0 > 0 and cfg.eps_couple > 1e-2 * r0:
        warnings.warn("eps_couple exceeds 1e-2 of the initial distance", stacklevel=2)
    cfg = replace(cfg, eps_couple=eps)
    times, steps_out = output_grid(T, cfg.dt, times)
    n_steps = int(round(T / cfg.dt))
    parts = _chunks(n_paths, threads, chunk)

    def work(paths):
        return _run_pairs(spec, x0, y0, cfg, n_steps, steps_out, master_seed, paths, eps)

    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, parts))
    else:
        results = [work(p) for p in parts]
    dist = np.concatenate([r[0] for r in results])
    tau = np.concatenate([r[1] for r in results])
    xf = np.concatenate([r[2] for r in results])
    yf = np.concatenate([r[3] for r in results])
    return CoupledEnsemble(times, dist, tau, n_paths, master_seed, cfg, spec.hash, tuple(x0.tolist()),
                           tuple(y0.tolist()), xf, yf)


def simulate_marginal(spec, x0, T, cfg=None, n_paths=1000, master_seed=0, times=None, threads=1, chunk=None):
    """Independent samples of X_t from x0 at the output times: array (n_times, n_paths, d)."""
    d = spec.dimension
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (d,))
    cfg = cfg or StepConfig(scheme=default_scheme(spec))
    times, steps_out = output_grid(T, cfg.dt, times)
    n_steps = int(round(T / cfg.dt))
    sig = spec.diffusion

    def work(paths):
        n = len(paths)
        x = np.broadcast_to(x0, (n, d)).astype(float).copy()
        out = np.zeros((len(steps_out), n, d))
        sq = math.sqrt(cfg.dt)
        k_out = 0
        while k_out < len(steps_out) and steps_out[k_out] == 0:
            out[k_out] = x
            k_out += 1
        for k in range(n_steps):
            t = k * cfg.dt
            dw = sq * rng.normals(master_seed, paths, k, rng.STREAM_W1, d)
            s = sig.evaluator(t, x)
            x = x + _drift_increment(spec, t, x, cfg.dt, cfg.scheme) + np.einsum("...ij,...j->...i", s, dw)
            _check(x, t + cfg.dt, cfg.magnitude_cap, k, paths)
            while k_out < len(steps_out) and steps_out[k_out] == k + 1:
                out[k_out] = x
                k_out += 1
        return out

    parts = _chunks(n_paths, threads, chunk)
    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            res = list(ex.map(work, parts))
    else:
        res = [work(p) for p in parts]
    return times, np.concatenate(res, axis=1)


# --------------------------------------------------------------------------
# variation flow
# --------------------------------------------------------------------------

def fd_jacobian(f, t, y, step=1e-6):
    """Central-difference Jacobian, step 10⁻⁶·(1+|y|), batched over leading axes."""
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    h = step * (1.0 + np.linalg.norm(y, axis=-1, keepdims=True))
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        cols.append((f(t, y + h * e) - f(t, y - h * e)) / (2.0 * h))
    return np.stack(cols, axis=-1)


def _tamed_derivative(b, jv, dt):
    """Directional derivative of b/(1+dt|b|) given b and J·v."""
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    den = 1.0 + dt * nb
    with np.errstate(invalid="ignore", divide="ignore"):
        radial = np.where(nb > 0, np.sum(b * jv, axis=-1, keepdims=True) / np.where(nb > 0, nb, 1.0), 0.0)
    return jv / den - dt * b * radial / den ** 2


def variation_flow(spec, y0, v, T, dt, seed=0, paths=None, n_paths=1, scheme=None, on_step=None,
                   keep_path=False, noise=None):
    """Joint Euler integration of Y and η = ∇_v Y with shared noise.

    With the tamed scheme, η is the exact derivative of the discrete map so
    that it matches pathwise finite differences.  ``on_step(k, t, y, eta, dw)``
    is called before each step (left-point values) for running functionals.
    ``noise`` overrides the RNG: an array (n_steps, n_paths, d) of N(0, dt) draws.
    """
    d = spec.dimension
    scheme = scheme or default_scheme(spec)
    paths = np.arange(n_paths) if paths is None else np.asarray(paths)
    n = len(paths)
    y = np.broadcast_to(np.asarray(y0, dtype=float), (n, d)).copy()
    eta = np.broadcast_to(np.asarray(v, dtype=float), (n, d)).copy()
    drift = spec.drift
    jac = drift.jacobian or (lambda t, x: fd_jacobian(drift.evaluator, t, x))
    diff = spec.diffusion
    const_sigma = diff.constant is not None
    n_steps = int(round(T / dt))
    sq = math.sqrt(dt)
    traj = [(y.copy(), eta.copy())] if keep_path else None
    for k in range(n_steps):
        t = k * dt
        dw = noise[k] if noise is not None else sq * rng.normals(seed, paths, k, rng.STREAM_W1, d)
        if on_step is not None:
            on_step(k, t, y, eta, dw)
        b = drift.evaluator(t + 0.5 * dt, y)
        jv = np.einsum("...ij,...j->...i", jac(t + 0.5 * dt, y), eta)
        s = diff.evaluator(t, y)
        if scheme == "tamed_euler":
            dy = b / (1.0 + dt * np.linalg.norm(b, axis=-1, keepdims=True)) * dt
            deta = _tamed_derivative(b, jv, dt) * dt
        else:
            dy, deta = b * dt, jv * dt
        if not const_sigma:
            hh = 1e-6 * (1.0 + np.linalg.norm(y, axis=-1, keepdims=True))
            ds = (diff.evaluator(t, y + hh * eta) - diff.evaluator(t, y - hh * eta)) / (2.0 * hh[..., None])
            deta = deta + np.einsum("...ij,...j->...i", ds, dw)
        y = y + dy + np.einsum("...ij,...j->...i", s, dw)
        eta = eta + deta
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(eta))):
            raise SimulationError("variation flow diverged", step=k, time=t + dt)
        if keep_path:
            traj.append((y.copy(), eta.copy()))
    return (y, eta, traj) if keep_path else (y, eta)
