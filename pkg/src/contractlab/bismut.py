"""Monte Carlo semigroup, Bismut gradient, ultracontractivity probe and exponential integrability."""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn

from .errors import DivergenceError, DomainError
from .linalg import right_pseudo_inverse
from .sde import default_scheme, simulate_marginal, StepConfig, variation_flow


@dataclass(frozen=True)
class GradientEstimate:
    value: float
    stderr: float
    n: int
    config: dict

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise DomainError("non-finite gradient estimate")
        if self.stderr < 0:
            raise DomainError("negative stderr")


def _mean_se(samples):
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(samples.mean()), se


def _apply_f(f, y):
    out = np.asarray(f(y), dtype=float)
    return out.reshape(len(y))


def semigroup_mc(spec, f, t, y, n=10_000, dt=1e-3, seed=0, scheme=None):
    """(mean, stderr) of f(Y_t^y) over n Euler paths."""
    if not t > 0:
        raise DomainError("t must be > 0")
    cfg = StepConfig(dt=dt, scheme=scheme or default_scheme(spec))
    _, xs = simulate_marginal(spec, y, t, cfg, n, seed, times=[t])
    return _mean_se(_apply_f(f, xs[-1]))


def bismut_gradient(spec, f, t, y, v, n=10_000, dt=1e-3, seed=0, scheme=None):
    """∇_v P_t f(y) ≈ mean of f(Y_t)·(1/t)Σ⟨σ̂⁻¹(Y_r)η_r, ΔW_r⟩ (left-point sums)."""
    if not t > 0:
        raise DomainError("t must be > 0")
    d = spec.dimension
    acc = np.zeros(n)
    cond = [1.0]
    const = spec.diffusion.constant
    if const is not None:
        inv_c, c_num = right_pseudo_inverse(const)
        cond[0] = float(c_num)

    def on_step(k, tt, yy, eta, dw):
        if const is not None:
            w = eta @ inv_c.T
        else:
            inv, cn = right_pseudo_inverse(spec.diffusion.evaluator(tt, yy))
            cond[0] = max(cond[0], float(np.max(cn)))
            w = np.einsum("...ij,...j->...i", inv, eta)
        acc[:] += np.sum(w * dw, axis=-1)

    yt, _ = variation_flow(spec, np.broadcast_to(np.asarray(y, float), (d,)), np.asarray(v, float), t, dt,
                           seed=seed, n_paths=n, scheme=scheme, on_step=on_step)
    samples = _apply_f(f, yt) * acc / t
    value, se = _mean_se(samples)
    if abs(value) > 0 and se / abs(value) > 0.2:
        warnings.warn(f"bismut_gradient: relative stderr {se / abs(value):.2f} > 0.2", stacklevel=2)
    return GradientEstimate(value, se, n, {"t": t, "dt": dt, "seed": seed, "condition_number": cond[0]})


def fd_gradient(spec, f, t, y, v, h=1e-2, n=10_000, dt=1e-3, seed=0, scheme=None):
    """Common-random-number central difference (P_tf(y+hv) − P_tf(y−hv))/(2h)."""
    if not h > 0:
        raise DomainError("h must be > 0")
    cfg = StepConfig(dt=dt, scheme=scheme or default_scheme(spec))
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    _, xp = simulate_marginal(spec, y + h * v, t, cfg, n, seed, times=[t])
    _, xm = simulate_marginal(spec, y - h * v, t, cfg, n, seed, times=[t])
    samples = (_apply_f(f, xp[-1]) - _apply_f(f, xm[-1])) / (2.0 * h)
    value, se = _mean_se(samples)
    return GradientEstimate(value, se, n, {"t": t, "dt": dt, "seed": seed, "h": h})


# --------------------------------------------------------------------------
# ultracontractivity probe
# --------------------------------------------------------------------------

def ultracontractivity_probe(spec, delta, t_list, x0_grid, n=2000, dt=1e-3, seed=0, beta=2.0, moment_dt=0.05):
    """Exponential-moment surrogate of ultracontractivity.

    For each start x₀ and time t, estimates P_t e^{δ|·|^{β+2}}(x₀); fits the
    least C with sup_{x₀} estimate ≤ exp{C(1 + t^{−(β+2)/β})}; and records the
    running moment average (1/t)∫₀^t P_s|·|^{β+2}(x₀) ds.
    """
    t_list = sorted(float(t) for t in t_list)
    T = t_list[-1]
    cfg = StepConfig(dt=dt, scheme=default_scheme(spec))
    dense = np.unique(np.round(np.concatenate([np.arange(0.0, T + 1e-12, moment_dt), t_list]), 12))
    rows, overflow = [], []
    for j, x0 in enumerate(x0_grid):
        times, xs = simulate_marginal(spec, np.atleast_1d(x0), T, cfg, n, seed + 7919 * j, times=dense)
        r = np.linalg.norm(xs, axis=-1)
        mom = (r ** (beta + 2.0)).mean(axis=1)
        for t in t_list:
            k = int(np.searchsorted(times, t - 1e-12))
            expo = delta * r[k] ** (beta + 2.0)
            if np.any(expo > 700.0):
                overflow.append({"delta": delta, "x0": np.atleast_1d(x0).tolist(), "t": t,
                                 "max_exponent": float(expo.max())})
                est, se = math.inf, math.inf
            else:
                est, se = _mean_se(np.exp(expo))
            run = float(np.trapezoid(mom[: k + 1], times[: k + 1]) / t) if t > 0 else float(mom[0])
            rows.append({"x0": np.atleast_1d(x0).tolist(), "t": t, "estimate": est, "stderr": se,
                         "running_moment": run})
    sup_by_t = {}
    for row in rows:
        sup_by_t[row["t"]] = max(sup_by_t.get(row["t"], 0.0), row["estimate"])
    fitted = 0.0
    for t, val in sup_by_t.items():
        if np.isfinite(val) and val > 0:
            fitted = max(fitted, math.log(val) / (1.0 + t ** (-(beta + 2.0) / beta)))
    return {"delta": delta, "beta": beta, "rows": rows, "sup_by_t": {str(k): v for k, v in sup_by_t.items()},
            "fitted_C": fitted, "overflow": overflow, "n": n, "dt": dt, "seed": seed}


# --------------------------------------------------------------------------
# exponential integrability
# --------------------------------------------------------------------------

def _sphere_area(d):
    return 2.0 * math.pi ** (d / 2.0) / gamma_fn(d / 2.0)


def _density(mu_density_bound):
    if callable(mu_density_bound):
        return mu_density_bound
    c = float(mu_density_bound.get("c", 1.0))
    delta = float(mu_density_bound["delta"])
    beta = float(mu_density_bound.get("beta", 2.0))
    return lambda r: c * np.exp(-delta * r ** (beta + 2.0))


def exp_integrability(b, mu_density_bound, zeta, p, dim=1, t=None, tol=1e-6, return_info=False):
    """∫ e^{ζ|b(x)|^p} (density bound)(x) dx in radial coordinates.

    Each unit shell (n, n+1] is integrated in the variable u = −log(r−n),
    which absorbs the shell-wise singularity at r → n⁺.  ``t=None`` uses the
    large-time limit of time-dependent drifts.  The horizon in u and the
    number of shells are doubled until two rounds agree to ``tol``.
    """
    if zeta < 0 or p <= 0:
        raise DomainError("need zeta >= 0 and p > 0")
    dens = _density(mu_density_bound)
    area = _sphere_area(dim)
    tt = math.inf if t is None else float(t)
    e1 = np.zeros(dim)
    e1[0] = 1.0

    def radial(r):
        bx = b.evaluator(tt, np.outer(np.atleast_1d(r), e1))
        return np.linalg.norm(bx, axis=-1)

    def shell(n, horizon):
        def f(u):
            r = n + math.exp(-u)
            ex = zeta * radial(r)[0] ** p
            if ex > 700.0:
                raise DivergenceError(f"integrand overflow at r={r:.6g}")
            return math.exp(ex) * float(dens(r)) * area * r ** (dim - 1) * math.exp(-u)
        # n + e^{-u} must stay distinguishable from n in double precision
        top = horizon if n == 0 else min(horizon, 36.0 - math.log(n))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, _ = integrate.quad(f, 0.0, top, limit=400, epsabs=1e-14, epsrel=1e-10)
        return val

    history = []
    prev = None
    horizon, n_shells = 25.0, 4
    for _ in range(12):
        total = 0.0
        n = 0
        while True:
            piece = shell(n, horizon)
            total += piece
            n += 1
            if n >= n_shells and (piece <= 1e-16 * total or float(dens(n)) * area * (n + 2) ** dim < 1e-300):
                break
            if n > 1000:
                raise DivergenceError("shell sum does not terminate")
        history.append({"horizon": horizon, "shells": n, "value": total})
        if not np.isfinite(total):
            raise DivergenceError("integral is not finite")
        if prev is not None and abs(total - prev) <= tol * abs(total):
            info = {"history": history, "rounds": len(history)}
            return (total, info) if return_info else total
        prev = total
        horizon *= 2.0
        n_shells *= 2
    raise DivergenceError(f"quadrature grows without stabilising: {[h['value'] for h in history[-3:]]}")


def example_majorant(zeta, delta, dim=1, c=1.0, n_terms=20):
    """(C/(1−ζ))Σ_{n<n_terms}(n+2)^{d+ζ−1}e^{−δn⁴}, C = c·|S^{d−1}|."""
    if not 0 <= zeta < 1:
        raise DomainError("majorant needs zeta in [0, 1)")
    n = np.arange(n_terms, dtype=float)
    C = c * _sphere_area(dim)
    return float(C / (1.0 - zeta) * np.sum((n + 2.0) ** (dim + zeta - 1.0) * np.exp(-delta * n ** 4)))
