"""One-dimensional, time-homogeneous Zvonkin transform by Picard iteration.

For autonomous b the integral equation collapses to the resolvent problem

    φ = (λ − ℒ^Z)^{-1}(φ′·b + b),   ℒ^Z u = Z u′ + ½σ²u″,

solved either by a sparse upwind discretisation with reflecting ends
(``grid_pde``) or by Monte Carlo over the reference dynamics (``mc``).
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve
from scipy.special import gamma as gamma_fn

from . import rng
from .errors import DiffeoError, DomainError, IterationError, NonContractionError


@dataclass(frozen=True)
class ZvonkinConfig:
    lam: Optional[float] = None  # None: automatic selection
    L: Optional[float] = None  # None: from the stationary tail
    n_nodes: int = 801
    semigroup_eval: str = "grid_pde"
    tol: float = 1e-8
    max_iter: int = 200
    mc_paths: int = 2000
    mc_dt: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise DomainError("lambda must be > 0")
        if self.semigroup_eval not in ("grid_pde", "mc"):
            raise DomainError(f"unknown semigroup_eval {self.semigroup_eval!r}")
        if self.n_nodes < 3:
            raise DomainError("need at least 3 nodes")


@dataclass(frozen=True)
class PhiTable:
    space_grid: np.ndarray
    phi_values: np.ndarray
    phi_prime_values: np.ndarray
    lam: float = float("nan")
    iteration_history: tuple = ()
    extended_constantly: bool = True

    @classmethod
    def from_values(cls, x, phi, lam=float("nan"), history=()):
        x = np.asarray(x, dtype=float)
        phi = np.asarray(phi, dtype=float)
        return cls(x, phi, grid_derivative(x, phi), lam, tuple(history))

    @classmethod
    def from_function(cls, f, L=5.0, n_nodes=801):
        x = np.linspace(-L, L, n_nodes)
        return cls.from_values(x, f(x))

    @classmethod
    def zeros(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x, np.zeros_like(x), np.zeros_like(x))

    def phi(self, x):
        return np.interp(x, self.space_grid, self.phi_values)

    def phi_prime(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.space_grid[0]) & (x <= self.space_grid[-1])
        return np.where(inside, np.interp(x, self.space_grid, self.phi_prime_values), 0.0)

    def Phi(self, x):
        return np.asarray(x, dtype=float) + self.phi(x)

    def Phi_inverse(self, z):
        """Inverse of Φ = id + φ by monotone interpolation, affine outside the grid."""
        xs = self.space_grid
        ys = xs + self.phi_values
        if np.any(np.diff(ys) <= 0):
            raise DiffeoError("Φ is not strictly increasing on the grid")
        z = np.asarray(z, dtype=float)
        out = np.interp(z, ys, xs)
        out = np.where(z < ys[0], z - self.phi_values[0], out)
        return np.where(z > ys[-1], z - self.phi_values[-1], out)

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("x,phi,phi_prime\n")
            for a, b, c in zip(self.space_grid, self.phi_values, self.phi_prime_values):
                fh.write(f"{a:.17g},{b:.17g},{c:.17g}\n")


def grid_derivative(x, u):
    """Centred differences inside, one-sided at the two ends."""
    return np.gradient(u, x, edge_order=1)


def _sigma2(Z, x):
    s = Z.diffusion.evaluator(0.0, x[:, None])
    return s[:, 0, 0] ** 2


def _zdrift(Z, x):
    return Z.drift.evaluator(0.0, x[:, None])[:, 0]


def stationary_half_width(Z, tail=1e-8, x_max=50.0, n=200_001):
    """Smallest L (on a 0.25 lattice) with stationary mass outside [−L, L] below ``tail``."""
    x = np.linspace(-x_max, x_max, n)
    with np.errstate(over="ignore", invalid="ignore"):
        a = 2.0 * _zdrift(Z, x) / _sigma2(Z, x)
    a = np.nan_to_num(a, nan=0.0, posinf=1e300, neginf=-1e300)
    mid = n // 2
    pot = np.zeros(n)
    dx = x[1] - x[0]
    pot[mid:] = np.concatenate([[0.0], np.cumsum(0.5 * (a[mid:-1] + a[mid + 1:]) * dx)])
    pot[:mid + 1] = -np.concatenate([np.cumsum((0.5 * (a[:mid] + a[1:mid + 1]) * dx)[::-1])[::-1], [0.0]])
    with np.errstate(over="ignore", under="ignore"):
        dens = np.exp(pot - pot.max()) / _sigma2(Z, x)
    cdf = np.cumsum(dens)
    total = cdf[-1]
    for L in np.arange(0.5, x_max, 0.25):
        lo = np.searchsorted(x, -L)
        hi = np.searchsorted(x, L)
        outside = (cdf[lo] + total - cdf[hi]) / total
        if outside < tail:
            return float(L)
    return float(x_max)


def _generator_matrix(Z, x):
    """Upwind discretisation of ℒ^Z with reflecting ends; rows sum to zero."""
    n = len(x)
    h = x[1] - x[0]
    z = _zdrift(Z, x)
    d = 0.5 * _sigma2(Z, x) / h ** 2
    zp, zm = np.maximum(z, 0.0) / h, np.maximum(-z, 0.0) / h
    up = d + zp
    lo = d + zm
    # reflecting ends: the ghost node mirrors the first interior node
    up[0] += lo[0]
    lo[-1] += up[-1]
    lo_off, up_off = lo[1:], up[:-1]
    lo_off = lo_off.copy()
    up_off = up_off.copy()
    diag = -(np.concatenate([up[:-1], [0.0]]) + np.concatenate([[0.0], lo[1:]]))
    return sparse.diags([lo_off, diag, up_off], [-1, 0, 1], shape=(n, n), format="csc")


def _resolvent_grid(Z, x, lam, rhs, cache):
    key = ("A", lam)
    if key not in cache:
        A = lam * sparse.identity(len(x), format="csc") - _generator_matrix(Z, x)
        cache[key] = sparse.linalg.splu(A.tocsc())
    return cache[key].solve(rhs)


def _resolvent_mc(Z, x, lam, g, cfg):
    """E∫₀^U e^{−λu} g(Y_u^x) du with U such that e^{−λU} ≤ 10⁻¹⁰."""
    U = math.log(1e10) / lam
    dt = cfg.mc_dt
    n_steps = max(1, int(math.ceil(U / dt)))
    m = cfg.mc_paths
    paths = np.arange(len(x) * m)
    y = np.repeat(x, m)
    acc = np.zeros_like(y)
    sq = math.sqrt(dt)
    w_prev = 1.0
    for k in range(n_steps):
        w_next = math.exp(-lam * (k + 1) * dt)
        acc += (w_prev - w_next) / lam * g(y)
        dw = sq * rng.normals(cfg.seed, paths, k, rng.STREAM_AUX, 1)[:, 0]
        b = _zdrift(Z, y)
        b = b / (1.0 + dt * np.abs(b))
        s = np.sqrt(_sigma2(Z, y))
        y = y + b * dt + s * dw
        w_prev = w_next
    return acc.reshape(len(x), m).mean(axis=1)


def _b_values(b, x):
    return b.evaluator(0.0, x[:, None])[:, 0]


def picard_iterate(Z, b, cfg, prev, _cache=None):
    """One application of Π: φ_new = ∫₀^∞ e^{−λu}P_u^Z(φ′_prev·b + b) du on the grid."""
    x = prev.space_grid
    lam = cfg.lam
    if lam is None:
        raise DomainError("picard_iterate needs an explicit lambda")
    bx = _b_values(b, x)
    rhs = prev.phi_prime_values * bx + bx
    if cfg.semigroup_eval == "grid_pde":
        new = _resolvent_grid(Z, x, lam, rhs, _cache if _cache is not None else {})
    else:
        def g(y):
            return np.interp(y, x, prev.phi_prime_values, left=0.0, right=0.0) * _b_values(b, y) + _b_values(b, y)
        new = _resolvent_mc(Z, x, lam, g, cfg)
    if not np.all(np.isfinite(new)):
        raise IterationError("Picard iterate produced non-finite values")
    return PhiTable.from_values(x, new, lam, prev.iteration_history)


def _grid_for(Z, cfg):
    L = cfg.L if cfg.L is not None else stationary_half_width(Z)
    return np.linspace(-L, L, cfg.n_nodes)


def solve_phi(Z, b, cfg):
    """Picard iteration from φ₀ ≡ 0 with contraction-factor history."""
    x = _grid_for(Z, cfg)
    cur = PhiTable.zeros(x)
    cache = {}
    history = []
    prev_change = None
    bad = 0
    for k in range(cfg.max_iter):
        nxt = picard_iterate(Z, b, cfg, cur, cache)
        change = float(np.max(np.abs(nxt.phi_values - cur.phi_values)))
        if prev_change is not None:
            rho = change / prev_change if prev_change > 0 else 0.0
            history.append(rho)
            bad = bad + 1 if rho >= 1.0 else 0
            if bad >= 3:
                raise NonContractionError(f"contraction factor >= 1 for 3 iterations at lambda={cfg.lam:g}")
        cur = nxt
        if change <= cfg.tol:
            break
        prev_change = change
    return replace(cur, iteration_history=tuple(history), lam=float(cfg.lam))


def diffeo_threshold(K1, K2):
    return min(0.5, K2 / (2.0 * K1 + K2))


def check_diffeo(phi, K1=0.0, K2=1.0, n_pairs=1000, seed=0):
    """sup|φ|, sup|φ′| against the threshold ½ ∧ K₂/(2K₁+K₂) and the bi-Lipschitz sandwich."""
    sup_phi = float(np.max(np.abs(phi.phi_values)))
    sup_dphi = float(np.max(np.abs(phi.phi_prime_values)))
    thr = diffeo_threshold(K1, K2)
    g = np.random.default_rng(seed)
    x = phi.space_grid
    i = g.integers(0, len(x), n_pairs)
    j = g.integers(0, len(x), n_pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    Phi = x + phi.phi_values
    ratio = np.abs(Phi[i] - Phi[j]) / np.abs(x[i] - x[j])
    return {
        "sup_phi": sup_phi,
        "sup_phi_prime": sup_dphi,
        "threshold": thr,
        "passed": bool(sup_phi + sup_dphi < thr),
        "passed_derivative_only": bool(sup_dphi < thr),
        "sandwich_min_ratio": float(ratio.min()) if len(ratio) else 1.0,
        "sandwich_max_ratio": float(ratio.max()) if len(ratio) else 1.0,
        "sandwich_holds": bool(len(ratio) == 0 or (ratio.min() >= 0.5 and ratio.max() <= 1.5)),
    }


def solve_phi_auto(Z, b, cfg=None, K1=0.0, K2=1.0, max_doublings=30):
    """Start at λ = 10(1+sup|b|) and double until Picard contracts and the threshold holds."""
    cfg = cfg or ZvonkinConfig()
    x = _grid_for(Z, cfg)
    sup_b = float(np.max(np.abs(_b_values(b, x))))
    lam = cfg.lam if cfg.lam is not None else 10.0 * (1.0 + sup_b)
    tried = []
    for _ in range(max_doublings):
        c = replace(cfg, lam=lam, L=float(x[-1]))
        try:
            phi = solve_phi(Z, b, c)
            rep = check_diffeo(phi, K1, K2)
            tried.append({"lambda": lam, "diffeo": rep["passed"]})
            if rep["passed"]:
                return phi, {"lambda": lam, "tried": tried, "diffeo": rep}
        except NonContractionError:
            tried.append({"lambda": lam, "diffeo": None})
        lam *= 2.0
    raise NonContractionError(f"no admissible lambda found up to {lam:g}")


# --------------------------------------------------------------------------
# transformed drift and a-priori bounds
# --------------------------------------------------------------------------

def lemma_constants(phi, K1, K2, K3, K4, beta):
    """K and C of the monotonicity bound for Z∘Φ⁻¹."""
    d = phi.phi_prime_values
    if np.any(1.0 + d <= 0):
        raise DiffeoError("1 + φ′ vanishes on the grid")
    sup_T = float(np.max(np.abs(d / (1.0 + d))))
    k5 = max(1.0, float(np.max(np.abs(phi.phi_values))))
    if beta <= 2:
        shape = beta ** 2 / ((beta + 1.0) * (beta + 2.0) ** 2)
    else:
        shape = 12.0 ** (-beta / 2.0)
    K = (K2 - K1 * sup_T) / (k5 ** beta * 2.0 ** max(beta - 1.0, 0.0)) * shape
    C = K2 + K4 + (K1 + K3) * sup_T
    return {"K": K, "C": C, "sup_T": sup_T, "Kbar5": k5, "admissible": bool(K1 * sup_T < K2)}


def transformed_drift_monotonicity(Z, phi, n_pairs=10_000, radius=3.0, seed=0, K1=3.0, K2=3.0, K3=1.0, K4=1.0,
                                   beta=2.0):
    """Max violation of ⟨Z∘Φ⁻¹(x)−Z∘Φ⁻¹(y), x−y⟩ ≤ −K|x−y|^{β+2} + C|x−y|² on sampled pairs."""
    consts = lemma_constants(phi, K1, K2, K3, K4, beta)
    g = np.random.default_rng(seed)
    x = g.uniform(-radius, radius, n_pairs)
    y = g.uniform(-radius, radius, n_pairs)
    zx = _zdrift(Z, phi.Phi_inverse(x))
    zy = _zdrift(Z, phi.Phi_inverse(y))
    r = np.abs(x - y)
    lhs = (zx - zy) * (x - y)
    rhs = -consts["K"] * r ** (beta + 2.0) + consts["C"] * r ** 2
    excess = lhs - rhs - 1e-12 * (np.abs(lhs) + np.abs(rhs))
    return {**consts, "max_violation": float(max(excess.max(), 0.0)), "n_pairs": n_pairs, "radius": radius,
            "passed": bool(np.all(excess <= 0))}


def theta1(lam, zeta, p, beta, log_mu_exp):
    """Θ₁: ζ^{−1/p}(λ^{β/p−1/2}Γ(½−β/p) + λ^{−1/2}(1 + (log μ e^{ζ|g|^p})^{1/p}))."""
    if not beta / p < 0.5:
        raise DomainError("need beta/p < 1/2")
    return zeta ** (-1.0 / p) * (lam ** (beta / p - 0.5) * gamma_fn(0.5 - beta / p)
                                 + lam ** -0.5 * (1.0 + max(log_mu_exp, 0.0) ** (1.0 / p)))


def theta2(lam, zeta, p, beta, log_mu_exp):
    """Θ₂: ζ^{−1/p}(λ^{β/p−1}Γ(1−β/p) + λ^{−1}(1 + (log μ e^{ζ|g|^p})^{1/p}))."""
    if not beta / p < 1.0:
        raise DomainError("need beta/p < 1")
    return zeta ** (-1.0 / p) * (lam ** (beta / p - 1.0) * gamma_fn(1.0 - beta / p)
                                 + lam ** -1.0 * (1.0 + max(log_mu_exp, 0.0) ** (1.0 / p)))


def apriori_bounds(lam, zeta, p, beta, log_mu_exp, cbar0, c0, delta):
    """Bounds on sup|∇φ| and sup|φ| for the equation with f = g = b."""
    a = max(2.0 * c0, 1.0) ** (1.0 / p)
    t1 = theta1(lam - delta, zeta, p, beta, log_mu_exp)
    t2 = theta2(lam, zeta, p, beta, log_mu_exp)
    den = 1.0 - cbar0 * a * t1
    if den <= 0:
        return {"valid": False, "grad_bound": math.inf, "sup_bound": math.inf, "theta1": t1, "theta2": t2}
    grad = cbar0 * a * t1 / den
    sup = a * t2 + cbar0 * a ** 2 * t1 * t2 / den
    return {"valid": True, "grad_bound": grad, "sup_bound": sup, "theta1": t1, "theta2": t2}


def audit_apriori(phi, lam, zeta, p, beta, log_mu_exp, cbar0, c0, delta):
    b = apriori_bounds(lam, zeta, p, beta, log_mu_exp, cbar0, c0, delta)
    sup_phi = float(np.max(np.abs(phi.phi_values)))
    sup_dphi = float(np.max(np.abs(phi.phi_prime_values)))
    return {**b, "sup_phi": sup_phi, "sup_phi_prime": sup_dphi,
            "margin_sup": b["sup_bound"] - sup_phi, "margin_grad": b["grad_bound"] - sup_dphi}
