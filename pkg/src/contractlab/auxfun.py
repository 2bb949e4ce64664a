"""Auxiliary function ψ, the feasibility set and the contraction certificate.

All integrals are taken in the logarithmic variable s = log v, where the
exponent of ψ′ has the smooth, bounded density

    h(s) = (K̄₁(e^{s/p}) + K̃₂ e^{2s/p}/p − K̄₂ e^{(2+θ)s/p}) / (2pσ₀²),

so that G(u) = −∫_{log u}^{log v₀} h(s) ds.  The endpoint singularity of ψ′
at 0 becomes the exponentially decaying factor e^{s/p}.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import DomainError, FeasibilityError, InconclusiveError, QuadratureError
from .model import digest, profile_to_dict

_GL10 = leggauss(10)
_GL20 = leggauss(20)


@dataclass(frozen=True)
class FeasiblePoint:
    ktilde2: float
    v0: float

    def __post_init__(self):
        if self.ktilde2 < 0:
            raise DomainError("ktilde2 must be >= 0")
        if not self.v0 > 0:
            raise DomainError("v0 must be > 0")


@dataclass(frozen=True)
class GridConfig:
    n_nodes: int = 2048
    vmin_factor: float = 1e-8
    tol: float = 1e-10
    # extra log-decades (in units of p) integrated below v_min
    below_span: float = 40.0
    below_nodes: int = 64


def _check_v(v):
    v = np.asarray(v, dtype=float)
    if np.any(~(v > 0)):
        raise DomainError("v must be > 0")
    return v


def p_coeffs(profile, sigma0, p, v):
    """Coefficients (p₁(v), p₀(v)) of the generator acting on functions of |x−y|^p."""
    v = _check_v(v)
    if p < 1:
        raise DomainError("p must be >= 1")
    k1 = profile.kbar1(v ** (1.0 / p))
    w = v ** ((p - 2.0) / p)
    p1 = p * w * k1 - p * profile.kbar2 * v ** (1.0 + profile.theta / p) + 2.0 * sigma0 ** 2 * p * (p - 1.0) * w
    p0 = 2.0 * sigma0 ** 2 * p ** 2 * v ** ((2.0 * p - 2.0) / p)
    return p1, p0


def q_function(profile, sigma0, p, point, v):
    v = _check_v(v)
    p1, p0 = p_coeffs(profile, sigma0, p, v)
    upper = -p1 + (0.5 - 0.5 / p) * p0 / v
    return np.where(v >= point.v0, upper, point.ktilde2 * v)


def _h_log(profile, sigma0, p, k2t, s):
    e = np.exp(s / p)
    return (profile.kbar1(e) + k2t * e ** 2 / p - profile.kbar2 * e ** (2.0 + profile.theta)) / (2.0 * p * sigma0 ** 2)


def _g(profile, sigma0, p, k2t, v):
    """Integrand of G in the original variable: h(log v)/v."""
    return _h_log(profile, sigma0, p, k2t, np.log(v)) / v


def _decay_term(profile, sigma0, p, v):
    return v ** (-(2.0 + profile.theta) / p) * (profile.kbar1(v ** (1.0 / p)) + sigma0 ** 2 * (p - 1.0))


# --------------------------------------------------------------------------
# quadrature helpers
# --------------------------------------------------------------------------

def _gl(f, a, b, rule):
    x, w = rule
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    pts = mid[..., None] + half[..., None] * x
    return half * (f(pts) @ w)


def _adaptive_intervals(f, a, b, tol, max_depth=40, max_intervals=50_000):
    """Integrate f over each [a_i, b_i]; f(pts, idx) receives the owning interval index.

    The absolute tolerance ``tol`` is shared out in proportion to length.
    """
    n = len(a)
    total = np.zeros(n)
    err = np.zeros(n)
    span = float(np.sum(b - a)) or 1.0
    idx = np.arange(n)
    lo, hi = a.astype(float), b.astype(float)
    for _ in range(max_depth):
        fi = lambda x: f(x, idx)  # noqa: E731
        i10 = _gl(fi, lo, hi, _GL10)
        i20 = _gl(fi, lo, hi, _GL20)
        if not (np.all(np.isfinite(i20)) and np.all(np.isfinite(i10))):
            raise QuadratureError("non-finite integrand (overflow of e^{-G})", achieved=math.inf)
        diff = np.abs(i20 - i10)
        ok = diff <= np.maximum(tol * (hi - lo) / span, 1e-13 * np.abs(i20))
        np.add.at(total, idx[ok], i20[ok])
        np.add.at(err, idx[ok], diff[ok])
        if np.all(ok):
            return total, float(err.sum())
        bad = ~ok
        if bad.sum() > max_intervals:
            break
        mid = 0.5 * (lo[bad] + hi[bad])
        idx = np.concatenate([idx[bad], idx[bad]])
        lo, hi = np.concatenate([lo[bad], mid]), np.concatenate([mid, hi[bad]])
    achieved = float(err.sum() + np.abs(i20 - i10)[~ok].sum())
    raise QuadratureError(f"adaptive quadrature did not reach tol={tol:g}", achieved=achieved)


# --------------------------------------------------------------------------
# feasibility
# --------------------------------------------------------------------------

def _v_max_for_tail(profile, sigma0, p, v0):
    """Smallest decade past v₀ where the decaying term stays below 10⁻³·K̄₂ for three decades."""
    level = 1e-3 * max(profile.kbar2, 1e-300)
    v = max(v0, 1.0) * 10.0
    for _ in range(300):
        probe = np.geomspace(v, v * 1e3, 31)
        if np.all(_decay_term(profile, sigma0, p, probe) < level):
            return v * 1e3
        v *= 10.0
    return v


def _refined_inf(func, grid, lo, hi):
    vals = func(grid)
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    a, b = max(a, lo), min(b, hi)
    fine = np.unique(np.concatenate([np.geomspace(a, b, 257), [grid[i]]]))
    fv = func(fine)
    j = int(np.argmin(fv))
    neigh = fv[max(j - 1, 0): j + 2]
    variation = float(np.max(np.abs(np.diff(neigh)))) if len(neigh) > 1 else 0.0
    return min(float(vals.min()), float(fv.min())), variation, float(fine[j])


def feasibility(profile, sigma0, p, point, v_min=None, n_grid=4096):
    """Membership of (K̃₂, v₀) in the feasible set.

    ``margin1`` is the infimum over v ≥ v₀ of K̄₂ − v^{−(2+θ)/p}(K̄₁(v^{1/p}) + σ₀²(p−1));
    ``margin2`` is the infimum over (0, v₀] of the density g of G.  Member
    iff margin1 > 0 and margin2 ≥ 0 (a rounding allowance of 10⁻¹² relative
    to the size of g's terms is applied to the second test).
    """
    v0 = point.v0
    v_min = v_min if v_min is not None else 1e-12 * v0
    bps = [b ** p for b in profile.kbar1.breakpoints]

    # first infimum, on [v0, v_max]; its limit at infinity is K̄₂
    v_max = _v_max_for_tail(profile, sigma0, p, v0)
    g1 = np.geomspace(v0, v_max, n_grid)
    extra = [x for x in bps if v0 <= x <= v_max]
    g1 = np.unique(np.concatenate([g1, extra]))
    f1 = lambda v: profile.kbar2 - _decay_term(profile, sigma0, p, v)  # noqa: E731
    m1, var1, arg1 = _refined_inf(f1, g1, v0, v_max)
    margin1 = min(m1, profile.kbar2)

    # second infimum, on (0, v0]
    g2 = np.geomspace(v_min, v0, n_grid)
    extra = [x for b in bps for x in (b, b * (1.0 + 1e-12)) if v_min <= x <= v0]
    g2 = np.unique(np.concatenate([g2, extra]))
    f2 = lambda v: _g(profile, sigma0, p, point.ktilde2, v)  # noqa: E731
    margin2, var2, arg2 = _refined_inf(f2, g2, v_min, v0)
    e = arg2 ** (1.0 / p)
    scale = (abs(float(profile.kbar1(np.array([e]))[0])) + point.ktilde2 * e ** 2 / p
             + profile.kbar2 * e ** (2.0 + profile.theta)) / (2.0 * p * sigma0 ** 2 * arg2)
    slack2 = 1e-12 * scale

    for name, m, var in (("margin1", margin1, var1), ("margin2", margin2 + slack2, var2)):
        if var > 0 and abs(m) <= 10.0 * var and not (name == "margin2" and m >= 0 and margin2 == 0):
            raise InconclusiveError(f"{name}={m:.3e} within 10x grid variation {var:.3e} of zero")
    member = bool(margin1 > 0 and margin2 >= -slack2)
    return {
        "member": member,
        "margin1": float(margin1),
        "margin2": float(margin2),
        "argmin1": arg1,
        "argmin2": arg2,
        "v_max": float(v_max),
        "variation1": var1,
        "variation2": var2,
    }


# --------------------------------------------------------------------------
# ψ table
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PsiTable:
    grid: np.ndarray
    psi_values: np.ndarray
    psi_prime_values: np.ndarray
    G_values: np.ndarray
    tail_params: tuple  # (ψ(v₀), v₀, p)
    p: float
    G0: float  # limit of G at 0+
    G_increments: np.ndarray = None  # ∫h over each table interval
    meta: dict = field(default_factory=dict)
    _nodes: tuple = field(default=(), repr=False)  # (s-nodes, G, ψ) incl. sub-grid
    _h: object = field(default=None, repr=False)

    @property
    def v0(self):
        return self.tail_params[1]

    @property
    def psi_v0(self):
        return self.tail_params[0]

    # -- evaluation ---------------------------------------------------------
    def _locate(self, s):
        sn = self._nodes[0]
        i = np.clip(np.searchsorted(sn, s, side="right") - 1, 0, len(sn) - 2)
        return i

    def _G_inner(self, s):
        sn, Gn, _ = self._nodes
        s = np.asarray(s, dtype=float)
        i = self._locate(s)
        a = sn[i]
        return Gn[i] + _gl(self._h, a, s, _GL20)

    def G(self, v):
        v = _check_v(v)
        s = np.log(v)
        sn, Gn, _ = self._nodes
        out = np.where(s >= sn[-1], 0.0, self._G_inner(np.clip(s, sn[0], sn[-1])))
        return np.where(s < sn[0], Gn[0], out)

    def _dpsi_ds(self, s):
        p, v0 = self.p, self.v0
        return v0 ** ((p - 1.0) / p) * np.exp(-self._G_inner(s) + s / p)

    def psi(self, v):
        """ψ(v) for v ≥ 0 (ψ(0) = 0, table branch below v₀, closed form above)."""
        v = np.asarray(v, dtype=float)
        if np.any(v == 0):
            out = np.zeros_like(v)
            pos = v != 0
            out[pos] = self.psi(v[pos])
            return out if out.ndim else float(out)
        v = _check_v(v)
        p, v0 = self.p, self.v0
        sn, Gn, Pn = self._nodes
        s = np.log(v)
        sc = np.clip(s, sn[0], sn[-1])
        i = self._locate(sc)
        inner = Pn[i] + _gl(self._dpsi_ds, sn[i], sc, _GL20)
        low = Pn[0] * np.exp((s - sn[0]) / p)
        tail = self.psi_v0 + (2.0 * p * v0 ** ((p - 1.0) / (2.0 * p)) / (p + 1.0)) * (
            v ** ((p + 1.0) / (2.0 * p)) - v0 ** ((p + 1.0) / (2.0 * p)))
        return np.where(v >= v0, tail, np.where(s < sn[0], low, inner))

    def psi_prime(self, v):
        v = _check_v(v)
        p, v0 = self.p, self.v0
        below = v0 ** ((p - 1.0) / p) * np.exp(-self.G(np.minimum(v, v0))) * v ** ((1.0 - p) / p)
        tail = v0 ** ((p - 1.0) / (2.0 * p)) * v ** ((1.0 - p) / (2.0 * p))
        return np.where(v >= v0, tail, below)

    def psi_second(self, v):
        """Analytic ψ″ (one-sided from the left at v₀ and at K̄₁ jumps)."""
        v = _check_v(v)
        p, v0 = self.p, self.v0
        g = self._h(np.log(np.minimum(v, v0))) / v
        below = self.psi_prime(v) * (-g + (1.0 - p) / (p * v))
        tail = ((1.0 - p) / (2.0 * p)) * v0 ** ((p - 1.0) / (2.0 * p)) * v ** ((1.0 - p) / (2.0 * p) - 1.0)
        return np.where(v >= v0, tail, below)

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("v,psi,psi_prime\n")
            for a, b, c in zip(self.grid, self.psi_values, self.psi_prime_values):
                fh.write(f"{a:.17g},{b:.17g},{c:.17g}\n")


def _log_nodes(profile, p, v0, grid):
    s0 = math.log(v0)
    s_min = s0 + math.log(grid.vmin_factor)
    s_low = s_min - grid.below_span * p
    main = np.linspace(s_min, s0, grid.n_nodes)
    sub = np.linspace(s_low, s_min, grid.below_nodes + 1)[:-1]
    bps = [p * math.log(b) for b in profile.kbar1.breakpoints if b > 0]
    bps = [x for x in bps if s_low < x < s0]
    return np.unique(np.concatenate([sub, main, bps])), s_min, s_low


def g_table(profile, sigma0, p, point, grid=None):
    """G on the log nodes: returns (s-nodes, per-interval increments, G at nodes, error)."""
    grid = grid or GridConfig()
    h = lambda s: _h_log(profile, sigma0, p, point.ktilde2, s)  # noqa: E731
    sn, _, _ = _log_nodes(profile, p, point.v0, grid)
    I, err = _adaptive_intervals(lambda x, idx: h(x), sn[:-1], sn[1:], grid.tol)
    Gn = np.concatenate([-np.cumsum(I[::-1])[::-1], [0.0]])
    return sn, I, Gn, err


def build_psi(profile, sigma0, p, point, grid=None):
    """Tabulate ψ and ψ′ on a log grid of (v_min, v₀] plus the closed-form tail."""
    grid = grid or GridConfig()
    v0, k2t = point.v0, point.ktilde2
    h = lambda s: _h_log(profile, sigma0, p, k2t, s)  # noqa: E731
    sn, s_min, s_low = _log_nodes(profile, p, v0, grid)
    sn, I, Gn, err_G = g_table(profile, sigma0, p, point, grid)
    a, b = sn[:-1], sn[1:]

    c = v0 ** ((p - 1.0) / p)

    def dpsi(x, idx):
        left = sn[idx]
        left = left.reshape(left.shape + (1,) * (x.ndim - 1))
        Gx = Gn[idx].reshape(left.shape) + _gl(h, np.broadcast_to(left, x.shape), x, _GL20)
        with np.errstate(over="ignore"):
            return c * np.exp(-Gx + x / p)

    J, err_psi = _adaptive_intervals(dpsi, a, b, grid.tol * max(1.0, v0 ** (1.0 / p)))
    # below s_low G is frozen at its value there; remainder ∫_{-∞}^{s_low} c e^{-G} e^{s/p} ds
    psi_low = p * c * math.exp(-Gn[0] + s_low / p)
    Pn = np.concatenate([[psi_low], psi_low + np.cumsum(J)])
    G0 = float(Gn[0])

    # Richardson-style cutoff check: doubling the frozen span must not move ψ(v₀)
    psi_low2 = p * c * math.exp(-Gn[0] + (s_low - math.log(2.0)) / p)
    rich = abs(psi_low - psi_low2) / Pn[-1]
    if rich > 1e-8:
        raise QuadratureError(f"cutoff check failed ({rich:.2e})", achieved=rich)

    keep = sn >= s_min - 1e-15
    v = np.exp(sn[keep])
    v[-1] = v0
    dpsi_nodes = c * np.exp(-Gn[keep]) * v ** ((1.0 - p) / p)
    table = PsiTable(
        grid=v,
        psi_values=Pn[keep],
        psi_prime_values=dpsi_nodes,
        G_values=Gn[keep],
        tail_params=(float(Pn[-1]), float(v0), float(p)),
        p=float(p),
        G0=G0,
        G_increments=I[int(np.argmax(keep)):],
        meta={"quad_error_G": err_G, "quad_error_psi": err_psi, "cutoff_change": rich,
              "n_nodes": int(keep.sum()), "v_min": float(v[0])},
        _nodes=(sn, Gn, Pn),
        _h=h,
    )
    return table


# --------------------------------------------------------------------------
# certificate
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Certificate:
    kappa: float
    c0: float
    c1: float
    c2: float
    C1: float
    C2: float
    point: FeasiblePoint
    p: float
    theta: float
    sigma0: float
    profile_hash: str
    inf1: float
    grid: GridConfig = GridConfig()
    psi_table: PsiTable = field(default=None, repr=False, compare=False)

    @property
    def q(self):
        return (self.p + 1.0) / 2.0

    def to_dict(self):
        return {
            "kappa": self.kappa, "c0": self.c0, "c1": self.c1, "c2": self.c2,
            "C1": self.C1, "C2": self.C2,
            "point": {"ktilde2": self.point.ktilde2, "v0": self.point.v0},
            "p": self.p, "q": self.q, "theta": self.theta, "sigma0": self.sigma0,
            "inf1": self.inf1, "profile_hash": self.profile_hash,
            "grid": {"n_nodes": self.grid.n_nodes, "vmin_factor": self.grid.vmin_factor, "tol": self.grid.tol},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def with_kappa(self, kappa):
        """Copy with a replaced rate (used for negative controls)."""
        d = dict(self.__dict__)
        d["kappa"] = float(kappa)
        return Certificate(**d)


def profile_hash(profile, sigma0):
    return digest({"profile": profile_to_dict(profile), "sigma0": sigma0})


def certificate_constants(p, theta, point, inf1, C1, C2):
    """κ, c₀, c₁, c₂ from the extremes C₁, C₂ of e^{−G} and the first infimum."""
    v0, k2t = point.v0, point.ktilde2
    a = 2.0 * theta / (p + 1.0)
    br1 = inf1 / (C2 * (v0 ** (-theta / p) + (p * v0 ** ((p - 1.0) / (2.0 * p)) * C2) ** a))
    br2 = k2t * C1 / (p * C2 * (1.0 + (p * C2 * v0) ** a))
    kappa = min(br1, br2)
    c0 = (p + 1.0) * C2 / 2.0 * max(v0 ** 2, 1.0 / v0) ** ((p - 1.0) / (2.0 * p))
    c1 = 2.0 * p / (p + 1.0) * min(1.0, v0 ** ((p - 1.0) / p))
    c2 = p * C2 * max(v0 ** ((p - 1.0) / p), v0 ** ((p - 1.0) / (2.0 * p)))
    return kappa, c0, c1, c2


def certificate(profile, sigma0, p, point, grid=None, feas=None, with_psi=True):
    grid = grid or GridConfig()
    feas = feas or feasibility(profile, sigma0, p, point)
    if not feas["member"]:
        raise FeasibilityError(f"point {point} is not feasible (margins {feas['margin1']:.3e}, {feas['margin2']:.3e})")
    if with_psi:
        table = build_psi(profile, sigma0, p, point, grid)
        Gall = np.concatenate([table.G_values, [table.G0]])
    else:
        table = None
        Gall = g_table(profile, sigma0, p, point, grid)[2]
    with np.errstate(over="ignore"):
        e = np.exp(-Gall)
    if not np.all(np.isfinite(e)):
        raise QuadratureError("e^{-G} overflows: C2 is not representable", achieved=math.inf)
    C1, C2 = float(e.min()), float(e.max())
    kappa, c0, c1, c2 = certificate_constants(p, profile.theta, point, feas["margin1"], C1, C2)
    if not kappa > 0:
        raise FeasibilityError(f"non-positive rate kappa={kappa:.3e} (ktilde2 must be > 0)")
    return Certificate(float(kappa), float(c0), float(c1), float(c2), C1, C2, point, float(p),
                       float(profile.theta), float(sigma0), profile_hash(profile, sigma0),
                       float(feas["margin1"]), grid, table)


def optimize_certificate(profile, sigma0, q, search_box, n_coarse=9, rounds=2, search_grid=None):
    """Grid search over (K̃₂, v₀) maximising κ (ties: smaller c₀), refined ``rounds`` times."""
    (k_lo, k_hi), (v_lo, v_hi) = search_box
    if k_lo > k_hi or v_lo > v_hi or v_lo <= 0 or k_hi < 0:
        raise FeasibilityError("empty search box")
    p = 2.0 * q - 1.0
    sgrid = search_grid or GridConfig(n_nodes=256, tol=1e-8)
    cache = {}

    def score(k, v):
        key = (k, v)
        if key not in cache:
            try:
                pt = FeasiblePoint(k, v)
                cert = certificate(profile, sigma0, p, pt, sgrid, feasibility(profile, sigma0, p, pt, n_grid=1024),
                                   with_psi=False)
                cache[key] = (cert.kappa, -cert.c0)
            except (FeasibilityError, InconclusiveError, QuadratureError, DomainError):
                cache[key] = None
        return cache[key]

    def axis(lo, hi, logscale):
        if lo == hi:
            return np.array([lo])
        if logscale and lo > 0:
            return np.geomspace(lo, hi, n_coarse)
        return np.linspace(lo, hi, n_coarse)

    ks, vs = axis(k_lo, k_hi, True), axis(v_lo, v_hi, True)
    best = None
    for r in range(rounds + 1):
        for k in ks:
            for v in vs:
                s = score(float(k), float(v))
                if s is not None and (best is None or s > best[0]):
                    best = (s, float(k), float(v))
        if best is None:
            raise FeasibilityError("no feasible point in search box")
        _, kb, vb = best

        def shrink(vals, centre, lo, hi):
            if len(vals) == 1:
                return vals
            j = int(np.argmin(np.abs(vals - centre)))
            a, b = vals[max(j - 1, 0)], vals[min(j + 1, len(vals) - 1)]
            return axis(max(a, lo), min(b, hi), True)
        ks, vs = shrink(ks, kb, k_lo, k_hi), shrink(vs, vb, v_lo, v_hi)
    _, kb, vb = best
    pt = FeasiblePoint(kb, vb)
    return pt, certificate(profile, sigma0, p, pt)


# --------------------------------------------------------------------------
# bounds
# --------------------------------------------------------------------------

# below this exponent the θ→0 limit is exact to rounding; avoids 0/0 on subnormals
SMALL_THETA = 1e-12


def theoretical_bound(cert, q, r, t):
    """Bound on W_q(δ_xP_t, δ_yP_t) at |x−y| = r; θ = 0 uses the analytic limit."""
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(r < 0) or np.any(t < 0):
        raise DomainError("r and t must be >= 0")
    theta, kappa = cert.theta, cert.kappa
    base = cert.c0 ** (1.0 / q) * np.maximum(r, r ** (1.0 / q))
    if theta < SMALL_THETA:
        return base * np.exp(-2.0 * kappa * t / q)
    # log1p form keeps the small-θ regime accurate
    x = cert.c1 ** (theta / q) * (-np.expm1(-kappa * theta * t / q)) * r ** theta
    return base * np.exp(-np.log1p(x) / theta - kappa * t / q)


def u_theta(cert, psi_v0, t):
    """Comparison function solving y′ = −κy(1 + y^{2θ/(p+1)}), y(0) = ψ(V₀)."""
    psi_v0 = np.asarray(psi_v0, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(psi_v0 < 0) or np.any(t < 0):
        raise DomainError("psi_v0 and t must be >= 0")
    theta, kappa, p = cert.theta, cert.kappa, cert.p
    a = 2.0 * theta / (p + 1.0)
    if a < SMALL_THETA:
        return np.exp(-2.0 * kappa * t) * psi_v0
    x = -np.expm1(-a * kappa * t) * psi_v0 ** a
    return np.exp(-np.log1p(x) / a - kappa * t) * psi_v0


# --------------------------------------------------------------------------
# property audits used by tests and reports
# --------------------------------------------------------------------------

def ode_residuals(profile, sigma0, cert, skip_jumps=True):
    """Relative residual of p₁ψ′ + p₀ψ″ + qψ′ at interior grid nodes.

    ψ″ comes from a centred difference of the tabulated log ψ′ in log v,
    assembled from the stored interval increments of G so that no
    cancellation occurs where ψ′ is nearly constant.
    """
    tab = cert.psi_table
    p = cert.p
    v, d1 = tab.grid, tab.psi_prime_values
    s = np.log(v)
    inc = tab.G_increments
    # centred differences of ℓ = log ψ′ over spans 2Δs and 4Δs, Richardson-combined
    span1 = s[2:] - s[:-2]
    a1 = (-(inc[:-1] + inc[1:]) + (1.0 - p) / p * span1) / span1
    dl = a1.copy()
    span2 = s[4:] - s[:-4]
    a2 = (-(inc[:-3] + inc[1:-2] + inc[2:-1] + inc[3:]) + (1.0 - p) / p * span2) / span2
    dl[1:-1] = a1[1:-1] + (a1[1:-1] - a2) / 3.0
    # the two outermost interior nodes: four-point stencils, third order
    d = -inc + (1.0 - p) / p * np.diff(s)
    if len(d) >= 4:
        dl[0] = (2.0 * d[0] + 5.0 * d[1] - d[2]) / (6.0 * (s[3] - s[0]) / 3.0)
        dl[-1] = (-d[-3] + 5.0 * d[-2] + 2.0 * d[-1]) / (6.0 * (s[-1] - s[-4]) / 3.0)
    vc, fc = v[1:-1], d1[1:-1]
    d2 = fc * dl / vc
    p1, p0 = p_coeffs(profile, sigma0, p, vc)
    qv = q_function(profile, sigma0, p, cert.point, vc)
    res = p1 * fc + p0 * d2 + qv * fc
    scale = np.abs(p1 * fc) + np.abs(p0 * d2) + np.abs(qv * fc)
    rel = np.where(scale > 0, np.abs(res) / np.where(scale > 0, scale, 1.0), 0.0)
    if skip_jumps:
        vl = np.concatenate([v[:1], v[:-4], v[-4:-3]])
        vr = np.concatenate([v[3:4], v[4:], v[-1:]])
        for b in profile.kbar1.breakpoints + profile.kbar1.kinks:
            bp = b ** p
            rel = np.where((vl <= bp * (1 + 1e-12)) & (vr >= bp * (1 - 1e-12)), 0.0, rel)
    return vc, rel


def tail_points(cert, n=100, factor=1e4):
    return np.geomspace(cert.point.v0 * 1.01, cert.point.v0 * factor, n)


def sandwich_excess(cert, v):
    """Relative violations of c₁m(v) ≤ ψ(v) ≤ c₂m(v), m(v) = v^{(p+1)/(2p)} ∨ v^{1/p}."""
    p = cert.p
    m = np.maximum(v ** ((p + 1.0) / (2.0 * p)), v ** (1.0 / p))
    psi = cert.psi_table.psi(v)
    low = (cert.c1 * m - psi) / psi
    high = (psi - cert.c2 * m) / psi
    return low, high


def key_inequality_slack(profile, sigma0, cert, v):
    """(qψ′ − κψ(1+ψ^{2θ/(p+1)}))/(κψ(1+ψ^{2θ/(p+1)})); must be ≥ −10⁻⁶."""
    tab = cert.psi_table
    psi = tab.psi(v)
    lhs = q_function(profile, sigma0, cert.p, cert.point, v) * tab.psi_prime(v)
    rhs = cert.kappa * psi * (1.0 + psi ** (2.0 * cert.theta / (cert.p + 1.0)))
    return (lhs - rhs) / rhs
