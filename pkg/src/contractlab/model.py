"""SDE problem instances: drift, diffusion, dissipativity profile, built-in examples.

Evaluators are vectorised: a point argument may be a single ``(d,)`` vector or
a ``(..., d)`` stack, and the result carries the same leading shape.
Problems are described by plain JSON-able documents so that they can be
hashed, serialised and reloaded; the built-in examples are just documents.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import ConfigError, EvaluationError
from .linalg import sqrt_psd

GROWTH_CLASSES = ("globally-Lipschitz", "superlinear", "locally-bounded-singular")
BUILTIN_NAMES = ("ou", "dissipative_plus_bounded", "locally_dissipative", "singular_log_cubic")


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=float)


def digest(obj):
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# K̄₁ profiles
# --------------------------------------------------------------------------

def _term_value(term, v):
    kind = term["kind"]
    p = term.get("params", {})
    if kind == "zero":
        return np.zeros_like(v)
    if kind == "power_sum":
        out = np.zeros_like(v)
        for a, e in zip(p["coeffs"], p["exponents"]):
            out = out + a * v ** e
        return out
    if kind == "indicator_power":
        base = v ** p["e"]
        if "e2" in p:
            base = np.minimum(base, v ** p["e2"])
        return np.where(v <= p["r0"], p["a"] * base, 0.0)
    if kind == "min_powers":
        return p["a"] * np.minimum(v ** p["e1"], v ** p["e2"])
    raise ConfigError(f"unknown kbar1 kind {kind!r}")


class Kbar1:
    """The continuous part K̄₁ of the dissipativity bound, as a sum of terms.

    A document is either one term ``{"kind": ..., "params": {...}}`` or
    ``{"kind": "sum", "terms": [...]}``.  Supported kinds: ``zero``,
    ``power_sum`` (Σ aᵢ v^eᵢ), ``indicator_power`` (a·1[v≤r₀]·v^e, optionally
    ``∧ v^e2``) and ``min_powers`` (a·(v^e1 ∧ v^e2)).
    """

    def __init__(self, doc):
        if doc.get("kind") == "sum":
            terms = list(doc["terms"])
        else:
            terms = [doc]
        for term in terms:
            _term_value(term, np.ones(1))  # validates kind/params early
        self.terms = terms
        self.doc = doc

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        out = np.zeros_like(v)
        for term in self.terms:
            out = out + _term_value(term, v)
        return out

    @property
    def breakpoints(self):
        """Arguments where K̄₁ jumps (indicator edges)."""
        return sorted(t["params"]["r0"] for t in self.terms if t["kind"] == "indicator_power")

    @property
    def kinks(self):
        """Arguments where K̄₁ is continuous but not differentiable (v^a ∧ v^b switches at 1)."""
        out = set()
        for t in self.terms:
            prm = t.get("params", {})
            if t["kind"] == "min_powers" and prm["e1"] != prm["e2"]:
                out.add(1.0)
            if t["kind"] == "indicator_power" and "e2" in prm and prm["e2"] != prm["e"] and prm["r0"] > 1:
                out.add(1.0)
        return sorted(out)

    @property
    def is_zero(self):
        return all(t["kind"] == "zero" for t in self.terms)

    def to_dict(self):
        return self.doc

    def __eq__(self, other):
        return isinstance(other, Kbar1) and canonical_json(self.doc) == canonical_json(other.doc)

    def __hash__(self):
        return hash(canonical_json(self.doc))


@dataclass(frozen=True)
class DissipativityProfile:
    """Data (K̄₁, K̄₂, θ, q) of the dissipativity condition."""

    kbar1: Kbar1
    kbar2: float
    theta: float
    q: float

    def __post_init__(self):
        if not self.kbar2 >= 0:
            raise ConfigError("kbar2 must be non-negative")
        if self.theta < 0:
            raise ConfigError("theta must be >= 0")
        if self.q < 1:
            raise ConfigError("q must be >= 1")

    @property
    def p(self):
        return 2.0 * self.q - 1.0

    def rhs(self, v):
        v = np.asarray(v, dtype=float)
        return self.kbar1(v) - self.kbar2 * v ** (2.0 + self.theta)

    def check_growth(self, v_max=1e6, n=121):
        """K̄₁(v)/v^{2+θ} must fall towards 0 on a geometric grid up to v_max."""
        v = np.geomspace(1.0, v_max, n)
        ratio = self.kbar1(v) / v ** (2.0 + self.theta)
        head = float(np.max(ratio[: n // 2])) if n > 1 else float(ratio[0])
        tail = float(ratio[-1])
        ok = tail <= 1e-8 or tail <= 1e-2 * max(head, 1e-300)
        return {"ok": bool(ok), "ratio_at_vmax": tail, "ratio_head_max": head, "v_max": v_max}

    def check_integrability(self, cutoffs=(1e-4, 1e-8, 1e-12, 1e-16)):
        """∫_ε^1 v^{-1} K̄₁(v^{1/(2q-1)}) dv must stabilise as ε shrinks."""
        p = self.p

        def integrand(s):
            v = math.exp(s)
            return float(self.kbar1(np.array([v ** (1.0 / p)]))[0])

        pts = [math.log(b ** p) for b in self.kbar1.breakpoints if 0 < b ** p < 1] or None
        values = []
        for eps in cutoffs:
            a = math.log(eps)
            inner = [x for x in (pts or []) if a < x < 0] or None
            val, _ = integrate.quad(integrand, a, 0.0, points=inner, limit=200)
            values.append(val)
        last, prev = values[-1], values[-2]
        ok = abs(last - prev) <= 1e-6 * (1.0 + abs(last))
        return {"ok": bool(ok), "values": values, "cutoffs": list(cutoffs)}


def profile_from_dict(doc):
    try:
        prof = DissipativityProfile(
            kbar1=Kbar1(doc.get("kbar1", {"kind": "zero"})),
            kbar2=float(doc["kbar2"]),
            theta=float(doc.get("theta", 0.0)),
            q=float(doc.get("q", 1.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"profile missing field {exc}") from None
    return prof


def profile_to_dict(prof):
    return {"kbar1": prof.kbar1.to_dict(), "kbar2": prof.kbar2, "theta": prof.theta, "q": prof.q}


# --------------------------------------------------------------------------
# Drift and diffusion
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DriftSpec:
    evaluator: Callable
    dimension: int
    growth_class: str
    jacobian: Optional[Callable] = None
    doc: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigError("dimension must be positive")
        if self.growth_class not in GROWTH_CLASSES:
            raise ConfigError(f"unknown growth class {self.growth_class!r}")


@dataclass(frozen=True)
class DiffusionSpec:
    evaluator: Callable
    sigma0: float
    lipschitz_data: tuple = (0.0, 0.0)
    constant: Optional[np.ndarray] = None
    doc: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ConfigError("sigma0 must be positive")

    def sigma_tilde(self, t, x):
        """√(σσ* − σ₀²I), batched over leading axes of x."""
        s = self.evaluator(t, x)
        a = s @ np.swapaxes(s, -1, -2)
        d = a.shape[-1]
        return sqrt_psd(a - self.sigma0 ** 2 * np.eye(d))

    def check_ellipticity(self, dim, n_points=1000, radius=10.0, seed=0):
        rng = np.random.default_rng(seed)
        x = _sample_ball(rng, n_points, dim, radius)
        s = self.evaluator(0.0, x)
        a = s @ np.swapaxes(s, -1, -2) - self.sigma0 ** 2 * np.eye(dim)
        lam = np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, -1, -2)))
        return {"ok": bool(lam.min() >= -1e-12), "min_eigenvalue": float(lam.min())}

    def check_lipschitz(self, dim, n_pairs=1000, radius=10.0, seed=0):
        c, alpha1 = self.lipschitz_data
        rng = np.random.default_rng(seed)
        x = _sample_ball(rng, n_pairs, dim, radius)
        y = _sample_ball(rng, n_pairs, dim, radius)
        v = np.linalg.norm(x - y, axis=-1)
        lhs = np.linalg.norm(self.evaluator(0.0, x) - self.evaluator(0.0, y), axis=(-2, -1))
        rhs = c * np.minimum(v, v ** alpha1)
        excess = lhs - rhs
        return {"ok": bool(np.all(excess <= 1e-12 * (1 + lhs))), "max_excess": float(excess.max())}


@dataclass(frozen=True)
class ProblemSpec:
    drift: DriftSpec
    diffusion: DiffusionSpec
    profile: Optional[DissipativityProfile] = None
    label: str = ""
    reference_drift: Optional[DriftSpec] = None
    doc: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.reference_drift is not None and self.reference_drift.dimension != self.drift.dimension:
            raise ConfigError("reference drift dimension mismatch")

    @property
    def dimension(self):
        return self.drift.dimension

    @property
    def hash(self):
        return digest(self.doc)


def _sample_ball(rng, n, dim, radius):
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    return g * r[:, None]


def eval_drift(spec, t, x):
    """Drift value at (t, x); raises EvaluationError on non-finite output."""
    drift = spec.drift if isinstance(spec, ProblemSpec) else spec
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise EvaluationError("non-finite input point")
    out = np.asarray(drift.evaluator(t, x), dtype=float)
    if out.shape != x.shape:
        raise EvaluationError(f"drift returned shape {out.shape}, expected {x.shape}")
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"drift returned non-finite value at t={t}")
    return out


def eval_diffusion(spec, t, x):
    diff = spec.diffusion if isinstance(spec, ProblemSpec) else spec
    x = np.asarray(x, dtype=float)
    out = np.asarray(diff.evaluator(t, x), dtype=float)
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"diffusion returned non-finite value at t={t}")
    return out


# --------------------------------------------------------------------------
# Drift catalogue
# --------------------------------------------------------------------------

def _sq_norm(x):
    return np.sum(x * x, axis=-1, keepdims=True)


def _cubic_jac(a, c):
    def jac(t, x):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        eye = np.eye(d)
        r2 = np.sum(x * x, axis=-1)[..., None, None]
        return a * eye - c * (r2 * eye + 2.0 * x[..., :, None] * x[..., None, :])
    return jac


def singular_log_part(t, x, autonomous=False, cap=1e6):
    """Shell-wise logarithmic drift, −(x/|x|)·(log(...))^{1/5} on n < |x| ≤ n+1.

    The time-dependent form multiplies the log argument by t/(t+1); the
    autonomous form omits it.  Shells are right-closed, so |x| = n belongs
    to shell n−1.  The magnitude is clipped at ``cap``.
    """
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    n = np.ceil(r) - 1.0
    gap = r - n
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = (r + 1.0) / gap
        if not autonomous:
            ratio = 0.0 if t <= 0 else (1.0 if math.isinf(t) else t / (t + 1.0))
            arg = arg * ratio
        logv = np.log(arg)
        mag = np.sign(logv) * np.abs(logv) ** 0.2
    mag = np.where(np.isnan(mag), 0.0, mag)
    mag = np.clip(mag, -cap, cap)
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(r[..., None] > 0, x / np.where(r > 0, r, 1.0)[..., None], 0.0)
    mag = np.where(r > 0, mag, 0.0)
    return -unit * mag[..., None]


def build_drift(doc, dim):
    kind = doc.get("kind")
    p = dict(doc.get("params", {}))
    if kind == "zero":
        return DriftSpec(lambda t, x: np.zeros_like(np.asarray(x, dtype=float)), dim, "globally-Lipschitz",
                         lambda t, x: np.zeros(np.shape(x) + (dim,)), doc)
    if kind == "constant":
        c = np.broadcast_to(np.asarray(p["c"], dtype=float), (dim,)).copy()
        return DriftSpec(lambda t, x: np.broadcast_to(c, np.shape(x)).copy(), dim, "globally-Lipschitz",
                         lambda t, x: np.zeros(np.shape(x) + (dim,)), doc)
    if kind == "linear":
        a = float(p.get("a", 1.0))
        return DriftSpec(lambda t, x: -a * np.asarray(x, dtype=float), dim, "globally-Lipschitz",
                         lambda t, x: np.broadcast_to(-a * np.eye(dim), np.shape(x) + (dim,)).copy(), doc)
    if kind == "sine":
        amp, freq = float(p.get("amp", 0.5)), float(p.get("freq", 1.0))

        def f(t, x):
            return amp * np.sin(freq * np.asarray(x, dtype=float))

        def jac(t, x):
            x = np.asarray(x, dtype=float)
            return (amp * freq * np.cos(freq * x))[..., :, None] * np.eye(dim)
        return DriftSpec(f, dim, "globally-Lipschitz", jac, doc)
    if kind == "ou_plus_bounded":
        a, amp = float(p.get("a", 1.0)), float(p.get("amp", 0.5))
        s = amp / math.sqrt(dim)

        def f(t, x):
            x = np.asarray(x, dtype=float)
            return -a * x + s * np.sin(x)

        def jac(t, x):
            x = np.asarray(x, dtype=float)
            return -a * np.eye(dim) + (s * np.cos(x))[..., :, None] * np.eye(dim)
        return DriftSpec(f, dim, "globally-Lipschitz", jac, doc)
    if kind in ("cubic", "locally_dissipative"):
        if kind == "cubic":
            a, c = float(p.get("a", 1.0)), float(p.get("c", 1.0))
        else:
            k1, k2, r0 = float(p.get("K1", 1.0)), float(p.get("K2", 1.0)), float(p.get("r0", 1.0))
            a, c = k1, 4.0 * (k1 + k2) / r0 ** 2

        def f(t, x):
            x = np.asarray(x, dtype=float)
            return a * x - c * _sq_norm(x) * x
        return DriftSpec(f, dim, "superlinear", _cubic_jac(a, c), doc)
    if kind == "singular_log":
        autonomous = bool(p.get("autonomous", False))
        cap = float(p.get("cap", 1e6))
        return DriftSpec(lambda t, x: singular_log_part(t, x, autonomous, cap), dim, "locally-bounded-singular",
                         None, doc)
    if kind == "singular_log_cubic":
        autonomous = bool(p.get("autonomous", False))
        cap = float(p.get("cap", 1e6))

        def f(t, x):
            x = np.asarray(x, dtype=float)
            return x - _sq_norm(x) * x + singular_log_part(t, x, autonomous, cap)
        return DriftSpec(f, dim, "locally-bounded-singular", None, doc)
    raise ConfigError(f"unknown drift kind {kind!r}")


def build_diffusion(doc, dim):
    kind = doc.get("kind", "constant")
    p = dict(doc.get("params", {}))
    if kind == "constant":
        sig = np.asarray(p.get("sigma", doc.get("sigma0", 1.0)), dtype=float)
        mat = sig * np.eye(dim) if sig.ndim == 0 else sig.reshape(dim, dim)
        sigma0 = float(doc.get("sigma0", float(np.sqrt(np.linalg.eigvalsh(mat @ mat.T).min()))))

        def f(t, x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(mat, x.shape[:-1] + (dim, dim)).copy()
        return DiffusionSpec(f, sigma0, (0.0, 0.0), mat, doc)
    if kind == "isotropic_sine":
        sigma0 = float(doc.get("sigma0", 1.0))
        amp = float(p.get("amp", 0.5))

        def f(t, x):
            x = np.asarray(x, dtype=float)
            s = sigma0 + 0.5 * amp * (1.0 + np.sin(x[..., 0]))
            return s[..., None, None] * np.eye(dim)
        # |σ(x)−σ(y)|_HS ≤ √d·amp/2·|x−y| and ≤ √d·amp
        c = math.sqrt(dim) * amp
        return DiffusionSpec(f, sigma0, (c, float(p.get("alpha1", 0.0))), None, doc)
    raise ConfigError(f"unknown diffusion kind {kind!r}")


def load_problem(doc):
    """Build a ProblemSpec from its JSON document (see README for the schema)."""
    if isinstance(doc, str):
        with open(doc) as fh:
            doc = json.load(fh)
    if "builtin" in doc:
        return builtin_example(doc["builtin"], **doc.get("params", {}))
    try:
        dim = int(doc["dimension"])
        drift = build_drift(doc["drift"], dim)
        diffusion = build_diffusion(doc["diffusion"], dim)
    except KeyError as exc:
        raise ConfigError(f"problem document missing field {exc}") from None
    profile = profile_from_dict(doc["profile"]) if doc.get("profile") else None
    ref = build_drift(doc["reference_drift"], dim) if doc.get("reference_drift") else None
    return ProblemSpec(drift, diffusion, profile, doc.get("label", ""), ref, doc)


def builtin_document(name, **params):
    dim = int(params.get("dim", 1))
    sigma0 = float(params.get("sigma0", 1.0))
    q = float(params.get("q", 1.0))
    diffusion = {"kind": "constant", "sigma0": sigma0, "params": {"sigma": sigma0}}
    if name == "ou":
        a = float(params.get("a", 1.0))
        return {
            "label": "ou", "dimension": dim,
            "drift": {"kind": "linear", "params": {"a": a}},
            "diffusion": diffusion,
            "profile": {"kbar1": {"kind": "zero"}, "kbar2": a, "theta": 0.0, "q": q},
        }
    if name == "dissipative_plus_bounded":
        a = float(params.get("a", 1.0))
        amp = float(params.get("amp", 0.5))
        c1 = float(params.get("C1", 1.0))
        alpha1 = float(params.get("alpha1", 0.5))
        kbar1 = {"kind": "sum", "terms": [
            {"kind": "power_sum", "params": {"coeffs": [c1], "exponents": [1.0]}},
            {"kind": "min_powers", "params": {"a": c1 * q, "e1": 2.0, "e2": 2.0 * alpha1}},
        ]}
        return {
            "label": "dissipative_plus_bounded", "dimension": dim,
            "drift": {"kind": "ou_plus_bounded", "params": {"a": a, "amp": amp}},
            "diffusion": diffusion,
            "profile": {"kbar1": kbar1, "kbar2": a, "theta": 0.0, "q": q},
        }
    if name == "locally_dissipative":
        k1 = float(params.get("K1", 1.0))
        k2 = float(params.get("K2", 1.0))
        r0 = float(params.get("r0", 1.0))
        alpha1 = float(params.get("alpha1", 1.0))
        c1 = float(params.get("C1", 1.0))
        e2 = 2.0 * alpha1
        terms = [{"kind": "indicator_power", "params": {"a": c1 * (k1 + k2), "r0": r0, "e": 2.0, "e2": e2}}]
        extra = max(q - 1.5, 0.0)
        if extra > 0:
            terms.append({"kind": "min_powers", "params": {"a": c1 * extra, "e1": 2.0, "e2": e2}})
        return {
            "label": "locally_dissipative", "dimension": dim,
            "drift": {"kind": "locally_dissipative", "params": {"K1": k1, "K2": k2, "r0": r0}},
            "diffusion": diffusion,
            "profile": {"kbar1": {"kind": "sum", "terms": terms}, "kbar2": k2, "theta": 0.0, "q": q},
        }
    if name == "singular_log_cubic":
        # the profile certifies the reference drift x − |x|²x only:
        # ⟨Z(x)−Z(y),x−y⟩ ≤ |x−y|² − |x−y|⁴/4
        return {
            "label": "singular_log_cubic", "dimension": dim,
            "drift": {"kind": "singular_log_cubic",
                      "params": {"autonomous": bool(params.get("autonomous", False)),
                                 "cap": float(params.get("cap", 1e6))}},
            "reference_drift": {"kind": "cubic", "params": {"a": 1.0, "c": 1.0}},
            "diffusion": diffusion,
            "profile": {"kbar1": {"kind": "power_sum", "params": {"coeffs": [1.0], "exponents": [2.0]}},
                        "kbar2": 0.25, "theta": 2.0, "q": q},
        }
    raise ConfigError(f"unknown builtin example {name!r}; choose from {BUILTIN_NAMES}")


def builtin_example(name, **params):
    doc = builtin_document(name, **params)
    doc["builtin"] = name
    spec = load_problem({k: v for k, v in doc.items() if k != "builtin"})
    return ProblemSpec(spec.drift, spec.diffusion, spec.profile, spec.label, spec.reference_drift, doc)


# --------------------------------------------------------------------------
# Audit of the dissipativity condition
# --------------------------------------------------------------------------

def dissipativity_lhs(spec, t, x, y, q):
    """⟨b(x)−b(y),x−y⟩ + ½|σ̃(x)−σ̃(y)|²_HS + (2q−3)|(σ̃*(x)−σ̃*(y))(x−y)|²/(2|x−y|²)."""
    drift = spec.reference_drift or spec.drift
    z = x - y
    v2 = np.sum(z * z, axis=-1)
    inner = np.sum((drift.evaluator(t, x) - drift.evaluator(t, y)) * z, axis=-1)
    if spec.diffusion.constant is not None:
        return inner, inner
    ds = spec.diffusion.sigma_tilde(t, x) - spec.diffusion.sigma_tilde(t, y)
    hs = 0.5 * np.sum(ds * ds, axis=(-2, -1))
    proj = np.einsum("...ji,...j->...i", ds, z)
    cross = (2.0 * q - 3.0) * np.sum(proj * proj, axis=-1) / (2.0 * v2)
    return inner + hs + cross, inner


def dissipativity_check(spec, n_pairs=10_000, radius=10.0, seed=0, t_max=10.0, profile=None):
    """Audit the supplied profile against the drift on random pairs.

    Returns a report whose ``max_violation`` is 0 when every sampled pair
    satisfies the bound (up to a 1e-10 relative rounding allowance).
    """
    profile = profile or spec.profile
    if profile is None:
        raise ConfigError("problem has no dissipativity profile")
    rng = np.random.default_rng(seed)
    d = spec.dimension
    x = _sample_ball(rng, n_pairs, d, radius)
    y = _sample_ball(rng, n_pairs, d, radius)
    ts = rng.random(n_pairs) * t_max
    lhs = np.empty(n_pairs)
    inner = np.empty(n_pairs)
    # group by time only matters for time-dependent drifts; evaluate pairwise
    autonomous = spec.reference_drift is not None or spec.drift.doc.get("kind") != "singular_log_cubic"
    if autonomous:
        lhs, inner = dissipativity_lhs(spec, 0.0, x, y, profile.q)
    else:
        for i in range(n_pairs):
            l, n = dissipativity_lhs(spec, ts[i], x[i:i + 1], y[i:i + 1], profile.q)
            lhs[i], inner[i] = l[0], n[0]
    v = np.linalg.norm(x - y, axis=-1)
    k1 = profile.kbar1(v)
    k2 = profile.kbar2 * v ** (2.0 + profile.theta)
    rhs = k1 - k2
    tol = 1e-10 * (np.abs(inner) + np.abs(lhs - inner) + np.abs(k1) + np.abs(k2))
    excess = np.where(v > 0, lhs - rhs - tol, -np.inf)
    worst = int(np.argmax(excess))
    max_violation = float(max(excess[worst], 0.0))
    report = {
        "label": spec.label,
        "n_pairs": n_pairs,
        "radius": radius,
        "seed": seed,
        "max_violation": max_violation,
        "violations": int(np.sum(excess > 0)),
        "passed": max_violation == 0.0,
        "audited_drift": "reference" if spec.reference_drift is not None else "full",
    }
    if max_violation > 0:
        report["worst_pair"] = {"x": x[worst].tolist(), "y": y[worst].tolist(), "lhs": float(lhs[worst]),
                                "rhs": float(rhs[worst])}
    if profile.q < 1.5 and spec.diffusion.constant is None:
        report["note"] = ("coefficient (2q-3) is negative for q < 3/2; the profile display in the "
                          "locally dissipative example uses (q-3/2)^+ instead")
    return report
