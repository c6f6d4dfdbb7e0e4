"""Norm experiments: strong Haagerup sandwich, key-lemma scan, moment bound,
ultracontractivity of the dilation semigroup.

Each experiment returns an :class:`ExperimentResult` holding both sides of
every inequality it checks. A bound counts as satisfied up to a one-sided
slack of ``SLACK * max(1, |bound|)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .combinatorics import constants, q_binomial, q_factorial
from .fockspace import (
    FockVector,
    NormalFormOperator,
    QContext,
    op_norm,
    q_norm,
    split_norm,
    word_inner,
)
from .moments import StarWord, circular_moment, moment_bound_rhs
from .qcircular import HoloPolynomial, _embed_beta, evaluate, l2_norm

SLACK = 1e-9
NORM_HEADROOM = 2
LADDER_STEPS = (4, 2, 0)
TAIL = 1e-12
MIN_T = 0.1
MAX_MOMENT_SIZE = 8


@dataclass
class ExperimentResult:
    name: str
    parameters: dict
    observed: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    satisfied: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)
    convergence: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.satisfied.values())

    def check_upper(self, key: str, value: float, bound: float, source: str):
        self.bounds[key] = bound
        self.sources[key] = source
        self.satisfied[key] = bool(value <= bound + SLACK * max(1.0, abs(bound)))

    def check_lower(self, key: str, value: float, bound: float, source: str):
        self.bounds[key] = bound
        self.sources[key] = source
        self.satisfied[key] = bool(value >= bound - SLACK * max(1.0, abs(bound)))

    def as_dict(self) -> dict:
        return asdict(self)


def _ladder(ctx: QContext, floor: int, ladder=None) -> list:
    if ladder is None:
        ladder = [ctx.trunc - k for k in LADDER_STEPS]
    rungs = sorted({int(t) for t in ladder if t >= floor})
    if not rungs:
        raise ValueError(f"no truncation rung >= {floor} (trunc={ctx.trunc})")
    return rungs


def _norm_over_ladder(ctx: QContext, build, rungs, tol, seed) -> tuple:
    values, converged = [], []
    for N in rungs:
        c = ctx.with_trunc(N)
        est = op_norm(c, build(c), tol=tol, seed=seed)
        values.append(est.value)
        converged.append(est.converged)
    conv = {
        "ladder": list(rungs),
        "values": values,
        "delta": values[-1] - values[-2] if len(values) > 1 else float("nan"),
        "monotone": bool(all(b >= a - 1e-9 * max(1.0, a) for a, b in zip(values, values[1:]))),
        "solver_converged": bool(all(converged)),
    }
    return values[-1], conv


def _power_of_one_generator(h: HoloPolynomial):
    if len(h.coeffs) != 1:
        return None
    (w,) = h.coeffs
    return len(w) if len(set(w)) <= 1 else None


def haagerup_ratio(ctx: QContext, h: HoloPolynomial, ladder=None, tol: float = 1e-10, seed=0) -> ExperimentResult:
    """``||h|| / ||h||_2`` against ``A' sqrt(n+1)`` (and ``sqrt(n+1)/b_q`` for ``c^n``)."""
    if not h.is_homogeneous():
        raise ValueError("haagerup_ratio needs a homogeneous polynomial")
    n = h.degree
    if ctx.trunc < n + NORM_HEADROOM:
        raise ValueError(f"trunc={ctx.trunc} below n + {NORM_HEADROOM}")
    k = constants(ctx.q)
    rungs = _ladder(ctx, n, ladder)
    l2 = l2_norm(ctx, h)
    if l2 == 0.0:
        raise ValueError("zero polynomial")
    norm, conv = _norm_over_ladder(ctx, lambda c: evaluate(c, h), rungs, tol, seed)
    ratio = norm / l2
    res = ExperimentResult(
        "haagerup",
        {"q": ctx.q, "d": ctx.d, "n": n, "trunc": rungs[-1], "seed": seed},
        {"norm": norm, "l2_norm": l2, "ratio": ratio, "ratio_over_sqrt": ratio / math.sqrt(n + 1)},
        convergence=conv,
    )
    res.check_upper("upper", ratio, k.a_prime * math.sqrt(n + 1), "strong Haagerup inequality, A' sqrt(n+1)")
    if _power_of_one_generator(h) is not None:
        res.check_lower("lower", ratio, math.sqrt(n + 1) / k.b_q, "sharpness for c^n, sqrt(n+1)/b_q")
    return res


def sharpness_witness(n: int, q: float) -> float:
    """``sqrt(sum_k binom(n, k)_q**2)``: ``||c^n psi|| / ||c^n||_2`` for ``psi = bar e^n`` normalised."""
    return math.sqrt(sum(q_binomial(n, k, q) ** 2 for k in range(n + 1)))


def sharpness_lower(ctx: QContext, n: int, ladder=None, tol: float = 1e-10, seed=0) -> ExperimentResult:
    if ctx.d != 1:
        raise ValueError("sharpness_lower works with a single generator (d=1)")
    if ctx.trunc < 2 * n:
        raise ValueError(f"trunc={ctx.trunc} < 2n={2 * n}: c^n (bar e)^n would be truncated")
    q = ctx.q
    k = constants(q)
    h = HoloPolynomial.power(n)
    l2 = math.sqrt(q_factorial(n, q))
    witness = sharpness_witness(n, q)

    # the same witness through the operator: c^n applied to the normalised bar-e^n
    psi = FockVector.basis((ctx.letter(1, bar=True),) * n, ctx, 1.0 / l2).to_array(ctx)
    w_vec = evaluate(ctx, h).matvec(psi)
    witness_matrix = q_norm(ctx, w_vec) / l2

    rungs = _ladder(ctx, 2 * n if ladder is None else n, ladder)
    norm, conv = _norm_over_ladder(ctx, lambda c: evaluate(c, h), rungs, tol, seed)
    ratio = norm / l2
    res = ExperimentResult(
        "sharpness",
        {"q": q, "d": 1, "n": n, "trunc": rungs[-1], "seed": seed},
        {"ratio": ratio, "witness": witness, "witness_matrix": witness_matrix},
        convergence=conv,
    )
    lower = math.sqrt(n + 1) / k.b_q
    res.check_lower("witness_vs_lower", witness, lower, "inverse q-binomial bound, sqrt(n+1)/b_q")
    res.check_lower("ratio_vs_witness", ratio, witness, "Rayleigh quotient at bar e^n")
    res.satisfied["witness_matrix"] = bool(abs(witness_matrix - witness) <= 1e-10 * max(1.0, witness))
    res.sources["witness_matrix"] = "operator applied to bar e^n vs closed form"
    return res


def random_split_tensors(d: int, n: int, seed=0, only_k: int | None = None) -> dict:
    """Seeded complex Gaussian ``xi_k`` of shape ``(d**k, d**(n-k))`` for ``k = 1..n``."""
    rng = np.random.default_rng(seed)
    out = {}
    for k in range(1, n + 1):
        xi = rng.standard_normal((d**k, d ** (n - k))) + 1j * rng.standard_normal((d**k, d ** (n - k)))
        if only_k is None or k == only_k:
            out[k] = xi / math.sqrt(2)
    return out


def keylem_operator(ctx: QContext, n: int, xis: dict) -> NormalFormOperator:
    """``sum_k M(a_k (x) a*_{n-k}) xi_k`` with ``xi_k`` in ``H_1^k (x) H_2^(n-k)``."""
    parts = [(k, n - k, _embed_beta(ctx, xi.reshape(-1), k, n)) for k, xi in sorted(xis.items())]
    return NormalFormOperator(ctx, parts)


def keylem_check(
    ctx: QContext, n: int, seed=0, only_k: int | None = None, ladder=None, tol: float = 1e-10
) -> ExperimentResult:
    if n < 1:
        raise ValueError("n must be >= 1")
    if ctx.trunc < n + NORM_HEADROOM:
        raise ValueError(f"trunc={ctx.trunc} below n + {NORM_HEADROOM}")
    k = constants(ctx.q)
    xis = random_split_tensors(ctx.d, n, seed, only_k)
    norms = {kk: split_norm(ctx, _embed_beta(ctx, xi.reshape(-1), kk, n), kk, n) for kk, xi in xis.items()}
    biggest = max(norms.values())
    rungs = _ladder(ctx, n, ladder)
    norm, conv = _norm_over_ladder(ctx, lambda c: keylem_operator(c, n, xis), rungs, tol, seed)
    ratio = norm / (math.sqrt(n) * biggest)
    res = ExperimentResult(
        "keylem",
        {"q": ctx.q, "d": ctx.d, "n": n, "trunc": rungs[-1], "seed": seed, "only_k": only_k},
        {"norm": norm, "max_xi_norm": biggest, "ratio": ratio},
        convergence=conv,
    )
    res.check_upper("A", ratio, k.a_haagerup, "key lemma constant A")
    if len(xis) == 1:
        res.check_upper("single_term", ratio, k.c_q / math.sqrt(n), "product-norm bound C_q / sqrt(n)")
    return res


def moment_bound_check(q: float, m: int, n: int, a: float | None = None) -> ExperimentResult:
    """``tau(((c^*)^n c^n)^m) <= a^(2m) (n+1)^m ([n]_q!)^m``; ``a`` defaults to ``A'``."""
    if m < 0 or n < 0:
        raise ValueError("m, n must be non-negative")
    if m * n > MAX_MOMENT_SIZE:
        raise ValueError(f"m*n = {m * n} exceeds the enumeration budget {MAX_MOMENT_SIZE}")
    k = constants(q)
    a = k.a_prime if a is None else float(a)
    lhs = circular_moment(q, StarWord.pattern(m, n))
    res = ExperimentResult("moment_bound", {"q": q, "m": m, "n": n, "a": a}, {"moment": lhs})
    res.check_upper("rhs", lhs, moment_bound_rhs(q, m, n, a), "moment inequality with constant a")
    return res


# ---------------------------------------------------------------------------
# ultracontractivity
# ---------------------------------------------------------------------------


def degree_cut_for(t: float, tail: float = TAIL) -> int:
    """Smallest ``M`` with ``exp(-2 M t) < tail``."""
    return int(math.floor(-math.log(tail) / (2 * t))) + 1


def psi_norm_sq(q: float, t: float, degree_cut: int) -> float:
    """``||psi_t||^2`` summed from ``<e^n, e^n>_q`` computed level by level."""
    terms = (math.exp(-2 * n * t) / q_factorial(n, q) * word_inner((0,) * n, (0,) * n, q) for n in range(degree_cut + 1))
    return float(sum(terms))


def _log_q_factorials(M: int, q: float) -> np.ndarray:
    # [n]_q > 0 for |q| < 1, so logs are safe and avoid overflow near |q| = 1
    ints = np.array([0.0] + [math.log(q_factorial(j, q) / q_factorial(j - 1, q)) for j in range(1, M + 1)])
    return np.cumsum(ints)


def hstar_h_coefficients(q: float, t: float, degree_cut: int) -> np.ndarray:
    """Closed form: coefficient of ``bar e^m (x) e^n`` in ``h_{2t}^* h_{2t} Omega``.

    ``sum_k exp(-2(m+n+2k)t) binom(m+k,k) binom(n+k,k) [k]! / sqrt([m+k]! [n+k]!)``
    with ``m + k, n + k <= degree_cut``. Summed in log space.
    """
    M = degree_cut
    lf = _log_q_factorials(M, q)
    m = np.arange(M + 1)[:, None, None]
    n = np.arange(M + 1)[None, :, None]
    k = np.arange(M + 1)[None, None, :]
    mk, nk = np.minimum(m + k, M), np.minimum(n + k, M)
    log_binoms = (lf[mk] - lf[k] - lf[m]) + (lf[nk] - lf[k] - lf[n])
    expo = -2 * (m + n + 2 * k) * t + log_binoms + lf[k] - 0.5 * (lf[mk] + lf[nk])
    terms = np.where((m + k <= M) & (n + k <= M), np.exp(expo), 0.0)
    return terms.sum(axis=2)


def _cstar_matrix(q: float, M: int) -> sp.csr_matrix:
    # c^* = a*(e) + a(bar e) on the span of bar e^m e^n, from the generic word rules
    e, ebar = 0, 1
    rows, cols, vals = [], [], []
    for m in range(M + 1):
        for n in range(M + 1):
            w = (ebar,) * m + (e,) * n
            v = FockVector.basis(w).annihilated(e, q) + FockVector.basis(w).created(ebar)
            for w2, c in v.items():
                m2, n2 = w2.count(ebar), w2.count(e)
                if w2 != (ebar,) * m2 + (e,) * n2:
                    raise AssertionError(f"c^* left the span: {w2}")
                if m2 <= M:
                    rows.append(m2 * (M + 1) + n2)
                    cols.append(m * (M + 1) + n)
                    vals.append(c.real)
    size = (M + 1) ** 2
    return sp.csr_matrix((vals, (rows, cols)), shape=(size, size))


def hstar_h_matrix(q: float, t: float, degree_cut: int) -> np.ndarray:
    """Same coefficients by applying ``c^*`` to Fock vectors.

    ``h_{2t} Omega = sum_n exp(-2nt) e^n / sqrt([n]!)``; ``h_{2t}^*`` is then
    applied by Horner's rule with ``c^*`` built from the generic creation and
    annihilation rules on words (no closed forms involved).
    """
    M = degree_cut
    lf = _log_q_factorials(M, q)
    w = np.exp(-2 * np.arange(M + 1) * t - 0.5 * lf)
    C = _cstar_matrix(q, M)
    hv = np.zeros((M + 1, M + 1))
    hv[0] = w
    hv = hv.reshape(-1)
    acc = hv * w[M]
    for m in range(M - 1, -1, -1):
        acc = C @ acc + hv * w[m]
    return acc.reshape(M + 1, M + 1)


def ultracontractivity_experiment(ctx: QContext, t: float, degree_cut: int | None = None) -> ExperimentResult:
    """``h_t = sum_n e^{-nt} c^n / sqrt([n]!)`` test of the ``1/t`` rate (single generator).

    ``ctx`` supplies ``q`` (``d`` must be 1); the computation runs on the span
    of words ``bar e^m e^n`` and does not use ``ctx.trunc``. The observed ratio
    is the fourth-moment lower estimate of ``||e^{-tN} h_t|| / ||h_t||_2``.
    """
    if ctx.d != 1:
        raise ValueError("the h_t experiment uses a single generator (d=1)")
    if not t > 0:
        raise ValueError("t must be positive")
    if t < MIN_T:
        raise ValueError(f"t={t} below the supported profile t >= {MIN_T}")
    if degree_cut is None:
        degree_cut = degree_cut_for(t)
    elif math.exp(-2 * degree_cut * t) >= TAIL:
        raise ValueError(f"degree_cut={degree_cut} leaves a tail exp(-2Mt) >= {TAIL}")
    q, M = ctx.q, degree_cut
    k = constants(q)

    psi = psi_norm_sq(q, t, M)
    psi_exact = 1.0 / (1.0 - math.exp(-2 * t))
    closed = hstar_h_coefficients(q, t, M)
    matrix = hstar_h_matrix(q, t, M)
    coef_err = float(np.max(np.abs(closed - matrix)))

    # bar e^m e^n are mutually orthogonal with squared norm [m]! [n]!
    half = np.exp(0.5 * _log_q_factorials(M, q))
    hh_sq = float(np.sum((matrix * np.outer(half, half)) ** 2))
    h2t_sq = 1.0 / (1.0 - math.exp(-4 * t))
    ratio = math.sqrt(hh_sq / (h2t_sq * psi))

    res = ExperimentResult(
        "ultra",
        {"q": q, "d": 1, "t": t, "degree_cut": M},
        {
            "psi_norm_sq": psi,
            "hstar_h_norm_sq": hh_sq,
            "ratio": ratio,
            "coefficient_error": coef_err,
        },
        convergence={"tail": math.exp(-2 * M * t)},
    )
    res.observed["analytic_psi"] = psi_exact
    res.satisfied["psi_norm"] = bool(abs(psi - psi_exact) <= 1e-10 * max(1.0, psi_exact))
    res.sources["psi_norm"] = "geometric series (1 - e^{-2t})^{-1}"
    res.satisfied["coefficients"] = bool(coef_err <= 1e-9)
    res.sources["coefficients"] = "closed-form triple sum vs operator application"
    res.check_lower("chain", hh_sq, (1 - math.exp(-4 * t)) ** -4 / k.b_q**2, "b_q^{-2} (1 - e^{-4t})^{-4}")
    res.check_lower("alpha_over_t", ratio, 1.0 / (4 * k.b_q * t), "alpha/t with alpha = 1/(4 b_q)")
    res.check_upper("beta_over_t", ratio, k.a_prime / (2 * t), "beta/t with beta = A'/2")
    res.check_upper("proven_upper", ratio, k.a_prime / (1 - math.exp(-2 * t)), "A'/(1 - e^{-2t})")
    return res


def dilation_l2_linf(ctx: QContext, h: HoloPolynomial, t: float, ladder=None, tol: float = 1e-10, seed=0) -> ExperimentResult:
    """``||D_t h|| / ||h||_2`` against ``beta/t`` and ``A'/(1 - e^{-2t})``."""
    if not t > 0:
        raise ValueError("t must be positive")
    k = constants(ctx.q)
    l2 = l2_norm(ctx, h)
    if l2 == 0.0:
        raise ValueError("zero polynomial")
    ht = h.dilate(t)
    rungs = _ladder(ctx, h.degree, ladder)
    norm, conv = _norm_over_ladder(ctx, lambda c: evaluate(c, ht), rungs, tol, seed)
    ratio = norm / l2
    res = ExperimentResult(
        "dilation",
        {"q": ctx.q, "d": ctx.d, "t": t, "degree": h.degree, "trunc": rungs[-1], "seed": seed},
        {"norm": norm, "l2_norm": l2, "ratio": ratio},
        convergence=conv,
    )
    res.check_upper("beta_over_t", ratio, k.a_prime / (2 * t), "beta/t with beta = A'/2")
    res.check_upper("proven_upper", ratio, k.a_prime / (1 - math.exp(-2 * t)), "A'/(1 - e^{-2t})")
    return res
