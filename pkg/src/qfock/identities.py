"""Residual checks for the algebraic identities of the q-Fock space.

Each check returns the largest absolute residual it saw (for inequalities,
the largest violation, 0 when the bound holds). Operator identities are
compared only on source columns of level ``<= trunc - HEADROOM``, where
compression cannot interfere.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .combinatorics import Permutation, constants, inversions, qpow
from .fockspace import (
    QContext,
    WordSumOperator,
    annihilate,
    create,
    level_p_matrix,
    level_r_matrix,
    level_star,
    permutation_matrix,
    phi_contract,
    q_inner,
    split_norm,
    star_array,
    word_creation,
)
from .qcircular import (
    NormalOrderedSum,
    expand_word,
    monomial,
    normal_order,
    onevar_normal_order_terms,
    to_letters,
    wick_polynomial,
)

HEADROOM = 4


def _column_block(ctx: QContext, max_level: int) -> sp.csc_matrix:
    stop = ctx.offsets[max(min(max_level, ctx.trunc), 0) + 1]
    return sp.identity(ctx.dim, dtype=complex, format="csc")[:, :stop]


def _op_residual(ctx: QContext, A, B, max_level: int) -> float:
    E = _column_block(ctx, max_level)
    D = A.apply_sparse(E) - B.apply_sparse(E)
    D = sp.csr_matrix(D)
    return float(np.abs(D.data).max()) if D.nnz else 0.0


def _holo_words(d: int, max_n: int, min_n: int = 0):
    for n in range(min_n, max_n + 1):
        yield from itertools.product(range(1, d + 1), repeat=n)


def q_commutation(ctx: QContext) -> float:
    """``a*_i a_j - q a_j a*_i = delta_ij`` on levels ``< trunc``."""
    E = _column_block(ctx, ctx.trunc - 1)
    worst = 0.0
    for i in range(ctx.s):
        Ai = annihilate(ctx, i).mat
        for j in range(ctx.s):
            Cj = create(ctx, j).mat
            D = Ai @ (Cj @ E) - ctx.q * (Cj @ (Ai @ E))
            if i == j:
                D = D - E
            D = sp.csr_matrix(D)
            if D.nnz:
                worst = max(worst, float(np.abs(D.data).max()))
    return worst


def adjointness(ctx: QContext, seed=0) -> float:
    """``<a_i x, y>_q = <x, a*_i y>_q`` on random vectors."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(ctx.dim) + 1j * rng.standard_normal(ctx.dim)
    y = rng.standard_normal(ctx.dim) + 1j * rng.standard_normal(ctx.dim)
    worst = 0.0
    for i in range(ctx.s):
        lhs = q_inner(ctx, create(ctx, i).matvec(x), y)
        rhs = q_inner(ctx, x, annihilate(ctx, i).matvec(y))
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    return worst


def symmetrizer(ctx: QContext, max_n: int = 5) -> float:
    """Recursive ``P^(n)`` against the brute-force sum over ``S_n``."""
    s, q = ctx.s, ctx.q
    worst = 0.0
    for n in range(min(max_n, ctx.trunc) + 1):
        brute = sp.csr_matrix((s**n, s**n))
        for images in itertools.permutations(range(1, n + 1)):
            p = Permutation(images)
            c = qpow(q, inversions(p))
            if c:
                brute = brute + c * permutation_matrix(p, s)
        D = (level_p_matrix(s, n, q) - brute).toarray()
        worst = max(worst, float(np.abs(D).max()) if D.size else 0.0)
    return worst


def ncbinom(ctx: QContext, max_n: int = 5) -> float:
    """``R_{k,n} (P^(k) (x) P^(n-k)) = P^(n)`` for all ``k <= n <= max_n``."""
    s, q = ctx.s, ctx.q
    worst = 0.0
    for n in range(min(max_n, ctx.trunc) + 1):
        P = level_p_matrix(s, n, q)
        for k in range(n + 1):
            split = sp.kron(level_p_matrix(s, k, q), level_p_matrix(s, n - k, q), format="csr")
            D = (level_r_matrix(s, k, n, q) @ split - P).toarray()
            worst = max(worst, float(np.abs(D).max()))
    return worst


def qcircular_expansion(ctx: QContext, max_n: int = 4) -> float:
    """Coset expansion of ``c_w`` against the product of compressed ``c_i``."""
    worst = 0.0
    for w in _holo_words(ctx.d, max_n, 1):
        worst = max(worst, _op_residual(ctx, expand_word(ctx, w), monomial(ctx, w), ctx.trunc - max(len(w), HEADROOM)))
    return worst


def annihilation_creation(ctx: QContext, max_len: int = 3) -> float:
    """Triple-sum normal ordering of ``(a_v)^* a_u`` against the direct product."""
    worst = 0.0
    words = list(_holo_words(ctx.d, max_len))
    for v in words:
        Av = word_creation(ctx, to_letters(ctx, v)).qadjoint()
        for u in words:
            direct = Av @ word_creation(ctx, to_letters(ctx, u))
            lvl = ctx.trunc - max(len(u), HEADROOM)
            worst = max(worst, _op_residual(ctx, normal_order(ctx, v, u), direct, lvl))
    return worst


def one_variable(ctx: QContext, max_kl: int = 4) -> float:
    """``a^{*k} a^l`` via q-binomials against the direct product (letter ``e_1``)."""
    worst = 0.0
    a = ctx.letter(1)
    for k in range(max_kl + 1):
        for l in range(max_kl + 1):
            direct = word_creation(ctx, (a,) * k).qadjoint() @ word_creation(ctx, (a,) * l)
            built = NormalOrderedSum(ctx, onevar_normal_order_terms(ctx, k, l, a))
            worst = max(worst, _op_residual(ctx, built, direct, ctx.trunc - max(l, HEADROOM)))
    return worst


def wick(ctx: QContext, max_n: int = 4) -> float:
    """``De_w(X) Omega = e_w``."""
    worst = 0.0
    for w in _holo_words(ctx.d, min(max_n, ctx.trunc)):
        out = wick_polynomial(ctx, w).matvec(ctx.vacuum()) if w else ctx.vacuum()
        out[ctx.index(to_letters(ctx, w))] -= 1.0
        worst = max(worst, float(np.abs(out).max()))
    return worst


def vacuum_words(ctx: QContext, max_n: int = 4) -> float:
    """``c_w Omega = e_w``."""
    worst = 0.0
    for w in _holo_words(ctx.d, min(max_n, ctx.trunc)):
        out = monomial(ctx, w).matvec(ctx.vacuum())
        out[ctx.index(to_letters(ctx, w))] -= 1.0
        worst = max(worst, float(np.abs(out).max()))
    return worst


def star(ctx: QContext, seed=0, max_n: int = 3) -> float:
    """Anti-unitarity and involutivity of ``*``, and ``[a_n(psi)]^* = a*_n(psi^*)``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(ctx.dim) + 1j * rng.standard_normal(ctx.dim)
    y = rng.standard_normal(ctx.dim) + 1j * rng.standard_normal(ctx.dim)
    sx, sy = star_array(ctx, x), star_array(ctx, y)
    scale = max(1.0, abs(q_inner(ctx, x, y)))
    worst = abs(q_inner(ctx, sx, sy) - np.conj(q_inner(ctx, x, y))) / scale
    worst = max(worst, float(np.abs(star_array(ctx, sx) - x).max()))
    s = ctx.s
    for n in range(1, min(max_n, ctx.trunc) + 1):
        psi = rng.standard_normal(s**n) + 1j * rng.standard_normal(s**n)
        an = WordSumOperator(ctx, n, 0, psi.reshape(s**n, 1))
        an_star = WordSumOperator(ctx, 0, n, level_star(s, n, psi).reshape(1, s**n))
        # check through the Gram, not through the structural adjoint
        lhs = q_inner(ctx, an.matvec(x), y)
        rhs = q_inner(ctx, x, an_star.matvec(y))
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    return float(worst)


def tensorineq(ctx: QContext, seed=0, trials: int = 20, max_level: int = 2) -> float:
    """Violation of ``||(I (x) Phi (x) I)(xi (x) eta)|| <= ||xi|| ||eta||``."""
    rng = np.random.default_rng(seed)
    s = ctx.s
    worst = 0.0
    for _ in range(trials):
        a, m, b = (int(v) for v in rng.integers(0, max_level + 1, size=3))
        xi = rng.standard_normal((s**a, s**m)) + 1j * rng.standard_normal((s**a, s**m))
        eta = rng.standard_normal((s**m, s**b)) + 1j * rng.standard_normal((s**m, s**b))
        out = phi_contract(ctx, xi, eta, m)
        lhs = split_norm(ctx, out, a, a + b)
        rhs = split_norm(ctx, xi, a, a + m) * split_norm(ctx, eta, m, m + b)
        worst = max(worst, (lhs - rhs) / max(1.0, rhs))
    return max(worst, 0.0)


def rstar(ctx: QContext, seed=0, max_n: int = 5, trials: int = 4) -> float:
    """Violations of ``||R*_{k,n} xi||_split <= C^(1/2) ||xi||`` and ``P^(n) <= C (P^(k) (x) P^(n-k))``."""
    rng = np.random.default_rng(seed)
    s, q = ctx.s, ctx.q
    C = constants(q).c_q
    worst = 0.0
    for n in range(1, min(max_n, ctx.trunc) + 1):
        if s**n > 1024:
            break
        P = level_p_matrix(s, n, q).toarray()
        for k in range(n + 1):
            Rs = level_r_matrix(s, k, n, q).T
            for _ in range(trials):
                xi = rng.standard_normal(s**n) + 1j * rng.standard_normal(s**n)
                nxi = math.sqrt(max(np.vdot(xi, P @ xi).real, 0.0))
                lhs = split_norm(ctx, Rs @ xi, k, n)
                worst = max(worst, (lhs - math.sqrt(C) * nxi) / max(1.0, nxi))
            split = np.kron(level_p_matrix(s, k, q).toarray(), level_p_matrix(s, n - k, q).toarray())
            gap = np.linalg.eigvalsh(C * split - P).min()
            worst = max(worst, -gap)
    return max(worst, 0.0)


@dataclass
class SuiteReport:
    q: float
    d: int
    trunc: int
    residuals: dict = field(default_factory=dict)

    def passed(self, tol: float) -> bool:
        return all(v < tol for v in self.residuals.values())


SUITE = {
    "q_commutation": lambda ctx, n: q_commutation(ctx),
    "adjointness": lambda ctx, n: adjointness(ctx),
    "symmetrizer": lambda ctx, n: symmetrizer(ctx, min(n + 1, 5)),
    "ncbinom": lambda ctx, n: ncbinom(ctx, min(n + 1, 5)),
    "qcircular": lambda ctx, n: qcircular_expansion(ctx, n),
    "vacuum_words": lambda ctx, n: vacuum_words(ctx, n),
    "annihilation_creation": lambda ctx, n: annihilation_creation(ctx, min(n, 3)),
    "one_variable": lambda ctx, n: one_variable(ctx, n),
    "wick": lambda ctx, n: wick(ctx, n),
    "star": lambda ctx, n: star(ctx),
    "tensorineq": lambda ctx, n: tensorineq(ctx),
    "rstar": lambda ctx, n: rstar(ctx, max_n=min(n + 1, 5)),
}


def run_suite(ctx: QContext, max_n: int = 4, names=None) -> SuiteReport:
    """Run the named checks (all by default) with words up to length ``max_n``."""
    rep = SuiteReport(ctx.q, ctx.d, ctx.trunc)
    for name in names or SUITE:
        rep.residuals[name] = float(SUITE[name](ctx, max_n))
    return rep
