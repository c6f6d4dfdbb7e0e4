"""q-circular and q-Gaussian operators, holomorphic polynomials and their expansions.

Generators are 1-based (``c_1 .. c_d``); internally the Fock letters of
``qfock.fockspace`` are used, with ``e_i`` at code ``i-1`` and its barred
copy at ``i-1+d``.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .combinatorics import (
    coset_representatives,
    inversions,
    q_binomial,
    q_factorial,
    qpow,
)
from .fockspace import (
    FockOperator,
    FockVector,
    LinearCombination,
    NormalFormOperator,
    ProductOperator,
    QContext,
    SparseOperator,
    WordSumOperator,
    _annihilation_matrix,
    _creation_matrix,
    identity,
    level_r_matrix,
    q_inner,
    word_inner,
)

# ---------------------------------------------------------------------------
# words and polynomials
# ---------------------------------------------------------------------------


def parse_holo_word(word, d: int | None = None) -> tuple:
    """Normalise a word over the unbarred generators to a tuple of ints.

    Accepts a sequence of ints or a whitespace separated string such as
    ``"1 2 1"``. Barred tokens (``"1b"``, ``"~1"``) are rejected.
    """
    if isinstance(word, str):
        tokens = word.split()
    else:
        tokens = list(word)
    out = []
    for t in tokens:
        if isinstance(t, str):
            t = t.strip()
            if t.startswith("~") or t.endswith(("b", "bar", "̄")):
                raise ValueError(f"barred letter {t!r} in a holomorphic word")
            t = int(t)
        if isinstance(t, bool) or not isinstance(t, (int, np.integer)):
            raise ValueError(f"letter {t!r} is not a generator index")
        t = int(t)
        if d is not None and not 1 <= t <= d:
            raise IndexError(f"generator {t} out of range 1..{d}")
        if t < 1:
            raise ValueError(f"generator index must be positive, got {t}")
        out.append(t)
    return tuple(out)


def to_letters(ctx: QContext, word: Sequence[int], bar: bool = False) -> tuple:
    return tuple(ctx.letter(i, bar) for i in word)


@dataclass(frozen=True)
class HoloPolynomial:
    """``sum_w alpha_w c_w`` over words in the unbarred generators 1..d."""

    coeffs: Mapping = field(default_factory=dict)
    d: int = 1

    def __post_init__(self):
        clean = {}
        for w, a in dict(self.coeffs).items():
            w = parse_holo_word(w, self.d)
            a = complex(a)
            if a != 0:
                clean[w] = clean.get(w, 0) + a
        object.__setattr__(self, "coeffs", {w: a for w, a in clean.items() if a != 0})

    @classmethod
    def monomial(cls, word, d: int = 1, coef: complex = 1.0):
        return cls({parse_holo_word(word, d): coef}, d)

    @classmethod
    def power(cls, n: int, d: int = 1, generator: int = 1):
        """``c_generator ** n``."""
        return cls({(generator,) * n: 1.0}, d)

    @classmethod
    def random_homogeneous(cls, d: int, n: int, seed=0, unit: bool = False, normalize: bool = False):
        """Independent standard complex Gaussian coefficients on all words of length ``n``.

        ``unit=True`` keeps only the phases (unit-modulus coefficients).
        """
        rng = np.random.default_rng(seed)
        words = list(itertools.product(range(1, d + 1), repeat=n))
        z = (rng.standard_normal(len(words)) + 1j * rng.standard_normal(len(words))) / math.sqrt(2)
        if unit:
            z = z / np.abs(z)
        if normalize:
            z = z / np.linalg.norm(z)
        return cls(dict(zip(words, z)), d)

    @property
    def degree(self) -> int:
        return max((len(w) for w in self.coeffs), default=0)

    def degrees(self) -> set:
        return {len(w) for w in self.coeffs}

    def is_homogeneous(self) -> bool:
        return len(self.degrees()) <= 1

    def homogeneous_part(self, n: int) -> "HoloPolynomial":
        return HoloPolynomial({w: a for w, a in self.coeffs.items() if len(w) == n}, self.d)

    def dilate(self, t: float) -> "HoloPolynomial":
        """``D_t h``: the degree-``n`` part is scaled by ``e^{-nt}``."""
        return HoloPolynomial({w: a * math.exp(-len(w) * t) for w, a in self.coeffs.items()}, self.d)

    def vector(self, ctx: QContext | None = None) -> FockVector:
        """``h Omega = sum_w alpha_w e_w`` as a sparse Fock vector."""
        if ctx is None:
            return FockVector({tuple(i - 1 for i in w): a for w, a in self.coeffs.items()})
        return FockVector({tuple(ctx.letter(i) for i in w): a for w, a in self.coeffs.items()}, ctx)

    def __add__(self, other):
        out = dict(self.coeffs)
        for w, a in other.coeffs.items():
            out[w] = out.get(w, 0) + a
        return HoloPolynomial(out, max(self.d, other.d))

    def __mul__(self, alpha):
        return HoloPolynomial({w: alpha * a for w, a in self.coeffs.items()}, self.d)

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=256)
def c_op(ctx: QContext, i: int) -> SparseOperator:
    """``c_i = a_i + a*_{i bar}`` (compressed)."""
    a, abar = ctx.letter(i), ctx.letter(i, bar=True)
    mat = _creation_matrix(ctx, a) + _annihilation_matrix(ctx, abar)
    adj = _annihilation_matrix(ctx, a) + _creation_matrix(ctx, abar)
    return SparseOperator(ctx, mat, adj, "circular")


def c_star_op(ctx: QContext, i: int) -> SparseOperator:
    """``c_i^* = a*_i + a_{i bar}``."""
    return c_op(ctx, i).qadjoint()


@functools.lru_cache(maxsize=256)
def x_op(ctx: QContext, letter: int) -> SparseOperator:
    """Field operator ``X = a(e_letter) + a*(e_letter)`` for a Fock letter code."""
    letter = ctx.check_letter(letter)
    m = _creation_matrix(ctx, letter) + _annihilation_matrix(ctx, letter)
    return SparseOperator(ctx, m, m, "field")


def monomial(ctx: QContext, w) -> SparseOperator | ProductOperator:
    """``c_w = c_{w_1} ... c_{w_n}`` as a product of compressed factors."""
    w = parse_holo_word(w, ctx.d)
    if not w:
        return identity(ctx)
    return ProductOperator([c_op(ctx, i) for i in w])


def trace(ctx: QContext, T) -> complex:
    """``tau(T) = <T Omega, Omega>_q`` (the vacuum coefficient of ``T Omega``)."""
    return complex(T.matvec(ctx.vacuum())[0])


# ---------------------------------------------------------------------------
# normal-ordered sums
# ---------------------------------------------------------------------------


def _word_product(ctx, letters, kind):
    mats = [(_creation_matrix if kind == "c" else _annihilation_matrix)(ctx, a) for a in letters]
    return mats


def _chain(mats, E):
    acc = E
    for m in reversed(mats):
        acc = m @ acc
    return acc


class NormalOrderedSum(FockOperator):
    """``sum coef * a_u a*_v`` over an explicit list of letter words.

    Materialised lazily (only the requested columns) via sparse products of
    the primitive matrices. The q-adjoint swaps to ``conj(coef) a_{v*} a*_{u*}``.
    """

    def __init__(self, ctx: QContext, terms):
        super().__init__(ctx)
        acc = {}
        for coef, u, v in terms:
            key = (tuple(u), tuple(v))
            acc[key] = acc.get(key, 0) + complex(coef)
        self.terms = [(c, u, v) for (u, v), c in acc.items() if c != 0]
        self.kind = "normal"
        self._mat = None

    def apply_sparse(self, E):
        out = sp.csr_matrix((self.ctx.dim, E.shape[1]), dtype=complex)
        for c, u, v in self.terms:
            mats = _word_product(self.ctx, u, "c") + _word_product(self.ctx, v, "a")
            out = out + c * _chain(mats, sp.csc_matrix(E))
        return out.tocsr()

    def matvec(self, x):
        x = np.asarray(x, dtype=complex)
        out = np.zeros_like(x)
        for c, u, v in self.terms:
            mats = _word_product(self.ctx, u, "c") + _word_product(self.ctx, v, "a")
            out += c * _chain(mats, x)
        return out

    def to_sparse(self):
        if self._mat is None:
            self._mat = self.apply_sparse(sp.identity(self.ctx.dim, dtype=complex, format="csc"))
        return self._mat

    def qadjoint(self):
        return NormalOrderedSum(self.ctx, [(np.conj(c), v[::-1], u[::-1]) for c, u, v in self.terms])


def expand_word_terms(ctx: QContext, w, barred: bool = True):
    """Terms ``(q^inv(pi), u, v)`` of the coset double sum for ``c_w`` (or the Wick
    polynomial when ``barred`` is false)."""
    w = parse_holo_word(w, ctx.d)
    n = len(w)
    letters = to_letters(ctx, w)
    terms = []
    for k in range(n + 1):
        for pi in coset_representatives(n, k):
            c = qpow(ctx.q, inversions(pi))
            if c == 0.0:
                continue
            x = pi.act_inverse(letters)
            u = x[:k]
            v = tuple(ctx.bar(a) for a in x[k:]) if barred else x[k:]
            terms.append((c, u, v))
    return terms


def expand_word(ctx: QContext, w) -> NormalOrderedSum:
    """``c_w`` rebuilt from its normal-ordered expansion over coset representatives."""
    return NormalOrderedSum(ctx, expand_word_terms(ctx, w, barred=True))


def wick_polynomial(ctx: QContext, w) -> NormalOrderedSum:
    """q-Wick operator ``De_w(X_1, .., X_d)``; maps the vacuum to ``e_w``."""
    return NormalOrderedSum(ctx, expand_word_terms(ctx, w, barred=False))


def normal_order_terms(ctx: QContext, v, u):
    """Terms of the triple-sum normal ordering of ``(a_v)^* a_u``."""
    v = to_letters(ctx, parse_holo_word(v, ctx.d))
    u = to_letters(ctx, parse_holo_word(u, ctx.d))
    k, l, q = len(v), len(u), ctx.q
    vstar = v[::-1]
    terms = []
    for m in range(min(k, l) + 1):
        base = qpow(q, (k - m) * (l - m))
        if base == 0.0:
            continue
        for p1 in coset_representatives(k, k - m):
            x = p1.act_inverse(vstar)
            left = x[k - m :][::-1]
            for p2 in coset_representatives(l, m):
                y = p2.act_inverse(u)
                c = base * qpow(q, inversions(p1) + inversions(p2))
                if c == 0.0:
                    continue
                scal = word_inner(left, y[:m], q)
                if scal == 0.0:
                    continue
                terms.append((c * scal, y[m:], x[: k - m]))
    return terms


def normal_order(ctx: QContext, v, u) -> NormalOrderedSum:
    """``(a_v)^* a_u`` as a normal-ordered sum of ``a_x a*_y``."""
    return NormalOrderedSum(ctx, normal_order_terms(ctx, v, u))


def onevar_normal_order_terms(ctx: QContext, k: int, l: int, letter: int = 0):
    """One-variable case: ``a^{*k} a^l = sum_m q^{(k-m)(l-m)} [k, k-m]_q [l, m]_q [m]_q! a^{l-m} a^{*(k-m)}``."""
    q = ctx.q
    terms = []
    for m in range(min(k, l) + 1):
        c = qpow(q, (k - m) * (l - m)) * q_binomial(k, k - m, q) * q_binomial(l, m, q) * q_factorial(m, q)
        terms.append((c, (letter,) * (l - m), (letter,) * (k - m)))
    return terms


# ---------------------------------------------------------------------------
# evaluation of holomorphic polynomials
# ---------------------------------------------------------------------------


def _embed_beta(ctx: QContext, xi_d: np.ndarray, k: int, n: int) -> np.ndarray:
    """Lift a level-``n`` tensor over the ``d`` unbarred letters to the full
    alphabet, barring the trailing ``n-k`` letters."""
    d, s = ctx.d, ctx.s
    t = xi_d.reshape((d,) * n) if n else xi_d.reshape(())
    out = np.zeros((s,) * n, dtype=complex) if n else np.zeros((), dtype=complex)
    idx = tuple([slice(0, d)] * k + [slice(d, 2 * d)] * (n - k))
    out[idx] = t
    return out.reshape(s**k, s ** (n - k))


def normal_form(ctx: QContext, h: HoloPolynomial) -> FockOperator:
    """``sum_n sum_k M(a_k (x) a*_{n-k}) (I_k (x) Ibar_{n-k}) R*_{k,n} xi_n``.

    The compression of this sum to ``trunc`` is the exact compression of ``h``
    (creations only raise levels, annihilations only lower them).
    """
    d, q = ctx.d, ctx.q
    parts = []
    for n in sorted(h.degrees()):
        xi = np.zeros(d**n, dtype=complex)
        for w, a in h.coeffs.items():
            if len(w) == n:
                r = 0
                for i in w:
                    r = r * d + (i - 1)
                xi[r] += a
        for k in range(n + 1):
            beta = level_r_matrix(d, k, n, q).T @ xi
            if not beta.any():
                continue
            parts.append((k, n - k, _embed_beta(ctx, beta, k, n)))
    return NormalFormOperator(ctx, parts)


def evaluate(ctx: QContext, h: HoloPolynomial, method: str = "normal"):
    """Operator of ``h`` on the truncated space.

    ``"normal"`` (default) gives the compression ``P_N h P_N`` via the
    normal-ordered form; ``"product"`` multiplies compressed generators, which
    agrees with it on words of length ``<= trunc - deg h``.
    """
    if h.d > ctx.d:
        raise ValueError("polynomial uses more generators than the context")
    if method == "normal":
        return normal_form(ctx, h)
    if method == "product":
        if not h.coeffs:
            return LinearCombination([(0.0, identity(ctx))])
        return LinearCombination([(a, monomial(ctx, w)) for w, a in h.coeffs.items()])
    raise ValueError(f"unknown method {method!r}")


def l2_norm(ctx: QContext | None, h: HoloPolynomial, q: float | None = None) -> float:
    """``||h||_2 = ||h Omega||_q``."""
    q = ctx.q if q is None else q
    vec = h.vector()
    return math.sqrt(max(q_inner(QContext(q, h.d, h.degree), vec, vec).real, 0.0))


def word_creation_sum(ctx: QContext, k: int, m: int, beta) -> WordSumOperator:
    """``sum beta[u, v] a_u a*_v`` over Fock letter words (re-exported helper)."""
    return WordSumOperator(ctx, k, m, beta)
