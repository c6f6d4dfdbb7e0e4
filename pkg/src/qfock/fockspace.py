"""Truncated q-Fock space over H = C^d (+) C^d.

Letters are integer codes ``0..2d-1``; code ``i + d`` is the barred copy of
``i``. Basis words are ordered by (length, lexicographic), so level ``L``
occupies ``offsets[L] : offsets[L] + s**L`` with ``s = 2d`` and the word
``w`` sits at ``offsets[L] + ravel(w)`` (first letter most significant).

Operators are compressions to levels ``<= trunc``. Every operator carries its
adjoint for the q-inner product, built structurally from the fact that the
compressed creation and annihilation operators are exact q-adjoints of each
other; norms then only need Gram *applications*, never Gram solves.
"""

from __future__ import annotations

import functools
import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import kernels
from .combinatorics import check_q, coset_representatives, inversions, qpow

# ---------------------------------------------------------------------------
# context and words
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QContext:
    q: float
    d: int
    trunc: int

    def __post_init__(self):
        object.__setattr__(self, "q", check_q(self.q))
        if int(self.d) < 1:
            raise ValueError("d must be a positive integer")
        if int(self.trunc) < 0:
            raise ValueError("trunc must be nonnegative")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "trunc", int(self.trunc))

    @property
    def s(self) -> int:
        return 2 * self.d

    @functools.cached_property
    def offsets(self) -> np.ndarray:
        off = np.zeros(self.trunc + 2, dtype=np.int64)
        for L in range(self.trunc + 1):
            off[L + 1] = off[L] + self.s**L
        return off

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])

    def level_slice(self, L: int) -> slice:
        return slice(int(self.offsets[L]), int(self.offsets[L + 1]))

    def with_trunc(self, trunc: int) -> "QContext":
        return QContext(self.q, self.d, trunc)

    def letter(self, i: int, bar: bool = False) -> int:
        """Code of generator ``i`` (1-based), or of its barred copy."""
        if not 1 <= i <= self.d:
            raise IndexError(f"generator index {i} out of range 1..{self.d}")
        return i - 1 + (self.d if bar else 0)

    def check_letter(self, a: int) -> int:
        a = int(a)
        if not 0 <= a < self.s:
            raise ValueError(f"letter code {a} out of range 0..{self.s - 1}")
        return a

    def bar(self, a: int) -> int:
        a = self.check_letter(a)
        return a + self.d if a < self.d else a - self.d

    def index(self, word: Sequence[int]) -> int:
        L = len(word)
        if L > self.trunc:
            raise ValueError(f"word of length {L} exceeds trunc {self.trunc}")
        r = 0
        for a in word:
            r = r * self.s + self.check_letter(a)
        return int(self.offsets[L]) + r

    def word(self, index: int) -> tuple:
        index = int(index)
        if not 0 <= index < self.dim:
            raise IndexError(index)
        L = int(np.searchsorted(self.offsets, index, side="right")) - 1
        r = index - int(self.offsets[L])
        out = []
        for _ in range(L):
            r, a = divmod(r, self.s)
            out.append(a)
        return tuple(reversed(out))

    def words(self, L: int) -> Iterable[tuple]:
        return _itertools_product(range(self.s), L)

    def level_of(self, index: int) -> int:
        return int(np.searchsorted(self.offsets, index, side="right")) - 1

    def levels(self) -> np.ndarray:
        """Level of every basis index."""
        return np.repeat(np.arange(self.trunc + 1), np.diff(self.offsets))

    def vacuum(self) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[0] = 1.0
        return v

    def basis(self, word: Sequence[int]) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(word)] = 1.0
        return v


def _itertools_product(alphabet, L):
    import itertools

    return itertools.product(alphabet, repeat=L)


def star_word(w: Sequence[int]) -> tuple:
    """``w* = w_n ... w_1`` (basis letters are selfadjoint)."""
    return tuple(reversed(tuple(w)))


def bar_word(ctx: QContext, w: Sequence[int]) -> tuple:
    return tuple(ctx.bar(a) for a in w)


# ---------------------------------------------------------------------------
# sparse vectors
# ---------------------------------------------------------------------------


class FockVector:
    """Sparse map from words (tuples of letter codes) to complex coefficients."""

    __slots__ = ("coeffs", "ctx")

    def __init__(self, coeffs=None, ctx: QContext | None = None):
        self.ctx = ctx
        out = {}
        for w, c in (coeffs or {}).items():
            w = tuple(int(a) for a in w)
            if ctx is not None and len(w) > ctx.trunc:
                raise ValueError(f"word {w} longer than trunc {ctx.trunc}")
            c = complex(c)
            if c != 0:
                out[w] = out.get(w, 0) + c
        self.coeffs = {w: c for w, c in out.items() if c != 0}

    @classmethod
    def vacuum(cls, ctx=None):
        return cls({(): 1.0}, ctx)

    @classmethod
    def basis(cls, word, ctx=None, coef=1.0):
        return cls({tuple(word): coef}, ctx)

    @classmethod
    def from_array(cls, ctx: QContext, x, atol: float = 0.0):
        x = np.asarray(x)
        nz = np.flatnonzero(np.abs(x) > atol)
        return cls({ctx.word(i): x[i] for i in nz}, ctx)

    def to_array(self, ctx: QContext | None = None) -> np.ndarray:
        ctx = ctx or self.ctx
        v = np.zeros(ctx.dim, dtype=complex)
        for w, c in self.coeffs.items():
            v[ctx.index(w)] += c
        return v

    def __len__(self):
        return len(self.coeffs)

    def __iter__(self):
        return iter(self.coeffs)

    def items(self):
        return self.coeffs.items()

    def get(self, w, default=0.0):
        return self.coeffs.get(tuple(w), default)

    def __repr__(self):
        return f"FockVector({self.coeffs!r})"

    def _combine(self, other, sign):
        out = dict(self.coeffs)
        for w, c in other.coeffs.items():
            out[w] = out.get(w, 0) + sign * c
        return FockVector(out, self.ctx or other.ctx)

    def __add__(self, other):
        return self._combine(other, 1)

    def __sub__(self, other):
        return self._combine(other, -1)

    def __neg__(self):
        return FockVector({w: -c for w, c in self.coeffs.items()}, self.ctx)

    def __mul__(self, alpha):
        return FockVector({w: alpha * c for w, c in self.coeffs.items()}, self.ctx)

    __rmul__ = __mul__

    def max_level(self) -> int:
        return max((len(w) for w in self.coeffs), default=0)

    def level(self, L: int) -> "FockVector":
        return FockVector({w: c for w, c in self.coeffs.items() if len(w) == L}, self.ctx)

    def created(self, letter: int) -> "FockVector":
        """``a(e_letter)``: prepend, dropping words above the truncation."""
        cap = self.ctx.trunc if self.ctx is not None else None
        out = {}
        for w, c in self.coeffs.items():
            if cap is not None and len(w) + 1 > cap:
                continue
            out[(letter,) + w] = c
        return FockVector(out, self.ctx)

    def annihilated(self, letter: int, q: float | None = None) -> "FockVector":
        """``a*(e_letter)``: remove an occurrence at position k with weight q^(k-1)."""
        q = self.ctx.q if q is None else q
        out = {}
        for w, c in self.coeffs.items():
            wt = 1.0
            for k, a in enumerate(w):
                if a == letter and wt != 0.0:
                    key = w[:k] + w[k + 1 :]
                    out[key] = out.get(key, 0) + wt * c
                wt *= q
        return FockVector(out, self.ctx)

    def star(self) -> "FockVector":
        return star_vector(self)


def star_vector(x):
    """Antilinear involution: conjugate coefficients and reverse words."""
    return FockVector({star_word(w): np.conj(c) for w, c in x.coeffs.items()}, x.ctx)


def star_array(ctx: QContext, x: np.ndarray) -> np.ndarray:
    """:func:`star_vector` on a dense coefficient array."""
    x = np.asarray(x, dtype=complex)
    out = np.empty_like(x)
    for L in range(ctx.trunc + 1):
        sl = ctx.level_slice(L)
        out[sl] = level_star(ctx.s, L, x[sl])
    return out


# ---------------------------------------------------------------------------
# q-inner products
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=1 << 20)
def _word_inner(w: tuple, v: tuple, q: float) -> float:
    n = len(w)
    if n == 0:
        return 1.0
    first, rest = v[0], v[1:]
    total = 0.0
    c = 1.0
    for j in range(n):
        if c == 0.0:
            break
        if w[j] == first:
            total += c * _word_inner(w[:j] + w[j + 1 :], rest, q)
        c *= q
    return total


def word_inner(w: Sequence[int], v: Sequence[int], q: float) -> float:
    """``<P e_w, e_v> = sum over pi with pi(w) = v of q^inv(pi)``."""
    w, v = tuple(w), tuple(v)
    if len(w) != len(v) or sorted(w) != sorted(v):
        return 0.0
    return _word_inner(w, v, float(q))


def level_gram_apply(y: np.ndarray, s: int, L: int, q: float) -> np.ndarray:
    """Apply P^(L) to the rows of ``y`` (shape ``(B, s**L)``).

    Uses ``P^(L) = (I (x) P^(L-1)) R*_{1,L}`` so the cost is O(L^2 s^L) per row.
    """
    B = y.shape[0]
    for j in range(L, 1, -1):
        y = kernels.rstar_step(y.reshape(-1, s**j), s, j, q)
    return y.reshape(B, s**L)


def _levelwise(ctx: QContext, x: np.ndarray, fn) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    vec = x.ndim == 1
    X = x.reshape(ctx.dim, -1)
    out = np.empty_like(X)
    for L in range(ctx.trunc + 1):
        sl = ctx.level_slice(L)
        out[sl] = fn(np.ascontiguousarray(X[sl].T), L).T
    return out[:, 0] if vec else out


def gram_apply(ctx: QContext, x: np.ndarray) -> np.ndarray:
    """Block-diagonal Gram matrix ``G = (+)_L P^(L)`` applied to ``x``."""
    return _levelwise(ctx, x, lambda blk, L: level_gram_apply(blk, ctx.s, L, ctx.q))


def q_inner(ctx: QContext | None, x, y) -> complex:
    """``<x, y>_q``, linear in ``x`` and conjugate-linear in ``y``."""
    if isinstance(x, FockVector) and isinstance(y, FockVector):
        q = ctx.q if ctx is not None else (x.ctx or y.ctx).q
        total = 0j
        by_key = {}
        for v, cv in y.coeffs.items():
            by_key.setdefault((len(v), tuple(sorted(v))), []).append((v, cv))
        for w, cw in x.coeffs.items():
            for v, cv in by_key.get((len(w), tuple(sorted(w))), ()):
                total += cw * np.conj(cv) * _word_inner(w, v, float(q))
        return complex(total)
    if isinstance(x, FockVector):
        x = x.to_array(ctx)
    if isinstance(y, FockVector):
        y = y.to_array(ctx)
    return complex(np.vdot(y, gram_apply(ctx, x)))


def q_norm(ctx: QContext | None, x) -> float:
    return math.sqrt(max(q_inner(ctx, x, x).real, 0.0))


# ---------------------------------------------------------------------------
# level matrices: P^(n), R_{k,n}
# ---------------------------------------------------------------------------


def _digits(s: int, n: int) -> np.ndarray:
    """``(n, s**n)`` array of letters, first letter in row 0."""
    idx = np.arange(s**n, dtype=np.int64)
    out = np.empty((n, idx.size), dtype=np.int64)
    for p in range(n):
        out[p] = (idx // s ** (n - 1 - p)) % s
    return out


def _ravel(digits: np.ndarray, s: int) -> np.ndarray:
    out = np.zeros(digits.shape[1], dtype=np.int64)
    for row in digits:
        out = out * s + row
    return out


@functools.lru_cache(maxsize=256)
def rstar_matrix(s: int, n: int, q: float) -> sp.csr_matrix:
    """R*_{1,n}: ``e_w -> sum_j q^(j-1) e_{w_j w_1 .. (w_j omitted) .. w_n}``."""
    N = s**n
    if n == 0:
        return sp.identity(1, dtype=float, format="csr")
    idx = np.arange(N, dtype=np.int64)
    rows, cols, vals = [], [], []
    for p in range(n):
        c = qpow(q, p)
        if c == 0.0:
            continue
        lo = s ** (n - 1 - p)
        dgt = (idx // lo) % s
        out = dgt * s ** (n - 1) + (idx // (lo * s)) * lo + idx % lo
        rows.append(out)
        cols.append(idx)
        vals.append(np.full(N, c))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))


@functools.lru_cache(maxsize=256)
def level_p_matrix(s: int, n: int, q: float) -> sp.csr_matrix:
    if n <= 1:
        return sp.identity(s**n, dtype=float, format="csr")
    inner = sp.kron(sp.identity(s, format="csr"), level_p_matrix(s, n - 1, q), format="csr")
    return (inner @ rstar_matrix(s, n, q)).tocsr()


def p_matrix(ctx: QContext, n: int) -> sp.csr_matrix:
    """The symmetrizer ``P^(n) = sum_pi q^inv(pi) pi`` on level ``n`` (sparse, real)."""
    if not 0 <= n <= ctx.trunc:
        raise ValueError(f"level {n} outside 0..{ctx.trunc}")
    return level_p_matrix(ctx.s, n, ctx.q)


def permutation_matrix(perm, s: int) -> sp.csr_matrix:
    """Matrix of ``e_w -> e_{perm(w)}`` on level ``len(perm)``."""
    n = len(perm)
    D = _digits(s, n)
    inv = [0] * n
    for i, p in enumerate(perm.images):
        inv[p - 1] = i
    new = D[inv]
    N = s**n
    return sp.csr_matrix((np.ones(N), (_ravel(new, s), np.arange(N))), shape=(N, N))


@functools.lru_cache(maxsize=256)
def level_r_matrix(s: int, k: int, n: int, q: float) -> sp.csr_matrix:
    N = s**n
    acc = sp.csr_matrix((N, N))
    for sigma in coset_representatives(n, k):
        c = qpow(q, inversions(sigma))
        if c != 0.0:
            acc = acc + c * permutation_matrix(sigma, s)
    return acc.tocsr()


def r_matrix(ctx: QContext, k: int, n: int) -> sp.csr_matrix:
    """``R_{k,n}``: q-weighted sum over minimal coset representatives (level ``n``)."""
    if not 0 <= k <= n <= ctx.trunc:
        raise ValueError(f"need 0 <= k <= n <= trunc, got k={k}, n={n}")
    return level_r_matrix(ctx.s, k, n, ctx.q)


def split_gram_apply(ctx: QContext, xi: np.ndarray, k: int, n: int) -> np.ndarray:
    """``(P^(k) (x) P^(n-k))`` applied to a level-``n`` vector."""
    s, q = ctx.s, ctx.q
    X = np.asarray(xi, dtype=complex).reshape(s**k, s ** (n - k))
    X = level_gram_apply(np.ascontiguousarray(X), s, n - k, q)
    X = level_gram_apply(np.ascontiguousarray(X.T), s, k, q).T
    return X.reshape(-1)


def split_norm(ctx: QContext, xi: np.ndarray, k: int, n: int | None = None) -> float:
    """Norm of ``xi`` in ``H^{(x)k} (x) H^{(x)(n-k)}`` inside ``F_q (x) F_q``."""
    xi = np.asarray(xi, dtype=complex).reshape(-1)
    if n is None:
        n = int(round(math.log(xi.size, ctx.s))) if xi.size > 1 else 0
    return math.sqrt(max(np.vdot(xi, split_gram_apply(ctx, xi, k, n)).real, 0.0))


def level_norm(ctx: QContext, x: np.ndarray, n: int) -> float:
    x = np.asarray(x, dtype=complex).reshape(1, -1)
    return math.sqrt(max(np.vdot(x, level_gram_apply(x, ctx.s, n, ctx.q)).real, 0.0))


def level_star(s: int, n: int, x: np.ndarray) -> np.ndarray:
    """``*`` on a level-``n`` array: reverse the word and conjugate."""
    if n == 0:
        return np.conj(x)
    t = np.asarray(x).reshape((s,) * n)
    return np.conj(np.transpose(t, tuple(reversed(range(n))))).reshape(-1)


def phi_contract(ctx: QContext, xi: np.ndarray, eta: np.ndarray, m: int) -> np.ndarray:
    """``(I (x) Phi_m (x) I)(xi (x) eta)`` with ``Phi_m(x (x) y) = <x, y*>_q``.

    ``xi`` has shape ``(a, s**m)`` and ``eta`` shape ``(s**m, b)``; the result
    has shape ``(a, b)``.
    """
    s = ctx.s
    xi = np.asarray(xi, dtype=complex)
    eta = np.asarray(eta, dtype=complex)
    Pxi = level_gram_apply(np.ascontiguousarray(xi), s, m, ctx.q)
    # <x, y*>_q = sum_i (P x)_i * y_{rev(i)}
    perm = np.arange(s**m).reshape((s,) * m).transpose(tuple(reversed(range(m)))).reshape(-1) if m else np.arange(1)
    return Pxi @ eta[perm]


# ---------------------------------------------------------------------------
# orbit-block Gram solves (small contexts and raw matrices)
# ---------------------------------------------------------------------------

_CHOL_LOCK = threading.Lock()
_CHOL_CACHE: dict = {}


def _orbits(s: int, L: int):
    if L == 0:
        return [np.zeros(1, dtype=np.int64)]
    D = _digits(s, L)
    counts = np.stack([(D == a).sum(axis=0) for a in range(s)])
    key = _ravel(counts, L + 1)
    order = np.argsort(key, kind="stable")
    _, starts = np.unique(key[order], return_index=True)
    return np.split(order, starts[1:])


def _orbit_factor(s: int, L: int, q: float, idx: np.ndarray):
    key = (s, L, q, idx.tobytes())
    with _CHOL_LOCK:
        hit = _CHOL_CACHE.get(key)
    if hit is not None:
        return hit
    P = level_p_matrix(s, L, q)
    block = P[idx][:, idx].toarray()
    fac = scipy.linalg.cho_factor(block, lower=True)
    with _CHOL_LOCK:
        _CHOL_CACHE[key] = fac
    return fac


def gram_solve(ctx: QContext, x: np.ndarray, max_orbit: int = 4096) -> np.ndarray:
    """Solve ``G y = x`` orbit by orbit with cached dense Cholesky factors."""
    x = np.asarray(x, dtype=complex)
    vec = x.ndim == 1
    X = x.reshape(ctx.dim, -1)
    out = np.empty_like(X)
    for L in range(ctx.trunc + 1):
        base = int(ctx.offsets[L])
        for orb in _orbits(ctx.s, L):
            if orb.size > max_orbit:
                raise MemoryError(f"orbit of size {orb.size} exceeds max_orbit={max_orbit}")
            fac = _orbit_factor(ctx.s, L, ctx.q, orb)
            out[base + orb] = scipy.linalg.cho_solve(fac, X[base + orb])
    return out[:, 0] if vec else out


def gram_matrix(ctx: QContext) -> sp.csr_matrix:
    return sp.block_diag([level_p_matrix(ctx.s, L, ctx.q) for L in range(ctx.trunc + 1)], format="csr")


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def _as_block(ctx, x):
    x = np.asarray(x, dtype=complex)
    if x.shape[0] != ctx.dim:
        raise ValueError(f"vector of length {x.shape[0]} does not match dim {ctx.dim}")
    return x


class FockOperator:
    """Linear map on the truncated Fock space with a tracked q-adjoint."""

    kind = "composite"

    def __init__(self, ctx: QContext):
        self.ctx = ctx

    def matvec(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def qadjoint(self) -> "FockOperator":
        raise NotImplementedError

    @property
    def H(self) -> "FockOperator":
        return self.qadjoint()

    def apply_sparse(self, E: sp.spmatrix) -> sp.csr_matrix:
        """``T @ E`` for a sparse block of columns ``E``."""
        E = sp.csc_matrix(E)
        cols = []
        step = max(1, 2_000_000 // max(self.ctx.dim, 1))
        for start in range(0, E.shape[1], step):
            blk = E[:, start : start + step].toarray().astype(complex)
            cols.append(sp.csr_matrix(self.matvec(blk)))
        return sp.hstack(cols, format="csr")

    def to_sparse(self) -> sp.csr_matrix:
        return self.apply_sparse(sp.identity(self.ctx.dim, dtype=complex, format="csc"))

    def columns(self, max_level: int) -> sp.csr_matrix:
        """Columns of the matrix whose source words have length ``<= max_level``."""
        ncols = int(self.ctx.offsets[max(0, min(max_level, self.ctx.trunc)) + 1]) if max_level >= 0 else 0
        E = sp.identity(self.ctx.dim, dtype=complex, format="csc")[:, :ncols]
        return self.apply_sparse(E)

    def apply(self, x):
        if isinstance(x, FockVector):
            return FockVector.from_array(self.ctx, self.matvec(x.to_array(self.ctx)))
        return self.matvec(x)

    def __matmul__(self, other):
        if isinstance(other, FockOperator):
            return ProductOperator([self, other])
        return self.apply(other)

    def __add__(self, other):
        if isinstance(other, (int, float, complex)) and other == 0:
            return self
        if not isinstance(other, FockOperator):
            return NotImplemented
        return LinearCombination([(1.0, self), (1.0, other)])

    __radd__ = __add__

    def __neg__(self):
        return LinearCombination([(-1.0, self)])

    def __sub__(self, other):
        return LinearCombination([(1.0, self), (-1.0, other)])

    def __mul__(self, alpha):
        if not isinstance(alpha, (int, float, complex, np.number)):
            return NotImplemented
        return LinearCombination([(complex(alpha), self)])

    __rmul__ = __mul__


class SparseOperator(FockOperator):
    """CSR matrix with an optional explicit q-adjoint matrix.

    Without an explicit adjoint the q-adjoint is ``G^{-1} M^H G`` via orbit
    Gram solves, which is only affordable on small contexts.
    """

    def __init__(self, ctx, mat, adj=None, kind="composite"):
        super().__init__(ctx)
        self.mat = sp.csr_matrix(mat, dtype=complex)
        self.adj = None if adj is None else sp.csr_matrix(adj, dtype=complex)
        self.kind = kind

    def matvec(self, x):
        return self.mat @ _as_block(self.ctx, x)

    def to_sparse(self):
        return self.mat

    def apply_sparse(self, E):
        return (self.mat @ E).tocsr()

    def qadjoint(self):
        if self.adj is not None:
            return SparseOperator(self.ctx, self.adj, self.mat, _ADJ_KIND.get(self.kind, "composite"))
        return GramAdjoint(self)


_ADJ_KIND = {"creation": "annihilation", "annihilation": "creation", "diagonal": "diagonal"}


class GramAdjoint(FockOperator):
    """``G^{-1} T^H G`` for an operator without structural adjoint."""

    def __init__(self, op: SparseOperator):
        super().__init__(op.ctx)
        self.op = op

    def matvec(self, x):
        y = gram_apply(self.ctx, x)
        y = self.op.mat.conj().T @ y
        return gram_solve(self.ctx, y)

    def qadjoint(self):
        return self.op


class LinearCombination(FockOperator):
    def __init__(self, terms):
        flat = []
        for c, op in terms:
            if isinstance(op, LinearCombination):
                flat.extend((c * c2, op2) for c2, op2 in op.terms)
            else:
                flat.append((complex(c), op))
        if not flat:
            raise ValueError("empty linear combination")
        super().__init__(flat[0][1].ctx)
        self.terms = flat

    def matvec(self, x):
        x = _as_block(self.ctx, x)
        out = None
        for c, op in self.terms:
            y = op.matvec(x)
            out = c * y if out is None else out + c * y
        return out

    def qadjoint(self):
        return LinearCombination([(np.conj(c), op.qadjoint()) for c, op in self.terms])

    def apply_sparse(self, E):
        acc = None
        for c, op in self.terms:
            m = c * op.apply_sparse(E)
            acc = m if acc is None else acc + m
        return acc.tocsr()

    def to_sparse(self):
        acc = None
        for c, op in self.terms:
            m = c * op.to_sparse()
            acc = m if acc is None else acc + m
        return acc.tocsr()


class ProductOperator(FockOperator):
    """``factors[0] @ factors[1] @ ...``, applied right to left."""

    def __init__(self, factors):
        flat = []
        for f in factors:
            flat.extend(f.factors if isinstance(f, ProductOperator) else [f])
        if not flat:
            raise ValueError("empty product")
        super().__init__(flat[0].ctx)
        self.factors = flat

    def matvec(self, x):
        y = _as_block(self.ctx, x)
        for f in reversed(self.factors):
            y = f.matvec(y)
        return y

    def qadjoint(self):
        return ProductOperator([f.qadjoint() for f in reversed(self.factors)])

    def apply_sparse(self, E):
        acc = E
        for f in reversed(self.factors):
            acc = f.apply_sparse(acc)
        return sp.csr_matrix(acc)

    def to_sparse(self):
        acc = self.factors[-1].to_sparse()
        for f in reversed(self.factors[:-1]):
            acc = f.to_sparse() @ acc
        return acc.tocsr()


def _reverse_tail(beta, s, k, m):
    # (s**k, s**m) -> same shape with the m trailing word axes reversed
    if m < 2:
        return np.ascontiguousarray(beta)
    t = beta.reshape((s**k,) + (s,) * m)
    return np.ascontiguousarray(t.transpose((0,) + tuple(range(m, 0, -1))).reshape(s**k, s**m))


class NormalFormOperator(FockOperator):
    """Sum of parts ``sum_{|u|=k, |v|=m} beta[u, v] a_u a*_v``, ``a*_v = a*_{v_1} ... a*_{v_m}``.

    Each ``beta`` has shape ``(s**k, s**m)`` in word-ravel order. Matvecs
    never form the operator. On each level the annihilations are peeled off
    one letter at a time, keeping only letters that some part actually uses
    at that depth, and the partial results are shared between parts. The
    creations then just prepend axes.
    """

    def __init__(self, ctx, parts):
        super().__init__(ctx)
        s = ctx.s
        self.parts = []
        for k, m, beta in parts:
            beta = np.asarray(beta, dtype=complex).reshape(s**k, s**m)
            self.parts.append((int(k), int(m), beta))
        depth = max((m for _, m, _ in self.parts), default=0)
        used = [np.zeros(s, bool) for _ in range(depth)]
        revs = []
        for k, m, beta in self.parts:
            rev = _reverse_tail(beta, s, k, m)
            revs.append(rev)
            if m:
                nz = rev.reshape((s**k,) + (s,) * m) != 0
                for j in range(m):
                    used[j] |= nz.any(axis=tuple(i for i in range(m + 1) if i != j + 1))
        self._letters = [np.flatnonzero(u) for u in used]
        self._restricted = []
        for (k, m, _), rev in zip(self.parts, revs):
            t = rev.reshape((s**k,) + (s,) * m)
            for j in range(m):
                t = np.take(t, self._letters[j], axis=j + 1)
            self._restricted.append(np.ascontiguousarray(t.reshape(s**k, -1)))

    def matvec(self, x):
        ctx, s, q, N = self.ctx, self.ctx.s, self.ctx.q, self.ctx.trunc
        x = _as_block(ctx, x)
        vec = x.ndim == 1
        X = x.reshape(ctx.dim, -1)
        B = X.shape[1]
        out = np.zeros_like(X)
        for L in range(N + 1):
            active = [
                i for i, (k, m, _) in enumerate(self.parts) if m <= L and L - m + k <= N and self._restricted[i].size
            ]
            if not active:
                continue
            Z = np.ascontiguousarray(X[ctx.level_slice(L)].T)
            if not Z.any():
                continue
            depth = max(self.parts[i][1] for i in active)
            width = 1
            for j in range(depth + 1):
                if j:
                    letters = self._letters[j - 1]
                    if letters.size == 0:
                        break
                    Z = kernels.annihilate_letters(Z.reshape(-1, s ** (L - j + 1)), s, L - j + 1, q, letters)
                    width *= letters.size
                for i in active:
                    k, m, _ = self.parts[i]
                    if m != j:
                        continue
                    Lp = L - m + k
                    Y = np.matmul(self._restricted[i], Z.reshape(B, width, s ** (L - j)))
                    out[ctx.level_slice(Lp)] += Y.reshape(B, s**Lp).T
        return out[:, 0] if vec else out

    def qadjoint(self):
        s = self.ctx.s
        parts = []
        for k, m, beta in self.parts:
            if k + m:
                t = np.conj(beta).reshape((s,) * (k + m))
                axes = tuple(range(k + m - 1, k - 1, -1)) + tuple(range(k - 1, -1, -1))
                t = t.transpose(axes)
            else:
                t = np.conj(beta)
            parts.append((m, k, t.reshape(s**m, s**k)))
        return NormalFormOperator(self.ctx, parts)


class WordSumOperator(NormalFormOperator):
    """Single-part :class:`NormalFormOperator`."""

    def __init__(self, ctx, k, m, beta):
        super().__init__(ctx, [(k, m, beta)])
        self.k, self.m, self.beta = self.parts[0]


def _cached_ctx(fn):
    return functools.lru_cache(maxsize=512)(fn)


@_cached_ctx
def _creation_matrix(ctx: QContext, letter: int) -> sp.csr_matrix:
    s, off = ctx.s, ctx.offsets
    rows, cols = [], []
    for L in range(ctx.trunc):
        n = s**L
        idx = np.arange(n, dtype=np.int64)
        cols.append(off[L] + idx)
        rows.append(off[L + 1] + letter * n + idx)
    if not rows:
        return sp.csr_matrix((ctx.dim, ctx.dim), dtype=complex)
    r, c = np.concatenate(rows), np.concatenate(cols)
    return sp.csr_matrix((np.ones(r.size, dtype=complex), (r, c)), shape=(ctx.dim, ctx.dim))


@_cached_ctx
def _annihilation_matrix(ctx: QContext, letter: int) -> sp.csr_matrix:
    r, c, v = kernels.annihilation_coo(ctx.s, ctx.trunc, letter, ctx.q)
    keep = v != 0
    return sp.csr_matrix((v[keep].astype(complex), (r[keep], c[keep])), shape=(ctx.dim, ctx.dim))


def create(ctx: QContext, letter: int) -> SparseOperator:
    """Compressed ``a(e_letter)``."""
    letter = ctx.check_letter(letter)
    return SparseOperator(ctx, _creation_matrix(ctx, letter), _annihilation_matrix(ctx, letter), "creation")


def annihilate(ctx: QContext, letter: int) -> SparseOperator:
    """Compressed ``a*(e_letter)``."""
    letter = ctx.check_letter(letter)
    return SparseOperator(ctx, _annihilation_matrix(ctx, letter), _creation_matrix(ctx, letter), "annihilation")


def identity(ctx: QContext) -> SparseOperator:
    eye = sp.identity(ctx.dim, dtype=complex, format="csr")
    return SparseOperator(ctx, eye, eye, "diagonal")


def level_diagonal(ctx: QContext, values: Sequence[float]) -> SparseOperator:
    """Diagonal operator equal to ``values[L]`` on level ``L`` (commutes with G)."""
    diag = np.repeat(np.asarray(values, dtype=complex), np.diff(ctx.offsets))
    m = sp.diags(diag, format="csr")
    return SparseOperator(ctx, m, sp.diags(np.conj(diag), format="csr"), "diagonal")


def number_semigroup(ctx: QContext, t: float) -> SparseOperator:
    """``e^{-tN}``: scales level ``n`` by ``e^{-nt}``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return level_diagonal(ctx, np.exp(-t * np.arange(ctx.trunc + 1)))


def from_matrix(ctx: QContext, mat) -> SparseOperator:
    """Wrap a raw matrix; its q-adjoint will use orbit Gram solves."""
    return SparseOperator(ctx, mat, None, "composite")


def word_creation(ctx: QContext, word: Sequence[int]) -> FockOperator:
    """``a_w = a_{w_1} ... a_{w_n}`` (identity for the empty word)."""
    if not word:
        return identity(ctx)
    return ProductOperator([create(ctx, a) for a in word])


def word_annihilation(ctx: QContext, word: Sequence[int]) -> FockOperator:
    """``a*_w = a*_{w_1} ... a*_{w_n}``."""
    if not word:
        return identity(ctx)
    return ProductOperator([annihilate(ctx, a) for a in word])


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


@dataclass
class NormEstimate:
    """Result of :func:`op_norm`. ``value`` is a Rayleigh-quotient lower bound."""

    value: float
    converged: bool
    iterations: int
    residual: float
    vector: np.ndarray = field(repr=False)
    method: str = "lanczos"

    def __float__(self):
        return float(self.value)


def _gnorm(ctx, x):
    return math.sqrt(max(np.vdot(x, gram_apply(ctx, x)).real, 0.0))


def _start_vector(ctx, seed, x0):
    if x0 is not None:
        return np.asarray(x0, dtype=complex).copy()
    rng = np.random.default_rng(seed)
    return rng.standard_normal(ctx.dim) + 1j * rng.standard_normal(ctx.dim)


def op_norm(
    ctx: QContext,
    T: FockOperator,
    tol: float = 1e-8,
    max_iter: int = 10000,
    seed: int = 0,
    method: str = "lanczos",
    x0=None,
    check_every: int = 10,
    krylov_dim: int = 60,
) -> NormEstimate:
    """Largest singular value of ``T`` for the q-inner product.

    ``method="power"`` runs power iteration on ``T^* T`` (``T^*`` the q-adjoint)
    with a G-Rayleigh quotient every ``check_every`` steps; ``"lanczos"`` runs
    restarted Lanczos in the G-inner product. Either way the reported value is
    a Rayleigh quotient, hence a lower bound for the compressed norm.
    """
    if method == "lanczos":
        return _op_norm_lanczos(ctx, T, tol, max_iter, seed, x0, krylov_dim)
    if method != "power":
        raise ValueError(f"unknown method {method!r}")
    Tadj = T.qadjoint()
    x = _start_vector(ctx, seed, x0)
    x /= np.linalg.norm(x)
    rho_old = None
    rho = 0.0
    resid = float("inf")
    it = 0
    while it < max_iter:
        it += 1
        y = T.matvec(x)
        z = Tadj.matvec(y)
        if it % check_every == 0 or it == max_iter:
            gx = np.vdot(x, gram_apply(ctx, x)).real
            gy = np.vdot(y, gram_apply(ctx, y)).real
            rho = gy / gx if gx > 0 else 0.0
            resid = float(np.linalg.norm(z - rho * x))
            if rho_old is not None and abs(rho - rho_old) <= tol * max(rho, 1e-300):
                return NormEstimate(math.sqrt(max(rho, 0.0)), True, it, resid, x, "power")
            rho_old = rho
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return NormEstimate(0.0, True, it, 0.0, x, "power")
        x = z / nz
    return NormEstimate(math.sqrt(max(rho, 0.0)), False, it, resid, x, "power")


def _op_norm_lanczos(ctx, T, tol, max_iter, seed, x0, krylov_dim):
    Tadj = T.qadjoint()
    x = _start_vector(ctx, seed, x0)
    it = 0
    theta_old = None
    theta = 0.0
    resid = float("inf")
    while it < max_iter:
        nx = _gnorm(ctx, x)
        if nx == 0.0:
            return NormEstimate(0.0, True, it, 0.0, x, "lanczos")
        V = np.empty((krylov_dim + 1, ctx.dim), dtype=complex)
        GV = np.empty_like(V)
        V[0] = x / nx
        GV[0] = gram_apply(ctx, V[0])
        alphas, betas = [], []
        for j in range(krylov_dim):
            it += 1
            w = Tadj.matvec(T.matvec(V[j]))
            alphas.append(np.vdot(GV[j], w).real)
            for _ in range(2):  # full G-orthogonalisation, twice is enough
                w -= np.conj(GV[: j + 1] @ np.conj(w)) @ V[: j + 1]
            Gw = gram_apply(ctx, w)
            b = math.sqrt(max(np.vdot(w, Gw).real, 0.0))
            if j:
                evals, evecs = scipy.linalg.eigh_tridiagonal(np.array(alphas), np.array(betas))
            else:
                evals, evecs = np.array(alphas), np.ones((1, 1))
            theta = float(evals[-1])
            resid = abs(b * evecs[-1, -1])
            if resid <= tol * max(theta, 1e-300) or b <= 1e-14 * max(theta, 1.0) or it >= max_iter:
                break
            betas.append(b)
            V[j + 1] = w / b
            GV[j + 1] = Gw / b
        x = evecs[:, -1] @ V[: len(alphas)]
        converged = resid <= tol * max(theta, 1e-300) or b <= 1e-14 * max(theta, 1.0)
        if converged or (theta_old is not None and abs(theta - theta_old) <= tol * tol * theta):
            # final certified value: Rayleigh quotient of the Ritz vector
            gx = _gnorm(ctx, x) ** 2
            Tx = T.matvec(x)
            rq = _gnorm(ctx, Tx) ** 2 / gx if gx > 0 else 0.0
            return NormEstimate(math.sqrt(max(rq, 0.0)), bool(converged), it, resid, x, "lanczos")
        theta_old = theta
    gx = _gnorm(ctx, x) ** 2
    rq = _gnorm(ctx, T.matvec(x)) ** 2 / gx if gx > 0 else 0.0
    return NormEstimate(math.sqrt(max(rq, 0.0)), False, it, resid, x, "lanczos")


def dense_op_norm(ctx: QContext, T: FockOperator) -> float:
    """Oracle for small contexts: ``max sigma(L^H M L^{-H})`` with ``G = L L^H``."""
    G = gram_matrix(ctx).toarray()
    M = T.to_sparse().toarray()
    Lc = np.linalg.cholesky(G)
    X = Lc.conj().T @ M @ np.linalg.inv(Lc.conj().T)
    return float(np.linalg.norm(X, 2))
