"""Permutations, coset representatives, q-numbers, pairings and the scalar constants.

Everything here is exact integer combinatorics or scalar arithmetic; no linear
algebra. Permutations are 1-based tuples of images.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import kernels


class DomainError(ValueError):
    """Raised when a deformation parameter leaves the open interval (-1, 1)."""


class SlowConvergenceWarning(RuntimeWarning):
    """Series in |q| close to 1 converge slowly."""


def check_q(q: float) -> float:
    q = float(q)
    if not math.isfinite(q) or abs(q) >= 1.0:
        raise DomainError(f"q must satisfy -1 < q < 1, got {q!r}")
    return q


def qpow(q: float, k: int) -> float:
    """``q**k`` with the convention ``0**0 == 1``."""
    return 1.0 if k == 0 else q**k


# ---------------------------------------------------------------------------
# permutations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Permutation:
    """A bijection of {1..n}, stored as the tuple ``(p(1), ..., p(n))``."""

    images: tuple

    def __post_init__(self):
        imgs = tuple(int(i) for i in self.images)
        if sorted(imgs) != list(range(1, len(imgs) + 1)):
            raise ValueError(f"not a permutation of 1..{len(imgs)}: {self.images!r}")
        object.__setattr__(self, "images", imgs)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(1, n + 1)))

    @property
    def n(self) -> int:
        return len(self.images)

    def __len__(self):
        return len(self.images)

    def __call__(self, i: int) -> int:
        return self.images[i - 1]

    def inverse(self) -> "Permutation":
        inv = [0] * self.n
        for i, p in enumerate(self.images, start=1):
            inv[p - 1] = i
        return Permutation(tuple(inv))

    def compose(self, other: "Permutation") -> "Permutation":
        """``self o other``, i.e. ``i -> self(other(i))``."""
        if other.n != self.n:
            raise ValueError("size mismatch")
        return Permutation(tuple(self.images[j - 1] for j in other.images))

    __matmul__ = compose

    def act(self, word: Sequence) -> tuple:
        """Left action on words: ``pi(w)_i = w_{pi^{-1}(i)}``."""
        if len(word) != self.n:
            raise ValueError("word length must equal permutation size")
        out = [None] * self.n
        for i, p in enumerate(self.images):
            out[p - 1] = word[i]
        return tuple(out)

    def act_inverse(self, word: Sequence) -> tuple:
        """``pi^{-1}(w)``, i.e. ``i -> w_{pi(i)}``."""
        if len(word) != self.n:
            raise ValueError("word length must equal permutation size")
        return tuple(word[p - 1] for p in self.images)

    def direct_sum(self, other: "Permutation") -> "Permutation":
        """``self x other`` acting on {1..n} and {n+1..n+m}."""
        k = self.n
        return Permutation(self.images + tuple(k + j for j in other.images))


def _images(p) -> tuple:
    return p.images if isinstance(p, Permutation) else tuple(int(i) for i in p)


def inversions(p) -> int:
    """Number of pairs i<j with p(i) > p(j)."""
    imgs = _images(p)
    return sum(1 for i, j in itertools.combinations(range(len(imgs)), 2) if imgs[i] > imgs[j])


def inversions_many(perms) -> np.ndarray:
    """Vectorised :func:`inversions` over rows of an integer array."""
    return kernels.inversions_batch(np.asarray(perms, dtype=np.int64))


def coset_representatives(n: int, k: int) -> list:
    """Minimal-length representatives of S_n / (S_k x S_{n-k}).

    These are the sigma increasing on {1..k} and on {k+1..n}; they are listed in
    lexicographic order of ``(sigma(1), ..., sigma(k))``.
    """
    if not (0 <= k <= n):
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    reps = []
    full = range(1, n + 1)
    for head in itertools.combinations(full, k):
        hs = set(head)
        tail = tuple(i for i in full if i not in hs)
        reps.append(Permutation(head + tail))
    return reps


def factor_coset(p, k: int):
    """Split ``p = sigma o (tau1 x tau2)`` with sigma a minimal coset representative.

    ``tau2`` is returned relabelled to act on {1..n-k}.
    """
    p = p if isinstance(p, Permutation) else Permutation(tuple(p))
    n = p.n
    if not (0 <= k <= n):
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    sigma = Permutation(tuple(sorted(p.images[:k])) + tuple(sorted(p.images[k:])))
    tau = sigma.inverse().compose(p)
    tau1 = Permutation(tau.images[:k])
    tau2 = Permutation(tuple(i - k for i in tau.images[k:]))
    return sigma, tau1, tau2


# ---------------------------------------------------------------------------
# q-numbers
# ---------------------------------------------------------------------------


def q_int(n: int, q: float) -> float:
    """``[n]_q = 1 + q + ... + q^{n-1}``."""
    return float(sum(qpow(q, j) for j in range(n)))


def q_factorial(n: int, q: float) -> float:
    if n < 0:
        raise ValueError("n must be nonnegative")
    out = 1.0
    for j in range(1, n + 1):
        out *= q_int(j, q)
    return out


def q_binomial(n: int, k: int, q: float) -> float:
    if n < 0 or not (0 <= k <= n):
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    # product form avoids dividing large factorials
    out = 1.0
    for i in range(1, k + 1):
        out *= q_int(n - k + i, q) / q_int(i, q)
    return out


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QConstants:
    q: float
    c_q: float
    b_q: float
    d1: float
    d2: float
    a_haagerup: float
    a_prime: float
    tol: float = 1e-15

    def fixed_point_residual(self, a: float | None = None) -> float:
        """``A^2 - (C^2 + 2 D1 + 2 sqrt(3 D2 + A^2 C / 2))``; zero at the returned A."""
        a = self.a_haagerup if a is None else a
        c = self.c_q
        return a * a - (c * c + 2 * self.d1 + 2 * math.sqrt(3 * self.d2 + a * a * c / 2))

    def as_dict(self) -> dict:
        return {
            "q": self.q,
            "c_q": self.c_q,
            "b_q": self.b_q,
            "d1": self.d1,
            "d2": self.d2,
            "a_haagerup": self.a_haagerup,
            "a_prime": self.a_prime,
        }


_MAX_TERMS = 10_000_000


def _product(factor, tol):
    acc = 1.0
    for m in itertools.count(1):
        f = factor(m)
        new = acc * f
        if abs(new - acc) < tol * abs(acc) or m > _MAX_TERMS:
            return new
        acc = new


def _series(term, start, tol):
    acc = 0.0
    for m in itertools.count(start):
        t = term(m)
        acc += t
        if abs(t) < tol * abs(acc) or m > _MAX_TERMS:
            return acc
        if acc == 0.0 and t == 0.0 and m > start:
            return acc


def constants(q: float, tol: float = 1e-15) -> QConstants:
    q = check_q(q)
    if tol <= 0:
        raise ValueError("tol must be positive")
    r = abs(q)
    if r >= 0.95:
        warnings.warn(f"|q|={r} is close to 1; products converge slowly", SlowConvergenceWarning, stacklevel=2)
    if r == 0.0:
        c, b, s1, s2, s3, s4 = 1.0, 1.0, 0.0, 0.0, 1.0, 1.0
    else:
        c = 1.0 / _product(lambda m: 1.0 - r**m, tol)
        b = _product(lambda m: (1.0 + r**m) / (1.0 - r**m), tol)
        s1 = _series(lambda m: r**m, 1, tol)
        s2 = _series(lambda m: q ** (2 * m * m), 1, tol)
        s3 = _series(lambda m: qpow(r, m * m), 0, tol)
        s4 = _series(lambda m: qpow(r, m), 0, tol)
    d1 = c * c * s1 * math.sqrt(s2)
    d2 = c**5 * s3 * s3 * s4 * s4
    # A^2 = x solves x^2 - 2(K + C) x + K^2 - 12 D2 = 0 with K = C^2 + 2 D1, x >= K
    kk = c * c + 2 * d1
    u = c + math.sqrt(c * c + 12 * d2 + 2 * kk * c)
    a = math.sqrt(kk + u)
    return QConstants(q=q, c_q=c, b_q=b, d1=d1, d2=d2, a_haagerup=a, a_prime=a * math.sqrt(2 * c), tol=tol)


# ---------------------------------------------------------------------------
# pairings
# ---------------------------------------------------------------------------

STAR, ONE = "*", "1"


def _norm_label(x) -> str:
    if x in ("*", True, "star"):
        return STAR
    if x in ("1", False, 1, "one"):
        return ONE
    raise ValueError(f"unknown label {x!r}")


@dataclass(frozen=True)
class PairPartition:
    """A perfect matching on vertices 1..2N; each pair is stored as (a, b), a < b."""

    pairs: tuple
    labels: tuple

    def __post_init__(self):
        pairs = tuple(sorted(tuple(sorted((int(a), int(b)))) for a, b in self.pairs))
        labels = tuple(_norm_label(x) for x in self.labels)
        seen = [v for pr in pairs for v in pr]
        if sorted(seen) != list(range(1, len(labels) + 1)):
            raise ValueError("pairs must form a perfect matching of the labelled vertices")
        for a, b in pairs:
            if labels[a - 1] == labels[b - 1]:
                raise ValueError(f"pair {(a, b)} does not join a star with a one")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "labels", labels)


def crossings(p) -> int:
    """Count pairs of blocks (a,b), (c,d) with a < c < b < d."""
    pairs = p.pairs if isinstance(p, PairPartition) else tuple(tuple(sorted(x)) for x in p)
    count = 0
    for (a, b), (c, d) in itertools.combinations(pairs, 2):
        if a < c < b < d or c < a < d < b:
            count += 1
    return count


def _check_labels(labels):
    labels = tuple(_norm_label(x) for x in labels)
    if len(labels) % 2:
        raise ValueError("odd number of vertices")
    if labels.count(STAR) != labels.count(ONE):
        raise ValueError("labels must contain as many stars as ones")
    return labels


def iter_pairings(labels) -> Iterator[PairPartition]:
    """Depth-first over the leftmost uncovered vertex."""
    labels = _check_labels(labels)
    n = len(labels)
    partner = [0] * (n + 1)

    def rec():
        try:
            i = partner.index(0, 1)
        except ValueError:
            yield tuple((a, partner[a]) for a in range(1, n + 1) if a < partner[a])
            return
        for j in range(i + 1, n + 1):
            if partner[j] == 0 and labels[j - 1] != labels[i - 1]:
                partner[i], partner[j] = j, i
                yield from rec()
                partner[i], partner[j] = 0, 0

    for pairs in rec():
        yield PairPartition(pairs, labels)


def enumerate_pairings(labels) -> list:
    return list(iter_pairings(labels))


def crossing_histogram(keys, stars=None) -> np.ndarray:
    """``hist[c]`` = number of admissible matchings with ``c`` crossings.

    Vertices ``i, j`` may be paired when ``keys[i] == keys[j]`` and, if
    ``stars`` is given, ``stars[i] != stars[j]``.
    """
    keys = np.asarray(list(keys), dtype=np.int64)
    if stars is None:
        return kernels.pairing_histogram(keys, np.zeros(len(keys), dtype=np.bool_), False)
    return kernels.pairing_histogram(keys, np.asarray(list(stars), dtype=np.bool_), True)


def evaluate_histogram(hist, q: float) -> float:
    """``sum_c hist[c] q**c`` with ``0**0 = 1``."""
    return float(sum(int(h) * qpow(q, c) for c, h in enumerate(hist) if h))


def fuss_catalan(m: int, n: int) -> int:
    if m < 1 or n < 0:
        raise ValueError("need m >= 1 and n >= 0")
    return math.comb(m * (n + 1), m - 1) // m
