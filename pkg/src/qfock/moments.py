"""Joint moments of q-circular and q-Gaussian systems.

The combinatorial engine sums ``q**cr(pi)`` over pair partitions in which
``c_i`` is matched only with ``c_i^*``; the matrix engine computes the vacuum
expectation directly on the truncated Fock space and serves as its oracle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable

from .combinatorics import check_q, crossing_histogram, evaluate_histogram, q_factorial
from .fockspace import QContext
from .qcircular import c_op, x_op


@dataclass(frozen=True)
class StarWord:
    """Sequence of ``(generator, star)`` pairs, generators 1-based.

    ``StarWord.parse("1* 2* 1 2")`` is ``c_1^* c_2^* c_1 c_2``.
    """

    letters: tuple

    def __post_init__(self):
        letters = tuple((int(i), bool(st)) for i, st in self.letters)
        for i, _ in letters:
            if i < 1:
                raise ValueError(f"generator index must be >= 1, got {i}")
        object.__setattr__(self, "letters", letters)

    @classmethod
    def parse(cls, text: str) -> "StarWord":
        out = []
        for tok in text.split():
            star = tok.endswith("*")
            body = tok[:-1] if star else tok
            if not body.isdigit():
                raise ValueError(f"bad token {tok!r} in star-word {text!r}")
            out.append((int(body), star))
        return cls(tuple(out))

    @classmethod
    def coerce(cls, sw) -> "StarWord":
        if isinstance(sw, StarWord):
            return sw
        if isinstance(sw, str):
            return cls.parse(sw)
        return cls(tuple(sw))

    @classmethod
    def pattern(cls, m: int, n: int, generator: int = 1) -> "StarWord":
        """``((c^*)^n c^n)^m``."""
        if m < 0 or n < 0:
            raise ValueError("pattern sizes must be non-negative")
        block = [(generator, True)] * n + [(generator, False)] * n
        return cls(tuple(block * m))

    def __len__(self):
        return len(self.letters)

    @property
    def d(self) -> int:
        return max((i for i, _ in self.letters), default=0)

    def __str__(self):
        return " ".join(f"{i}*" if st else str(i) for i, st in self.letters)


def circular_moment(q: float, sw) -> float:
    """``tau(c_{w_1}^{e_1} ... c_{w_n}^{e_n})`` by the crossing formula."""
    check_q(q)
    sw = StarWord.coerce(sw)
    if len(sw) % 2:
        return 0.0
    keys = [i for i, _ in sw.letters]
    stars = [st for _, st in sw.letters]
    return evaluate_histogram(crossing_histogram(keys, stars), q)


def gaussian_moment(q: float, word: Iterable[int]) -> float:
    """``tau(X_{w_1} ... X_{w_n})`` for ``X_i = a_i + a_i^*``."""
    check_q(q)
    keys = [int(i) for i in word]
    if len(keys) % 2:
        return 0.0
    return evaluate_histogram(crossing_histogram(keys), q)


def _check_depth(ctx: QContext, n: int):
    # a vector that climbs above level n//2 can never return to the vacuum
    if ctx.trunc < n // 2:
        raise ValueError(f"trunc={ctx.trunc} too small for a word of length {n} (need >= {n // 2})")


def _vacuum_coefficient(ctx: QContext, ops) -> float:
    x = ctx.vacuum()
    for op in reversed(ops):
        x = op.matvec(x)
    val = complex(x[0])
    if abs(val.imag) >= 1e-10:
        raise ArithmeticError(f"trace has imaginary part {val.imag:.3g}")
    return val.real


def trace_moment(ctx: QContext, sw) -> float:
    """Same moment as :func:`circular_moment`, computed as ``<T Omega, Omega>_q``."""
    sw = StarWord.coerce(sw)
    if sw.d > ctx.d:
        raise IndexError(f"star-word uses generator {sw.d} but d={ctx.d}")
    _check_depth(ctx, len(sw))
    ops = [c_op(ctx, i).qadjoint() if st else c_op(ctx, i) for i, st in sw.letters]
    return _vacuum_coefficient(ctx, ops)


def gaussian_trace_moment(ctx: QContext, word: Iterable[int]) -> float:
    word = [int(i) for i in word]
    _check_depth(ctx, len(word))
    return _vacuum_coefficient(ctx, [x_op(ctx, ctx.letter(i)) for i in word])


def moment_vs_trace(ctx: QContext, sw) -> tuple:
    """``(combinatorial, trace, delta)`` for one star-word."""
    comb = circular_moment(ctx.q, sw)
    tr = trace_moment(ctx, sw)
    return comb, tr, abs(comb - tr)


def star_words(length: int, d: int):
    """All star-words of the given length over generators ``1..d``."""
    alphabet = [(i, st) for i in range(1, d + 1) for st in (True, False)]
    for letters in itertools.product(alphabet, repeat=length):
        yield StarWord(letters)


def pattern_moment(q: float, m: int, n: int) -> float:
    """``tau(((c^*)^n c^n)^m)`` for a single q-circular element."""
    return circular_moment(q, StarWord.pattern(m, n))


def moment_bound_rhs(q: float, m: int, n: int, a: float) -> float:
    """``a**(2m) (n+1)**m ([n]_q!)**m``."""
    return a ** (2 * m) * (n + 1) ** m * q_factorial(n, q) ** m


def enumeration_size(sw) -> int:
    """Upper bound on the number of pairings the enumerator may visit."""
    n = len(StarWord.coerce(sw))
    return math.prod(range(1, n, 2)) if n % 2 == 0 else 0
