import itertools
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from qfock.combinatorics import constants, q_factorial
from qfock.fockspace import (
    QContext,
    number_semigroup,
    op_norm,
    p_matrix,
    q_inner,
    split_norm,
    word_creation,
)
from qfock.qcircular import (
    HoloPolynomial,
    NormalOrderedSum,
    c_op,
    c_star_op,
    evaluate,
    expand_word,
    expand_word_terms,
    l2_norm,
    monomial,
    normal_order,
    normal_order_terms,
    onevar_normal_order_terms,
    parse_holo_word,
    to_letters,
    trace,
    wick_polynomial,
    word_creation_sum,
    x_op,
)


def columns_upto(ctx, level):
    return sp.identity(ctx.dim, dtype=complex, format="csc")[:, : ctx.offsets[level + 1]]


def residual(ctx, A, B, level):
    E = columns_upto(ctx, level)
    D = sp.csr_matrix(A.apply_sparse(E) - B.apply_sparse(E))
    return float(np.abs(D.data).max()) if D.nnz else 0.0


def holo_words(d, n):
    return list(itertools.product(range(1, d + 1), repeat=n))


# --- words and polynomials --------------------------------------------------


def test_parse_holo_word():
    assert parse_holo_word("1 2 1") == (1, 2, 1)
    assert parse_holo_word([2, 2], d=2) == (2, 2)
    with pytest.raises(ValueError):
        parse_holo_word("1 ~2")
    with pytest.raises(ValueError):
        parse_holo_word([0])
    with pytest.raises(IndexError):
        parse_holo_word([3], d=2)


def test_holo_polynomial_bookkeeping():
    h = HoloPolynomial({(1, 2): 1.0, (2,): 2.0, (1,): 0.0}, d=2)
    assert h.degree == 2 and h.degrees() == {1, 2} and not h.is_homogeneous()
    assert HoloPolynomial.power(3).coeffs == {(1, 1, 1): 1}
    assert HoloPolynomial.random_homogeneous(2, 3, seed=1).is_homogeneous()


# --- generators -------------------------------------------------------------


def test_c_on_vacuum_and_traces():
    q = 0.3
    ctx = QContext(q, 2, 4)
    for i in (1, 2):
        assert np.allclose(c_op(ctx, i).matvec(ctx.vacuum()), ctx.basis((ctx.letter(i),)))
    c = c_op(ctx, 1)
    assert trace(ctx, c) == 0
    assert trace(ctx, c @ c_star_op(ctx, 1)) == pytest.approx(1.0)


def test_x_moments_and_selfadjointness():
    q = -0.4
    ctx = QContext(q, 1, 6)
    X = x_op(ctx, 0)
    assert trace(ctx, X @ X) == pytest.approx(1.0)
    assert trace(ctx, X @ X @ X @ X) == pytest.approx(2 + q)
    rng = np.random.default_rng(0)
    x, y = (rng.standard_normal(ctx.dim) + 1j * rng.standard_normal(ctx.dim) for _ in range(2))
    assert q_inner(ctx, X.matvec(x), y) == pytest.approx(q_inner(ctx, x, X.matvec(y)), rel=1e-12)


@pytest.mark.parametrize("q", [-0.5, 0.0, 0.5])
def test_non_freeness_witnesses(q):
    ctx = QContext(q, 2, 4)
    c1, c2 = c_op(ctx, 1), c_op(ctx, 2)
    s1, s2 = c1.qadjoint(), c2.qadjoint()
    assert trace(ctx, s1 @ s2 @ c1 @ c2).real == pytest.approx(q, abs=1e-14)
    assert trace(ctx, s1 @ s1 @ c1 @ c1).real == pytest.approx(1 + q, abs=1e-14)


def test_monomials_on_vacuum():
    ctx = QContext(0.5, 2, 5)
    assert np.allclose(monomial(ctx, ()).matvec(ctx.vacuum()), ctx.vacuum())
    for n in range(5):
        for w in holo_words(2, n):
            assert np.allclose(monomial(ctx, w).matvec(ctx.vacuum()), ctx.basis(to_letters(ctx, w)))


def test_evaluate_on_vacuum_is_coefficient_vector():
    ctx = QContext(-0.3, 2, 6)
    h = HoloPolynomial.random_homogeneous(2, 3, seed=4) + HoloPolynomial({(2,): 0.5j, (): 1.5}, d=2)
    expected = h.vector(ctx).to_array(ctx)
    for method in ("normal", "product"):
        assert np.allclose(evaluate(ctx, h, method).matvec(ctx.vacuum()), expected)


def test_evaluate_errors():
    ctx = QContext(0.5, 1, 3)
    with pytest.raises(ValueError):
        evaluate(ctx, HoloPolynomial.power(1, d=2, generator=2))
    with pytest.raises(ValueError):
        evaluate(ctx, HoloPolynomial.power(1), method="dense")


@pytest.mark.parametrize("q", [-0.6, 0.4])
def test_normal_form_is_exact_compression(q):
    # compress the product at a deeper truncation down to N
    N, deg = 5, 3
    h = HoloPolynomial.random_homogeneous(2, deg, seed=2) + HoloPolynomial.random_homogeneous(2, 1, seed=5)
    small, big = QContext(q, 2, N), QContext(q, 2, N + deg)
    full = evaluate(big, h, "product").to_sparse()[: small.dim, : small.dim]
    assert abs(evaluate(small, h).to_sparse() - full).max() < 1e-12


def test_dilation_covariance():
    ctx = QContext(0.5, 2, 5)
    h = HoloPolynomial.random_homogeneous(2, 3, seed=0)
    t = 0.7
    lhs = evaluate(ctx, h.dilate(t)).matvec(ctx.vacuum())
    rhs = number_semigroup(ctx, t).matvec(evaluate(ctx, h).matvec(ctx.vacuum()))
    assert np.allclose(lhs, rhs)
    assert h.dilate(t).coeffs == pytest.approx({w: a * math.exp(-3 * t) for w, a in h.coeffs.items()})


# --- coset expansion --------------------------------------------------------


def test_expand_word_term_counts():
    ctx = QContext(0.5, 2, 4)
    assert len(expand_word_terms(ctx, (1,))) == 2
    terms = expand_word_terms(ctx, (1, 2))
    assert len(terms) == 4
    assert sorted(c for c, _, _ in terms) == [0.5, 1, 1, 1]


@pytest.mark.parametrize("q", [-0.5, 0.5])
def test_expand_word_matches_product(q):
    ctx = QContext(q, 2, 8)
    for n in range(1, 5):
        for w in holo_words(2, n):
            assert residual(ctx, expand_word(ctx, w), monomial(ctx, w), ctx.trunc - n) < 1e-12


# --- normal ordering --------------------------------------------------------


def test_normal_order_base_case():
    ctx = QContext(0.5, 2, 4)
    terms = normal_order_terms(ctx, (), (1, 2))
    assert terms == [(1.0, to_letters(ctx, (1, 2)), ())]


@pytest.mark.parametrize("q", [-0.7, 0.3])
def test_onevar_normal_ordering(q):
    ctx = QContext(q, 1, 9)
    for k in range(5):
        for l in range(5):
            direct = word_creation(ctx, (0,) * k).qadjoint() @ word_creation(ctx, (0,) * l)
            built = NormalOrderedSum(ctx, onevar_normal_order_terms(ctx, k, l))
            assert residual(ctx, built, direct, ctx.trunc - l) < 1e-12


def test_normal_order_matches_product():
    ctx = QContext(0.5, 2, 7)
    words = [w for n in range(3) for w in holo_words(2, n)] + [(1, 2, 1), (2, 2, 1)]
    for v in words:
        Av = word_creation(ctx, to_letters(ctx, v)).qadjoint()
        for u in words:
            direct = Av @ word_creation(ctx, to_letters(ctx, u))
            assert residual(ctx, normal_order(ctx, v, u), direct, ctx.trunc - len(u)) < 1e-12


# --- Wick polynomials -------------------------------------------------------


def test_wick_degree_one_is_field():
    ctx = QContext(0.3, 2, 4)
    assert residual(ctx, wick_polynomial(ctx, (2,)), x_op(ctx, ctx.letter(2)), ctx.trunc) < 1e-15


def test_wick_square():
    q = 0.3
    ctx = QContext(q, 1, 4)
    X = x_op(ctx, 0)
    out = wick_polynomial(ctx, (1, 1)).matvec(ctx.vacuum())
    assert np.allclose(out, X.matvec(X.matvec(ctx.vacuum())) - ctx.vacuum())
    assert np.allclose(out, ctx.basis((0, 0)))


def test_wick_on_vacuum():
    ctx = QContext(-0.5, 2, 5)
    for n in range(1, 5):
        for w in holo_words(2, n):
            assert np.allclose(wick_polynomial(ctx, w).matvec(ctx.vacuum()), ctx.basis(to_letters(ctx, w)))


# --- L2 norms and the product-norm bound ------------------------------------


def test_l2_norm_cases():
    ctx = QContext(0.5, 2, 4)
    assert l2_norm(ctx, HoloPolynomial({}, d=2)) == 0.0
    for n in range(9):
        assert l2_norm(ctx, HoloPolynomial.power(n)) ** 2 == pytest.approx(q_factorial(n, 0.5), rel=1e-12)
    w = (1, 2, 1)
    e = ctx.basis(to_letters(ctx, w))[ctx.level_slice(3)]
    expected = (p_matrix(ctx, 3) @ e)[ctx.index(to_letters(ctx, w)) - ctx.offsets[3]]
    assert l2_norm(ctx, HoloPolynomial.monomial(w, d=2)) ** 2 == pytest.approx(expected.real)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([-0.5, 0.5]), st.integers(0, 3), st.integers(0, 3), st.integers(0, 2**31))
def test_product_norm_bound(q, k, m, seed):
    ctx = QContext(q, 1, k + m + 3)
    s = ctx.s
    rng = np.random.default_rng(seed)
    beta = rng.standard_normal((s**k, s**m)) + 1j * rng.standard_normal((s**k, s**m))
    T = word_creation_sum(ctx, k, m, beta)
    bound = constants(q).c_q * split_norm(ctx, beta, k, k + m)
    assert op_norm(ctx, T, tol=1e-10).value <= bound * (1 + 1e-9)
