import itertools
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from qfock.combinatorics import DomainError, constants, q_factorial
from qfock.fockspace import (
    FockVector,
    QContext,
    WordSumOperator,
    annihilate,
    create,
    dense_op_norm,
    from_matrix,
    gram_apply,
    gram_matrix,
    gram_solve,
    identity,
    level_p_matrix,
    number_semigroup,
    op_norm,
    p_matrix,
    q_inner,
    q_norm,
    r_matrix,
    split_norm,
    star_array,
    star_vector,
    word_inner,
)

q_values = st.sampled_from([-0.7, -0.3, 0.0, 0.3, 0.7])


def brute_p(s, n, q):
    """sum_{pi in S_n} q^inv(pi) pi as a dense matrix, straight from the definition."""
    N = s**n
    P = np.zeros((N, N))
    words = list(itertools.product(range(s), repeat=n))
    index = {w: i for i, w in enumerate(words)}
    for images in itertools.permutations(range(n)):
        inv = sum(images[i] > images[j] for i in range(n) for j in range(i + 1, n))
        for w in words:
            # pi(w)_{pi(i)} = w_i
            out = [None] * n
            for i, p in enumerate(images):
                out[p] = w[i]
            P[index[tuple(out)], index[w]] += q**inv if inv else 1.0
    return P


def rand_vec(ctx, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(ctx.dim) + 1j * rng.standard_normal(ctx.dim)


# --- context and basis ------------------------------------------------------


def test_context_validation():
    with pytest.raises(DomainError):
        QContext(1.0, 1, 4)
    with pytest.raises(ValueError):
        QContext(0.5, 0, 4)
    with pytest.raises(ValueError):
        QContext(0.5, 1, -1)


def test_basis_order_length_then_lex():
    ctx = QContext(0.3, 1, 3)
    words = [ctx.word(i) for i in range(ctx.dim)]
    assert words == sorted(words, key=lambda w: (len(w), w))
    assert words[:4] == [(), (0,), (1,), (0, 0)]
    assert all(ctx.index(w) == i for i, w in enumerate(words))


def test_letters_and_bars():
    ctx = QContext(0.3, 2, 2)
    assert ctx.letter(2) == 1 and ctx.letter(2, bar=True) == 3
    assert ctx.bar(ctx.bar(1)) == 1
    with pytest.raises(IndexError):
        ctx.letter(3)
    with pytest.raises(ValueError):
        ctx.check_letter(4)


def test_fock_vector_drops_zeros_and_respects_trunc():
    ctx = QContext(0.3, 1, 2)
    v = FockVector({(0,): 1.0, (1,): 0.0}, ctx)
    assert list(v) == [(0,)]
    assert len(v - v) == 0
    with pytest.raises(ValueError):
        FockVector.basis((0, 0, 0), ctx)
    assert len(v.created(0).created(0)) == 0


# --- P^(n) and R_{k,n} ------------------------------------------------------


def test_p_level_one_is_identity():
    ctx = QContext(0.4, 2, 3)
    assert (p_matrix(ctx, 1) != sp.identity(4)).nnz == 0


def test_p_level_two_entry():
    q = 0.4
    ctx = QContext(q, 2, 3)
    P = p_matrix(ctx, 2).toarray()
    e12, e21 = 0 * 4 + 1, 1 * 4 + 0
    assert P[e21, e12] == pytest.approx(q)
    assert P[e12, e12] == pytest.approx(1.0)


def test_p_range_error():
    with pytest.raises(ValueError):
        p_matrix(QContext(0.4, 1, 3), 4)


@pytest.mark.parametrize("q", [-0.7, 0.5])
@pytest.mark.parametrize("s,n", [(2, 1), (2, 2), (2, 3), (2, 4), (2, 5), (4, 3), (4, 4)])
def test_p_recursion_matches_factorial_sum(q, s, n):
    got = level_p_matrix(s, n, q).toarray()
    assert np.abs(got - brute_p(s, n, q)).max() < 1e-12


@pytest.mark.parametrize("q", [-0.7, -0.3, 0.3, 0.7])
def test_p_strictly_positive(q):
    for n in range(6):
        lo = np.linalg.eigvalsh(level_p_matrix(2, n, q).toarray()).min()
        assert lo > 0


def test_r_top_is_identity():
    ctx = QContext(0.5, 1, 4)
    for n in range(5):
        assert abs(r_matrix(ctx, n, n) - sp.identity(2**n)).max() == 0


@pytest.mark.parametrize("q", [-0.5, 0.5])
def test_ncbinom(q):
    ctx = QContext(q, 1, 5)
    for n in range(6):
        P = p_matrix(ctx, n)
        for k in range(n + 1):
            split = sp.kron(p_matrix(ctx, k), p_matrix(ctx, n - k))
            assert abs(r_matrix(ctx, k, n) @ split - P).max() < 1e-12


def test_r_norm_bounded_by_c():
    ctx = QContext(0.5, 1, 4)
    sigma = np.linalg.svd(r_matrix(ctx, 2, 4).toarray(), compute_uv=False).max()
    assert sigma <= constants(0.5).c_q + 1e-12


def test_r_range_error():
    with pytest.raises(ValueError):
        r_matrix(QContext(0.5, 1, 3), 2, 4)


@pytest.mark.parametrize("q", [-0.7, 0.3, 0.7])
def test_p_dominated_by_split(q):
    C = constants(q).c_q
    for n in range(1, 6):
        P = level_p_matrix(2, n, q).toarray()
        for k in range(n + 1):
            split = np.kron(level_p_matrix(2, k, q).toarray(), level_p_matrix(2, n - k, q).toarray())
            assert np.linalg.eigvalsh(C * split - P).min() >= -1e-10


@settings(max_examples=25, deadline=None)
@given(q_values, st.integers(1, 5), st.data(), st.integers(0, 2**31))
def test_rstar_split_norm(q, n, data, seed):
    k = data.draw(st.integers(0, n))
    ctx = QContext(q, 1, n)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
    lhs = split_norm(ctx, r_matrix(ctx, k, n).T @ xi, k, n)
    nxi = math.sqrt(np.vdot(xi, p_matrix(ctx, n) @ xi).real)
    assert lhs <= math.sqrt(constants(q).c_q) * nxi * (1 + 1e-12)


# --- inner products and star ------------------------------------------------


@pytest.mark.parametrize("q", [-0.5, 0.0, 0.5])
def test_inner_of_powers(q):
    ctx = QContext(q, 1, 6)
    for n in range(7):
        e = FockVector.basis((0,) * n, ctx)
        assert q_inner(ctx, e, e).real == pytest.approx(q_factorial(n, q), abs=1e-12)
        assert q_inner(ctx, e.to_array(), e.to_array()).real == pytest.approx(q_factorial(n, q), abs=1e-12)


def test_inner_small_cases():
    q = 0.3
    ctx = QContext(q, 2, 2)
    assert q_inner(ctx, FockVector.basis((0, 1)), FockVector.basis((1, 0))) == pytest.approx(q)
    assert q_inner(ctx, FockVector.basis((0, 0)), FockVector.basis((0, 1))) == 0
    assert word_inner((0, 2), (2, 1), q) == 0


@settings(max_examples=20, deadline=None)
@given(q_values, st.integers(0, 2**31))
def test_inner_sparse_and_dense_agree(q, seed):
    ctx = QContext(q, 1, 4)
    x, y = rand_vec(ctx, seed), rand_vec(ctx, seed + 1)
    fx, fy = FockVector.from_array(ctx, x), FockVector.from_array(ctx, y)
    assert q_inner(ctx, fx, fy) == pytest.approx(q_inner(ctx, x, y), rel=1e-12)
    assert q_inner(ctx, y, x) == pytest.approx(np.conj(q_inner(ctx, x, y)), rel=1e-12)
    assert q_norm(ctx, x) > 0


def test_star_on_basis():
    assert star_vector(FockVector.basis((0, 1, 2))).coeffs == {(2, 1, 0): 1}
    alpha = 2 - 3j
    assert star_vector(FockVector.basis((0, 1), coef=alpha)).coeffs == {(1, 0): np.conj(alpha)}


@settings(max_examples=20, deadline=None)
@given(q_values, st.integers(0, 2**31))
def test_star_antiunitary_and_involutive(q, seed):
    ctx = QContext(q, 1, 4)
    x, y = rand_vec(ctx, seed), rand_vec(ctx, seed + 7)
    sx, sy = star_array(ctx, x), star_array(ctx, y)
    assert q_inner(ctx, sx, sy) == pytest.approx(np.conj(q_inner(ctx, x, y)), rel=1e-12)
    assert np.allclose(star_array(ctx, sx), x)
    fx = FockVector.from_array(ctx, x)
    assert np.allclose(star_vector(fx).to_array(ctx), sx)


def test_gram_solve_inverts_gram():
    ctx = QContext(-0.6, 1, 5)
    x = rand_vec(ctx, 3)
    assert np.allclose(gram_apply(ctx, gram_solve(ctx, x)), x)
    assert np.allclose(gram_matrix(ctx) @ x, gram_apply(ctx, x))


# --- creation and annihilation ----------------------------------------------


def test_annihilate_vacuum():
    ctx = QContext(0.3, 1, 3)
    assert np.all(annihilate(ctx, 0).matvec(ctx.vacuum()) == 0)


def test_annihilate_square():
    q = 0.3
    ctx = QContext(q, 1, 3)
    out = annihilate(ctx, 0).matvec(ctx.basis((0, 0)))
    assert np.allclose(out, (1 + q) * ctx.basis((0,)))
    assert FockVector.basis((0, 0)).annihilated(0, q).coeffs == pytest.approx({(0,): 1 + q})


def test_create_prepends_and_truncates():
    ctx = QContext(0.3, 2, 2)
    assert np.allclose(create(ctx, 1).matvec(ctx.basis((3,))), ctx.basis((1, 3)))
    assert np.all(create(ctx, 1).matvec(ctx.basis((3, 3))) == 0)


def test_invalid_letter():
    ctx = QContext(0.3, 1, 2)
    with pytest.raises(ValueError):
        create(ctx, 2)
    with pytest.raises(ValueError):
        annihilate(ctx, -1)


@settings(max_examples=20, deadline=None)
@given(q_values, st.integers(0, 3), st.integers(0, 2**31))
def test_adjointness(q, letter, seed):
    ctx = QContext(q, 2, 4)
    x, y = rand_vec(ctx, seed), rand_vec(ctx, seed + 1)
    lhs = q_inner(ctx, create(ctx, letter).matvec(x), y)
    rhs = q_inner(ctx, x, annihilate(ctx, letter).matvec(y))
    assert lhs == pytest.approx(rhs, rel=1e-11)


@pytest.mark.parametrize("q", [-0.7, 0.0, 0.7])
def test_q_commutation_below_top(q):
    ctx = QContext(q, 2, 5)
    below = sp.identity(ctx.dim, format="csc")[:, : ctx.offsets[ctx.trunc]]
    for i in range(4):
        for j in range(4):
            A, C = annihilate(ctx, i).mat, create(ctx, j).mat
            D = (A @ C - q * C @ A) @ below
            if i == j:
                D = D - below
            assert D.nnz == 0 or abs(D).max() < 1e-14


# --- operator norm ----------------------------------------------------------


def test_op_norm_identity():
    ctx = QContext(0.4, 1, 4)
    assert op_norm(ctx, identity(ctx)).value == pytest.approx(1.0, abs=1e-10)


def test_op_norm_free_creation_is_isometry():
    ctx = QContext(0.0, 1, 8)
    assert op_norm(ctx, create(ctx, 0), tol=1e-12).value == pytest.approx(1.0, abs=1e-10)
    small = QContext(0.0, 1, 3)
    assert dense_op_norm(small, create(small, 0)) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("q", [-0.6, 0.5])
@pytest.mark.parametrize("method", ["lanczos", "power"])
def test_op_norm_matches_dense_oracle(q, method):
    ctx = QContext(q, 1, 4)
    T = create(ctx, 0) @ annihilate(ctx, 1) + create(ctx, 1) * 0.5
    est = op_norm(ctx, T, tol=1e-12, method=method, max_iter=20000)
    assert est.value == pytest.approx(dense_op_norm(ctx, T), rel=1e-6)
    assert est.value <= dense_op_norm(ctx, T) * (1 + 1e-10)


def test_op_norm_raw_matrix_uses_gram_solves():
    ctx = QContext(0.5, 1, 3)
    T = from_matrix(ctx, create(ctx, 0).mat)
    assert op_norm(ctx, T, tol=1e-12).value == pytest.approx(dense_op_norm(ctx, create(ctx, 0)), rel=1e-8)


def test_op_norm_unknown_method():
    ctx = QContext(0.5, 1, 2)
    with pytest.raises(ValueError):
        op_norm(ctx, identity(ctx), method="svd")


@pytest.mark.parametrize("q", [-0.5, 0.5])
@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_creation_sum_bound(q, n):
    ctx = QContext(q, 1, n + 3)
    s = ctx.s
    rng = np.random.default_rng(n)
    alpha = rng.standard_normal(s**n) + 1j * rng.standard_normal(s**n)
    T = WordSumOperator(ctx, n, 0, alpha.reshape(-1, 1))
    vec = np.zeros(ctx.dim, dtype=complex)
    vec[ctx.level_slice(n)] = alpha
    assert np.allclose(T.matvec(ctx.vacuum()), vec)
    bound = math.sqrt(constants(q).c_q) * q_norm(ctx, vec)
    assert op_norm(ctx, T, tol=1e-10).value <= bound * (1 + 1e-9)


def test_op_norm_monotone_in_trunc():
    vals = []
    for N in range(2, 8):
        ctx = QContext(0.6, 1, N)
        T = create(ctx, 0) + annihilate(ctx, 1)
        vals.append(op_norm(ctx, T, tol=1e-12).value)
    assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))


# --- number semigroup -------------------------------------------------------


def test_number_semigroup():
    ctx = QContext(0.2, 1, 4)
    x = rand_vec(ctx, 0)
    assert np.allclose(number_semigroup(ctx, 0).matvec(x), x)
    w = (0, 1, 1)
    assert np.allclose(number_semigroup(ctx, 0.7).matvec(ctx.basis(w)), math.exp(-3 * 0.7) * ctx.basis(w))
    composed = number_semigroup(ctx, 0.3).matvec(number_semigroup(ctx, 0.4).matvec(x))
    assert np.allclose(composed, number_semigroup(ctx, 0.7).matvec(x))
    with pytest.raises(ValueError):
        number_semigroup(ctx, -0.1)
