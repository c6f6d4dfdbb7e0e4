import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from qfock import kernels
from qfock.fockspace import level_p_matrix

NB = kernels.IMPLEMENTATIONS["numba"]
NP = kernels.IMPLEMENTATIONS["numpy"]


def rand_block(B, n, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((B, n)) + 1j * rng.standard_normal((B, n))


@pytest.mark.parametrize("s,L", [(2, 0), (2, 1), (2, 5), (4, 3), (6, 2)])
@pytest.mark.parametrize("q", [-0.7, 0.0, 0.4])
def test_rstar_step_backends_agree(s, L, q):
    x = rand_block(3, s**L, L)
    assert np.allclose(NB["rstar_step"](x, s, L, q), NP["rstar_step"](x, s, L, q), atol=1e-13)


def test_rstar_chain_builds_symmetrizer():
    # P^(L) = (I (x) P^(L-1)) R*_{1,L}; applying steps to the identity recovers the matrix
    s, L, q = 2, 4, 0.3
    y = np.eye(s**L, dtype=complex)
    for k in range(L, 0, -1):
        y = kernels.rstar_step(y.reshape(-1, s**k), s, k, q).reshape(s**L, s**L)
    assert np.allclose(y.T, level_p_matrix(s, L, q).toarray())


@pytest.mark.parametrize("s,L", [(2, 1), (2, 4), (4, 3)])
def test_annihilate_letters_backends_agree(s, L):
    x = rand_block(2, s**L, 5)
    letters = np.array([0, s - 1], dtype=np.int64)
    a = NB["annihilate_letters"](x, s, L, 0.6, letters)
    b = NP["annihilate_letters"](x, s, L, 0.6, letters)
    assert a.shape == (2, 2, s ** (L - 1))
    assert np.allclose(a, b, atol=1e-13)


@pytest.mark.parametrize("s,N,letter", [(2, 0, 0), (2, 4, 1), (4, 3, 2)])
def test_annihilation_coo_backends_agree(s, N, letter):
    dim = sum(s**L for L in range(N + 1))
    mats = []
    for impl in (NB, NP):
        r, c, v = impl["annihilation_coo"](s, N, letter, -0.4)
        mats.append(sp.csr_matrix((v, (r, c)), shape=(dim, dim)))
    assert mats[0].nnz == mats[1].nnz
    assert abs(mats[0] - mats[1]).sum() < 1e-13


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.booleans()), max_size=10), st.booleans())
def test_pairing_histogram_backends_agree(letters, opposite):
    keys = np.array([k for k, _ in letters], dtype=np.int64)
    stars = np.array([s for _, s in letters], dtype=np.bool_)
    assert list(NB["pairing_histogram"](keys, stars, opposite)) == list(NP["pairing_histogram"](keys, stars, opposite))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 8), st.integers(1, 6), st.integers(0, 2**31))
def test_inversions_batch_backends_agree(n, rows, seed):
    rng = np.random.default_rng(seed)
    perms = np.array([rng.permutation(n) + 1 for _ in range(rows)], dtype=np.int64).reshape(rows, n)
    assert list(NB["inversions_batch"](perms)) == list(NP["inversions_batch"](perms))


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, QFOCK_DISABLE_NUMBA="1")
    code = "from qfock import kernels; print(kernels.BACKEND, kernels.rstar_step.__name__)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "_rstar_step_numpy"]
