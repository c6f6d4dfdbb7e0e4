"""Hot inner loops, each in a numba and a numpy/python flavour.

The module-level names (``rstar_step``, ``annihilate_letters``,
``annihilation_coo``, ``pairing_histogram``, ``inversions_batch``) point at the numba kernels unless
``QFOCK_DISABLE_NUMBA=1`` is set. Both flavours stay importable through
:data:`IMPLEMENTATIONS` so tests and the benchmark can compare them.

Words of length ``L`` over an alphabet of size ``s`` are stored as C-ordered
``(s,)*L`` tensors flattened to ``s**L`` entries, first letter most
significant.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# R*_{1,L}: bring each letter to the front with weight q**(position)
# ---------------------------------------------------------------------------


def _rstar_step_numpy(x, s, L, q):
    B = x.shape[0]
    if L == 0:
        return x.copy()
    xt = x.reshape((B,) + (s,) * L)
    y = np.zeros_like(xt)
    c = 1.0
    for p in range(L):
        if c != 0.0:
            y += c * np.moveaxis(xt, 1 + p, 1)
        c *= q
    return y.reshape(B, -1)


@njit
def _rstar_step_numba(x, s, L, q):
    B, n = x.shape
    y = np.zeros_like(x)
    if L == 0:
        for b in range(B):
            for i in range(n):
                y[b, i] = x[b, i]
        return y
    top = n // s
    for b in range(B):
        c = 1.0
        lo = top
        hi = 1
        for p in range(L):
            if c != 0.0:
                # idx = (h*s + dgt)*lo + l  ->  dgt*top + h*lo + l
                for h in range(hi):
                    for dgt in range(s):
                        src = (h * s + dgt) * lo
                        dst = dgt * top + h * lo
                        for l in range(lo):
                            y[b, dst + l] += c * x[b, src + l]
            c *= q
            lo //= s
            hi *= s
    return y


# ---------------------------------------------------------------------------
# annihilation restricted to a subset of letters
# ---------------------------------------------------------------------------


def _annihilate_letters_numpy(x, s, L, q, letters):
    B = x.shape[0]
    letters = np.asarray(letters, dtype=np.int64)
    out = np.zeros((B, letters.size, s ** (L - 1)), dtype=x.dtype)
    xt = x.reshape((B,) + (s,) * L)
    c = 1.0
    for p in range(L):
        if c != 0.0:
            out += c * np.moveaxis(xt, 1 + p, 1)[:, letters].reshape(B, letters.size, -1)
        c *= q
    return out


@njit
def _annihilate_letters_numba(x, s, L, q, letters):
    B, n = x.shape
    nl = letters.shape[0]
    top = n // s
    out = np.zeros((B, nl, top), dtype=x.dtype)
    for b in range(B):
        c = 1.0
        lo = top
        hi = 1
        for p in range(L):
            if c != 0.0:
                for h in range(hi):
                    for j in range(nl):
                        src = (h * s + letters[j]) * lo
                        dst = h * lo
                        for l in range(lo):
                            out[b, j, dst + l] += c * x[b, src + l]
            c *= q
            lo //= s
            hi *= s
    return out


# ---------------------------------------------------------------------------
# sparse annihilation matrix a*(e_letter) on the truncated basis
# ---------------------------------------------------------------------------


def _level_offsets(s, N):
    off = np.zeros(N + 2, np.int64)
    for L in range(N + 1):
        off[L + 1] = off[L] + s**L
    return off


def _annihilation_coo_numpy(s, N, letter, q):
    off = _level_offsets(s, N)
    rows, cols, vals = [], [], []
    for L in range(1, N + 1):
        idx = np.arange(s**L, dtype=np.int64)
        for p in range(L):
            lo = s ** (L - 1 - p)
            dgt = (idx // lo) % s
            hit = idx[dgt == letter]
            rest = (hit // (lo * s)) * lo + hit % lo
            rows.append(off[L - 1] + rest)
            cols.append(off[L] + hit)
            vals.append(np.full(hit.size, q**p))
    if not rows:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


@njit
def _annihilation_coo_numba(s, N, letter, q):
    off = np.zeros(N + 2, np.int64)
    for L in range(N + 1):
        off[L + 1] = off[L] + s**L
    nnz = 0
    for L in range(1, N + 1):
        nnz += L * s ** (L - 1)
    rows = np.empty(nnz, np.int64)
    cols = np.empty(nnz, np.int64)
    vals = np.empty(nnz)
    k = 0
    for L in range(1, N + 1):
        n = s**L
        for idx in range(n):
            c = 1.0
            for p in range(L):
                lo = s ** (L - 1 - p)
                dgt = (idx // lo) % s
                if dgt == letter:
                    rows[k] = off[L - 1] + (idx // (lo * s)) * lo + idx % lo
                    cols[k] = off[L] + idx
                    vals[k] = c
                    k += 1
                c *= q
    return rows[:k], cols[:k], vals[:k]


# ---------------------------------------------------------------------------
# crossing histogram over admissible perfect matchings
# ---------------------------------------------------------------------------


def _pairing_histogram_python(keys, stars, opposite):
    keys = [int(k) for k in keys]
    stars = [bool(s) for s in stars]
    n = len(keys)
    npairs = n // 2
    hist = np.zeros(npairs * (npairs - 1) // 2 + 1, np.int64)
    if n % 2:
        return hist
    partner = [-1] * n

    def rec(cr):
        try:
            i = partner.index(-1)
        except ValueError:
            hist[cr] += 1
            return
        for j in range(i + 1, n):
            if partner[j] != -1 or keys[j] != keys[i]:
                continue
            if opposite and stars[j] == stars[i]:
                continue
            new = sum(1 for v in range(i + 1, j) if partner[v] != -1 and partner[v] < i)
            partner[i], partner[j] = j, i
            rec(cr + new)
            partner[i], partner[j] = -1, -1

    rec(0)
    return hist


@njit
def _pairing_histogram_numba(keys, stars, opposite):
    n = keys.shape[0]
    npairs = n // 2
    hist = np.zeros(npairs * (npairs - 1) // 2 + 1, np.int64)
    if n % 2 == 1:
        return hist
    if n == 0:
        hist[0] = 1
        return hist
    partner = -np.ones(n, np.int64)
    left = np.zeros(npairs, np.int64)
    cand = np.zeros(npairs, np.int64)
    crs = np.zeros(npairs + 1, np.int64)
    depth = 0
    left[0] = 0
    cand[0] = 0
    while depth >= 0:
        i = left[depth]
        # release the arc previously placed at this depth
        if cand[depth] > i:
            j_old = cand[depth]
            partner[i] = -1
            partner[j_old] = -1
        j = cand[depth] + 1 if cand[depth] > i else i + 1
        found = False
        while j < n:
            if partner[j] == -1 and keys[j] == keys[i]:
                if not opposite or stars[j] != stars[i]:
                    found = True
                    break
            j += 1
        if not found:
            cand[depth] = i
            depth -= 1
            continue
        new = 0
        for v in range(i + 1, j):
            pv = partner[v]
            if pv != -1 and pv < i:
                new += 1
        partner[i] = j
        partner[j] = i
        cand[depth] = j
        crs[depth + 1] = crs[depth] + new
        if depth + 1 == npairs:
            hist[crs[depth + 1]] += 1
            continue
        nxt = i + 1
        while partner[nxt] != -1:
            nxt += 1
        depth += 1
        left[depth] = nxt
        cand[depth] = nxt
    return hist


# ---------------------------------------------------------------------------
# inversion counts for a batch of permutations
# ---------------------------------------------------------------------------


def _inversions_batch_numpy(perms):
    perms = np.asarray(perms, np.int64)
    if perms.ndim != 2 or perms.shape[1] < 2:
        return np.zeros(perms.shape[0] if perms.ndim == 2 else 0, np.int64)
    gt = perms[:, :, None] > perms[:, None, :]
    return np.triu(gt, 1).sum(axis=(1, 2)).astype(np.int64)


@njit
def _inversions_batch_numba(perms):
    M, n = perms.shape
    out = np.zeros(M, np.int64)
    for r in range(M):
        c = 0
        for i in range(n):
            for j in range(i + 1, n):
                if perms[r, i] > perms[r, j]:
                    c += 1
        out[r] = c
    return out


def _pairing_histogram_numba_entry(keys, stars, opposite):
    return _pairing_histogram_numba(
        np.asarray(keys, np.int64), np.asarray(stars, np.bool_), bool(opposite)
    )


def _rstar_step_numba_entry(x, s, L, q):
    x = np.ascontiguousarray(x, dtype=np.complex128)
    return _rstar_step_numba(x, int(s), int(L), float(q))


def _annihilate_letters_numba_entry(x, s, L, q, letters):
    x = np.ascontiguousarray(x, dtype=np.complex128)
    return _annihilate_letters_numba(x, int(s), int(L), float(q), np.asarray(letters, dtype=np.int64))


def _annihilation_coo_numba_entry(s, N, letter, q):
    return _annihilation_coo_numba(int(s), int(N), int(letter), float(q))


def _inversions_batch_numba_entry(perms):
    return _inversions_batch_numba(np.ascontiguousarray(perms, dtype=np.int64))


IMPLEMENTATIONS = {
    "numba": {
        "rstar_step": _rstar_step_numba_entry,
        "annihilate_letters": _annihilate_letters_numba_entry,
        "annihilation_coo": _annihilation_coo_numba_entry,
        "pairing_histogram": _pairing_histogram_numba_entry,
        "inversions_batch": _inversions_batch_numba_entry,
    },
    "numpy": {
        "rstar_step": _rstar_step_numpy,
        "annihilate_letters": _annihilate_letters_numpy,
        "annihilation_coo": _annihilation_coo_numpy,
        "pairing_histogram": _pairing_histogram_python,
        "inversions_batch": _inversions_batch_numpy,
    },
}

BACKEND = "numba" if USE_NUMBA else "numpy"

rstar_step = IMPLEMENTATIONS[BACKEND]["rstar_step"]
annihilate_letters = IMPLEMENTATIONS[BACKEND]["annihilate_letters"]
annihilation_coo = IMPLEMENTATIONS[BACKEND]["annihilation_coo"]
pairing_histogram = IMPLEMENTATIONS[BACKEND]["pairing_histogram"]
inversions_batch = IMPLEMENTATIONS[BACKEND]["inversions_batch"]
