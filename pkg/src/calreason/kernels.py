"""Hot inner loops: ancestral sampling and word-level LCS.

Each kernel exists twice. The ``*_loop`` variants are written as explicit
scalar loops and compiled with numba when it is available; the ``*_numpy``
variants vectorize each step with numpy and serve as the fallback. The
public names ``sample_tokens`` and ``lcs_length`` point at whichever backend
was selected in :mod:`calreason._backend`.
"""
import math

import numpy as np

from ._backend import BACKEND, HAS_NUMBA, njit

__all__ = [
    "BACKEND",
    "HAS_NUMBA",
    "lcs_length",
    "lcs_length_loop",
    "lcs_length_numpy",
    "sample_tokens",
    "sample_tokens_loop",
    "sample_tokens_numpy",
]


def sample_tokens_numpy(W1, b1, W2, b2, cond, uniforms, temperature, greedy, max_len, bos, eos, pos_bits):
    """Sample one sequence; returns (tokens, per-step log-probs at temperature 1)."""
    C = cond.shape[0]
    V = W2.shape[0]
    base = W1[:, :C] @ cond + b1
    W_tok = W1[:, C : C + V]
    W_pos = W1[:, C + V :]
    tokens = np.empty(max_len, dtype=np.int64)
    logps = np.empty(max_len - 1, dtype=np.float64)
    tokens[0] = bos
    prev = bos
    n = 1
    for step in range(max_len - 1):
        a = base + W_tok[:, prev] + W_pos @ pos_bits[step]
        h = np.tanh(a)
        z = W2 @ h + b2
        zmax = z.max()
        logz = zmax + math.log(np.exp(z - zmax).sum())
        if step == max_len - 2:
            tok = eos
        elif greedy:
            tok = int(np.argmax(z))
        else:
            q = np.exp((z - zmax) / temperature)
            cum = np.cumsum(q)
            tok = int(np.searchsorted(cum, uniforms[step] * cum[-1], side="right"))
            if tok >= V:
                tok = V - 1
        logps[step] = z[tok] - logz
        tokens[n] = tok
        n += 1
        prev = tok
        if tok == eos:
            break
    return tokens[:n].copy(), logps[: n - 1].copy()


@njit(cache=True)
def sample_tokens_loop(W1, b1, W2, b2, cond, uniforms, temperature, greedy, max_len, bos, eos, pos_bits):
    H = W1.shape[0]
    C = cond.shape[0]
    V = W2.shape[0]
    P = pos_bits.shape[1]
    base = np.empty(H)
    for i in range(H):
        s = b1[i]
        for j in range(C):
            s += W1[i, j] * cond[j]
        base[i] = s
    h = np.empty(H)
    z = np.empty(V)
    tokens = np.empty(max_len, dtype=np.int64)
    logps = np.empty(max_len - 1)
    tokens[0] = bos
    prev = bos
    n = 1
    for step in range(max_len - 1):
        for i in range(H):
            s = base[i] + W1[i, C + prev]
            for k in range(P):
                s += W1[i, C + V + k] * pos_bits[step, k]
            h[i] = math.tanh(s)
        zmax = -np.inf
        for v in range(V):
            s = b2[v]
            for i in range(H):
                s += W2[v, i] * h[i]
            z[v] = s
            if s > zmax:
                zmax = s
        tot = 0.0
        for v in range(V):
            tot += math.exp(z[v] - zmax)
        logz = zmax + math.log(tot)
        if step == max_len - 2:
            tok = eos
        elif greedy:
            tok = 0
            for v in range(1, V):
                if z[v] > z[tok]:
                    tok = v
        else:
            cum = 0.0
            for v in range(V):
                cum += math.exp((z[v] - zmax) / temperature)
            thresh = uniforms[step] * cum
            acc = 0.0
            tok = V - 1
            for v in range(V):
                acc += math.exp((z[v] - zmax) / temperature)
                if acc > thresh:
                    tok = v
                    break
        logps[step] = z[tok] - logz
        tokens[n] = tok
        n += 1
        prev = tok
        if tok == eos:
            break
    return tokens[:n].copy(), logps[: n - 1].copy()


def lcs_length_numpy(a, b):
    """Length of the longest common subsequence of two int arrays."""
    if len(a) == 0 or len(b) == 0:
        return 0
    b = np.asarray(b)
    row = np.zeros(len(b) + 1, dtype=np.int64)
    for x in a:
        match = np.concatenate(([0], np.where(b == x, row[:-1] + 1, 0)))
        # row[j] = max(match[j], new[j-1], row[j]) needs a running max
        cand = np.maximum(match, row)
        row = np.maximum.accumulate(cand)
    return int(row[-1])


@njit(cache=True)
def lcs_length_loop(a, b):
    n = len(a)
    m = len(b)
    if n == 0 or m == 0:
        return 0
    prev = np.zeros(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = 0
        for j in range(1, m + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            elif prev[j] >= cur[j - 1]:
                cur[j] = prev[j]
            else:
                cur[j] = cur[j - 1]
        prev, cur = cur, prev
    return prev[m]


if HAS_NUMBA:
    sample_tokens = sample_tokens_loop
    lcs_length = lcs_length_loop
else:
    sample_tokens = sample_tokens_numpy
    lcs_length = lcs_length_numpy
