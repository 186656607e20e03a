"""Log-semiring forward/backward and Viterbi kernels over arc arrays.

Every kernel exists twice: a scalar-loop version compiled with numba and a
vectorised numpy version. Both take the same arguments:

    src, dst, lab : int64 arrays of length A (arcs sorted by src, label, dst)
    w             : float64 arc log-weights
    final         : float64 per-state final log-weights (-inf = non-final)
    em            : float64 T x P emission log-scores
"""
import numpy as np

from ._accel import DEFAULT_BACKEND, HAS_NUMBA, njit

NEG_INF = -np.inf


# --------------------------------------------------------------------------
# scalar loops (compiled by numba)


def _forward_loop(num_states, start, src, dst, lab, w, em):
    T = em.shape[0]
    A = src.shape[0]
    alpha = np.full((T + 1, num_states), -np.inf)
    alpha[0, start] = 0.0
    m = np.empty(num_states)
    acc = np.empty(num_states)
    for t in range(T):
        m[:] = -np.inf
        acc[:] = 0.0
        for a in range(A):
            v = alpha[t, src[a]] + w[a] + em[t, lab[a]]
            if v > m[dst[a]]:
                m[dst[a]] = v
        for a in range(A):
            v = alpha[t, src[a]] + w[a] + em[t, lab[a]]
            if v > -np.inf:
                acc[dst[a]] += np.exp(v - m[dst[a]])
        for s in range(num_states):
            if m[s] > -np.inf:
                alpha[t + 1, s] = m[s] + np.log(acc[s])
    return alpha


def _backward_loop(num_states, src, dst, lab, w, final, em):
    T = em.shape[0]
    A = src.shape[0]
    beta = np.full((T + 1, num_states), -np.inf)
    beta[T, :] = final
    m = np.empty(num_states)
    acc = np.empty(num_states)
    for t in range(T - 1, -1, -1):
        m[:] = -np.inf
        acc[:] = 0.0
        for a in range(A):
            v = beta[t + 1, dst[a]] + w[a] + em[t, lab[a]]
            if v > m[src[a]]:
                m[src[a]] = v
        for a in range(A):
            v = beta[t + 1, dst[a]] + w[a] + em[t, lab[a]]
            if v > -np.inf:
                acc[src[a]] += np.exp(v - m[src[a]])
        for s in range(num_states):
            if m[s] > -np.inf:
                beta[t, s] = m[s] + np.log(acc[s])
    return beta


def _occupancy_loop(num_labels, src, dst, lab, w, em, alpha, beta, total):
    T = em.shape[0]
    A = src.shape[0]
    gamma = np.zeros((T, num_labels))
    for t in range(T):
        for a in range(A):
            v = alpha[t, src[a]] + w[a] + em[t, lab[a]] + beta[t + 1, dst[a]] - total
            if v > -np.inf:
                gamma[t, lab[a]] += np.exp(v)
    return gamma


def _viterbi_loop(num_states, start, src, dst, lab, w, em):
    T = em.shape[0]
    A = src.shape[0]
    delta = np.full((T + 1, num_states), -np.inf)
    back = np.full((T + 1, num_states), -1, dtype=np.int64)
    delta[0, start] = 0.0
    for t in range(T):
        for a in range(A):
            v = delta[t, src[a]] + w[a] + em[t, lab[a]]
            # strict comparison keeps the lowest arc index on ties
            if v > delta[t + 1, dst[a]]:
                delta[t + 1, dst[a]] = v
                back[t + 1, dst[a]] = a
    return delta, back


if HAS_NUMBA:
    _forward_nb = njit(cache=True)(_forward_loop)
    _backward_nb = njit(cache=True)(_backward_loop)
    _occupancy_nb = njit(cache=True)(_occupancy_loop)
    _viterbi_nb = njit(cache=True)(_viterbi_loop)


# --------------------------------------------------------------------------
# numpy fallback


def _scatter_logsumexp(values, index, size):
    m = np.full(size, NEG_INF)
    np.maximum.at(m, index, values)
    live = values > NEG_INF
    acc = np.zeros(size)
    np.add.at(acc, index[live], np.exp(values[live] - m[index[live]]))
    out = np.full(size, NEG_INF)
    ok = m > NEG_INF
    out[ok] = m[ok] + np.log(acc[ok])
    return out


def _forward_np(num_states, start, src, dst, lab, w, em):
    T = em.shape[0]
    alpha = np.full((T + 1, num_states), NEG_INF)
    alpha[0, start] = 0.0
    for t in range(T):
        v = alpha[t, src] + w + em[t, lab]
        alpha[t + 1] = _scatter_logsumexp(v, dst, num_states)
    return alpha


def _backward_np(num_states, src, dst, lab, w, final, em):
    T = em.shape[0]
    beta = np.full((T + 1, num_states), NEG_INF)
    beta[T] = final
    for t in range(T - 1, -1, -1):
        v = beta[t + 1, dst] + w + em[t, lab]
        beta[t] = _scatter_logsumexp(v, src, num_states)
    return beta


def _occupancy_np(num_labels, src, dst, lab, w, em, alpha, beta, total):
    with np.errstate(invalid="ignore"):
        v = alpha[:-1, src] + w + em[:, lab] + beta[1:, dst] - total
    post = np.where(v > NEG_INF, np.exp(np.where(v > NEG_INF, v, 0.0)), 0.0)
    onehot = np.zeros((src.shape[0], num_labels))
    onehot[np.arange(src.shape[0]), lab] = 1.0
    return post @ onehot


def _viterbi_np(num_states, start, src, dst, lab, w, em):
    T = em.shape[0]
    A = src.shape[0]
    arc_ids = np.arange(A)
    delta = np.full((T + 1, num_states), NEG_INF)
    back = np.full((T + 1, num_states), -1, dtype=np.int64)
    delta[0, start] = 0.0
    for t in range(T):
        v = delta[t, src] + w + em[t, lab]
        m = np.full(num_states, NEG_INF)
        np.maximum.at(m, dst, v)
        hit = (v == m[dst]) & (v > NEG_INF)
        best = np.full(num_states, A)
        np.minimum.at(best, dst[hit], arc_ids[hit])
        ok = best < A
        delta[t + 1] = m
        back[t + 1, ok] = best[ok]
    return delta, back


# --------------------------------------------------------------------------


class Kernels:
    """Bundle of the four kernels for one backend."""

    def __init__(self, name, forward, backward, occupancy, viterbi):
        self.name = name
        self.forward = forward
        self.backward = backward
        self.occupancy = occupancy
        self.viterbi = viterbi


NUMPY = Kernels("numpy", _forward_np, _backward_np, _occupancy_np, _viterbi_np)
NUMBA = (
    Kernels("numba", _forward_nb, _backward_nb, _occupancy_nb, _viterbi_nb)
    if HAS_NUMBA
    else None
)

BACKENDS = {"numpy": NUMPY}
if NUMBA is not None:
    BACKENDS["numba"] = NUMBA


def get_kernels(backend=None):
    name = backend or DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}") from None
