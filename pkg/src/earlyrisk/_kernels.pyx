# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Must match ``_pykernels`` bit for bit."""

from libc.math cimport pow


def trigrams(str text):
    cdef list out = []
    cdef str tok
    cdef Py_ssize_t i, n
    for tok in text.split():
        n = len(tok)
        if n < 3:
            out.append(tok)
        else:
            for i in range(n - 2):
                out.append(tok[i:i + 3])
    return out


def count_trigrams(texts, dict counts):
    cdef str text, tok, t
    cdef Py_ssize_t i, n
    cdef object c
    for text in texts:
        for tok in text.split():
            n = len(tok)
            if n < 3:
                c = counts.get(tok)
                counts[tok] = 1 if c is None else c + 1
            else:
                for i in range(n - 2):
                    t = tok[i:i + 3]
                    c = counts.get(t)
                    counts[t] = 1 if c is None else c + 1
    return counts


cdef inline double _gv(double tf_c, double tf_o, double max_c, double max_o,
                       double sigma, double rho, double lam) noexcept nogil:
    cdef double lv, m, den, sg, base
    if tf_c <= 0 or max_c <= 0:
        return 0.0
    lv = pow(tf_c / max_c, sigma)
    if tf_o <= 0 or max_o <= 0:
        m = 0.0
    else:
        m = pow(tf_o / max_o, sigma)
    den = lv + lam * m
    sg = lv / den if den > 0 else 0.0
    base = 1.0 - m / lv
    if base < 0.0:
        base = 0.0
    return lv * sg * pow(base, rho)


def global_value(double tf_c, double tf_o, double max_c, double max_o,
                 double sigma, double rho, double lam):
    return _gv(tf_c, tf_o, max_c, max_o, sigma, rho, lam)


def global_values(tf_c, tf_o, double max_c, double max_o,
                  double sigma, double rho, double lam):
    cdef double[:] a = tf_c
    cdef double[:] b = tf_o
    cdef Py_ssize_t i, n = a.shape[0]
    if b.shape[0] != n:
        raise ValueError("length mismatch")
    cdef list out = [0.0] * n
    for i in range(n):
        out[i] = _gv(a[i], b[i], max_c, max_o, sigma, rho, lam)
    return out


def score_text(str text, dict table):
    cdef double pos = 0.0, neg = 0.0
    cdef Py_ssize_t n_terms = 0, i, n
    cdef str tok
    cdef object pair
    for tok in text.split():
        n = len(tok)
        if n < 3:
            n_terms += 1
            pair = table.get(tok)
            if pair is not None:
                pos += <double>pair[0]
                neg += <double>pair[1]
        else:
            for i in range(n - 2):
                n_terms += 1
                pair = table.get(tok[i:i + 3])
                if pair is not None:
                    pos += <double>pair[0]
                    neg += <double>pair[1]
    return pos, neg, n_terms


def first_decision_index(scores, double tau, Py_ssize_t required):
    cdef Py_ssize_t count = 0, i = 0
    cdef double p
    for p in scores:
        i += 1
        if p >= tau:
            count += 1
            if count >= required:
                return i
    return 0
