"""Pure-Python kernels. Reference semantics for the compiled ``_kernels`` module."""


def trigrams(text):
    """Character trigrams per whitespace token; tokens shorter than 3 are kept whole."""
    out = []
    for tok in text.split():
        n = len(tok)
        if n < 3:
            out.append(tok)
        else:
            for i in range(n - 2):
                out.append(tok[i:i + 3])
    return out


def count_trigrams(texts, counts):
    """Add trigram occurrences of every text in ``texts`` into the ``counts`` dict."""
    for text in texts:
        for tok in text.split():
            n = len(tok)
            if n < 3:
                counts[tok] = counts.get(tok, 0) + 1
            else:
                for i in range(n - 2):
                    t = tok[i:i + 3]
                    counts[t] = counts.get(t, 0) + 1
    return counts


def global_value(tf_c, tf_o, max_c, max_o, sigma, rho, lam):
    if tf_c <= 0 or max_c <= 0:
        return 0.0
    lv = (tf_c / max_c) ** sigma
    if tf_o <= 0 or max_o <= 0:
        m = 0.0
    else:
        m = (tf_o / max_o) ** sigma
    den = lv + lam * m
    sg = lv / den if den > 0 else 0.0
    base = 1.0 - m / lv
    if base < 0.0:
        base = 0.0
    sn = base ** rho
    return lv * sg * sn


def global_values(tf_c, tf_o, max_c, max_o, sigma, rho, lam):
    return [
        global_value(a, b, max_c, max_o, sigma, rho, lam) for a, b in zip(tf_c, tf_o)
    ]


def score_text(text, table):
    """Sum (gv_pos, gv_neg) over the trigrams of ``text``.

    ``table`` maps term -> (gv_pos, gv_neg). Returns ``(pos, neg, n_terms)``.
    """
    pos = 0.0
    neg = 0.0
    n_terms = 0
    for term in trigrams(text):
        n_terms += 1
        pair = table.get(term)
        if pair is not None:
            pos += pair[0]
            neg += pair[1]
    return pos, neg, n_terms


def first_decision_index(scores, tau, required):
    """1-based index at which the count of ``score >= tau`` first reaches ``required``; 0 if never."""
    count = 0
    for i, p in enumerate(scores):
        if p >= tau:
            count += 1
            if count >= required:
                return i + 1
    return 0
