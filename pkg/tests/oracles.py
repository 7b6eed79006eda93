"""Direct-definition reference implementations in plain Python, used to cross-check the library."""

import math
import statistics


def pearson(xs, ys):
    n = len(xs)
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    cov = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    vx = math.fsum((x - mx) ** 2 for x in xs)
    vy = math.fsum((y - my) ** 2 for y in ys)
    return cov / math.sqrt(vx * vy)


def average_ranks(xs):
    order = sorted(range(len(xs)), key=lambda i: xs[i])
    ranks = [0.0] * len(xs)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and xs[order[j + 1]] == xs[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _pairs(frow, rrow):
    return [(f, r) for f, r in zip(frow, rrow) if not (math.isnan(f) or math.isnan(r))]


def daily_corr(factor, labels, rank=False):
    """Per-date correlation list, skipping dates with < 3 pairs or a constant side."""
    out = []
    for frow, rrow in zip(factor, labels):
        pairs = _pairs(frow, rrow)
        if len(pairs) < 3:
            continue
        xs = [p[0] for p in pairs]
        ys = [p[1] for p in pairs]
        if len(set(xs)) == 1 or len(set(ys)) == 1:
            continue
        if rank:
            xs, ys = average_ranks(xs), average_ranks(ys)
        out.append(pearson(xs, ys))
    return out


def ir_of(values):
    return statistics.fmean(values) / statistics.stdev(values)


def percentile_linear(values, q):
    xs = sorted(values)
    pos = (len(xs) - 1) * q / 100
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (xs[hi] - xs[lo]) * (pos - lo)


def edit_distance(a, b):
    """Levenshtein distance by the textbook dynamic programme."""
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]
