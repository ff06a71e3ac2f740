"""Independent reference values frozen into the Rust test suites.

Each block recomputes a quantity with mpmath at 50 significant digits,
using formulations that do not share code or structure with the Rust
implementation. Run `python3 tools/oracles.py` and paste the printed
values into the tests when a block changes.
"""

from itertools import product

import mpmath as mp

mp.mp.dps = 50


def normal_cdf():
    zs = ["-8", "-3", "-1.6448536269514722", "-0.5", "0", "0.5", "1.2815515655446004",
          "1.6448536269514722", "1.959963984540054", "3"]
    print("# standard normal cdf")
    for z in zs:
        print(f"({z}, {mp.nstr(mp.ncdf(mp.mpf(z)), 20)}),")


def cdc_row():
    # CDC 2000 BMI-for-age, boys, 24.5 months; published P95 = 19.33801
    l, m, s = mp.mpf("-2.01118107"), mp.mpf("16.57502768"), mp.mpf("0.080592465")
    x = mp.mpf("19.33801")
    z = ((x / m) ** l - 1) / (l * s)
    print("# CDC row z at published P95 and its percentile")
    print(mp.nstr(z, 20), mp.nstr(100 * mp.ncdf(z), 20))


def logistic():
    # minimise sum softplus(t) - y t + (l2/2)|beta|^2, t = b0 + beta . x
    xs = [(0.0, 1.0), (1.0, 0.0), (2.0, 1.0), (3.0, 0.0), (1.0, 1.0), (2.0, 2.0), (0.5, 1.5)]
    ys = [1, 0, 0, 1, 0, 1, 1]
    l2 = mp.mpf("0.001")

    def grad(b0, b1, b2):
        g = [mp.mpf(0)] * 3
        for (x1, x2), y in zip(xs, ys):
            p = 1 / (1 + mp.e ** (-(b0 + b1 * x1 + b2 * x2)))
            r = p - y
            g[0] += r
            g[1] += r * x1
            g[2] += r * x2
        g[1] += l2 * b1
        g[2] += l2 * b2
        return g

    sol = mp.findroot(grad, (mp.mpf(0), mp.mpf(0), mp.mpf(0)), tol=mp.mpf("1e-40"))
    print("# logistic optimum (intercept, beta1, beta2)")
    print([mp.nstr(v, 20) for v in sol])


def boosted_stumps():
    # three rounds of second-order boosting with depth-1 trees, found by
    # enumerating every (feature, cut) partition and minimising the
    # regularised quadratic objective directly
    x1 = [1, 2, 3, 4, 5, 6, 7, 8]
    x2 = [3, 1, 4, 1, 5, 9, 2, 6]
    y = [0, 0, 1, 0, 1, 0, 1, 0]
    eta, lam = mp.mpf("0.3"), mp.mpf(1)
    n = len(y)
    rate = mp.mpf(sum(y)) / n
    f = [mp.log(rate / (1 - rate))] * n
    sig = lambda t: 1 / (1 + mp.e ** (-t))

    def loss(f):
        return sum(mp.log(1 + mp.e ** t) - yi * t for t, yi in zip(f, y)) / n

    def leaf_obj(idx, g, h):
        gs, hs = sum(g[i] for i in idx), sum(h[i] for i in idx)
        w = -gs / (hs + lam)
        return gs * w + (hs + lam) * w * w / 2, w

    losses = [loss(f)]
    for _ in range(3):
        p = [sig(t) for t in f]
        g = [pi - yi for pi, yi in zip(p, y)]
        h = [pi * (1 - pi) for pi in p]
        best_obj, w0 = leaf_obj(range(n), g, h)
        best = ("leaf", w0)
        for feat, col in enumerate((x1, x2)):
            for cut in sorted(set(col))[:-1]:
                left = [i for i in range(n) if col[i] <= cut]
                right = [i for i in range(n) if col[i] > cut]
                ol, wl = leaf_obj(left, g, h)
                orr, wr = leaf_obj(right, g, h)
                if ol + orr < best_obj - mp.mpf("1e-40"):
                    best_obj, best = ol + orr, (feat, cut, wl, wr)
        if best[0] == "leaf":
            step = [best[1]] * n
        else:
            feat, cut, wl, wr = best
            col = (x1, x2)[feat]
            step = [wl if col[i] <= cut else wr for i in range(n)]
            print(f"split feature {feat} at value {cut}, leaves {mp.nstr(wl, 20)} {mp.nstr(wr, 20)}")
        f = [fi + eta * s for fi, s in zip(f, step)]
        losses.append(loss(f))
    print("# boosted stumps: train log-loss per round, final probabilities")
    print([mp.nstr(v, 20) for v in losses])
    print([mp.nstr(sig(t), 20) for t in f])


def kmeans_grid():
    # all 2-cluster partitions of 3 points; minimum inertia by enumeration
    pts = [(0.0, 0.0), (1.0, 0.0), (5.0, 1.0)]
    best = None
    for lab in product([0, 1], repeat=3):
        if len(set(lab)) < 2:
            continue
        tot = mp.mpf(0)
        for c in (0, 1):
            mem = [pts[i] for i in range(3) if lab[i] == c]
            cx = sum(p[0] for p in mem) / len(mem)
            cy = sum(p[1] for p in mem) / len(mem)
            tot += sum((p[0] - cx) ** 2 + (p[1] - cy) ** 2 for p in mem)
        best = tot if best is None else min(best, tot)
    print("# 3-point 2-cluster minimum inertia", mp.nstr(best, 20))


if __name__ == "__main__":
    normal_cdf()
    cdc_row()
    logistic()
    boosted_stumps()
    kmeans_grid()
