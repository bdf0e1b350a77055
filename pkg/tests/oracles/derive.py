"""Independent oracles for the frozen constants in the test suite.

Run ``python tests/oracles/derive.py`` to regenerate. Uses mpmath / plain
Python only (no package code), so the frozen numbers do not share code paths
with the implementation they check.
"""
import itertools
import math

import mpmath as mp

mp.mp.dps = 40
C = mp.mpf(1500)
ZS, ZR = mp.mpf(1), mp.mpf(29)


def tdoa(r):
    return (mp.sqrt(r ** 2 + (ZR + ZS) ** 2) - mp.sqrt(r ** 2 + (ZR - ZS) ** 2)) / C


def main():
    # transit kinematics: start=end=500, cpa=10, speed=5, interval 0.1
    dur = 2 * mp.sqrt(500 ** 2 - 10 ** 2) / 5
    print("track duration s", mp.nstr(dur, 12))
    print("track points", int(mp.floor(dur / mp.mpf("0.1"))) + 1)

    # image-source delays at r=0 and r=100
    print("r=0 direct ms", mp.nstr(28 / C * 1000, 12), "surface ms", mp.nstr(30 / C * 1000, 12))
    print("r=0 bottom-reflected path m", 30)
    print("r=100 tdoa ms", mp.nstr(tdoa(100) * 1000, 12))

    # Lloyd's mirror nulls for coefficient -1: phase 2*pi*f*dL/c + pi = odd*pi
    dl = 2
    print("null spacing Hz", C / dl, "first null Hz", 0)

    # failure range: tdoa(r) = 21 / 250000
    tau = mp.mpf(21) / 250000
    r = mp.findroot(lambda x: tdoa(x) - tau, 450)
    print("failure range m", mp.nstr(r, 12))
    for rr in (0, 10, 50, 100, 200, 500):
        print("tdoa", rr, mp.nstr(tdoa(rr), 15))

    # AP hand example
    scores, labels = [0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]
    order = sorted(range(4), key=lambda i: -scores[i])
    hits, tot = 0, 0
    for k, i in enumerate(order, 1):
        if labels[i]:
            hits += 1
            tot += mp.mpf(hits) / k
    print("AP example", mp.nstr(tot / hits, 12))
    # all-tied scores, ids 0..5, labels by id: ordering is ascending id
    lab = [0, 1, 1, 0, 0, 1]
    hits, tot = 0, mp.mpf(0)
    for k, l in enumerate(lab, 1):
        if l:
            hits += 1
            tot += mp.mpf(hits) / k
    print("AP tied example", mp.nstr(tot / hits, 15))

    # SGD two steps, scalar w0=1, g=0.5 const, lr=0.1, mu=0.9, wd=0.01
    w, v = mp.mpf(1), mp.mpf(0)
    for _ in range(2):
        v = mp.mpf("0.9") * v - mp.mpf("0.1") * (mp.mpf("0.5") + mp.mpf("0.01") * w)
        w = w + v
        print("sgd step w", mp.nstr(w, 15), "v", mp.nstr(v, 15))

    # Hann (periodic, N) at exact bin centre: DFT of window = N/2 at 0, -N/4 at +-1
    main, side = mp.mpf(1) / 4, mp.mpf(1) / 16
    print("hann bin-pair fraction", mp.nstr(main / (main + 2 * side), 12))
    # Hann ENBW in bins: N*sum(w^2)/sum(w)^2 = 1.5
    N = 8192
    w2 = mp.fsum((mp.mpf(1) / 2 - mp.cos(2 * mp.pi * n / N) / 2) ** 2 for n in range(N))
    w1 = mp.fsum(mp.mpf(1) / 2 - mp.cos(2 * mp.pi * n / N) / 2 for n in range(N))
    print("hann enbw", mp.nstr(N * w2 / w1 ** 2, 12), "mean w^2", mp.nstr(w2 / N, 12))

    # lifter quefrencies
    print("q21 us", mp.nstr(mp.mpf(21) / 250000 * 1e6, 15), "q350 ms",
          mp.nstr(mp.mpf(350) / 250000 * 1e3, 15))
    # echo delay 0.4 ms at 250 kHz
    print("echo index", mp.mpf("0.4e-3") * 250000)
    # architecture chain
    for m, n in ((330, 8), (330, 1), (40, 2)):
        h1 = m - 9
        print("shapes", m, n, h1, h1 - 9, h1 - 18, (h1 - 18) * 48)


if __name__ == "__main__":
    main()
