"""Independent reference computations used only by the tests."""
import itertools

import numpy as np
import scipy.linalg
from scipy import integrate


def _abs_power_integral(f0, f1, a, b, p):
    """int_a^b |l|^p for the linear l with l(a) = f0, l(b) = f1."""
    if b <= a:
        return 0.0
    if f0 * f1 < 0:
        m = a + f0 / (f0 - f1) * (b - a)
        return _abs_power_integral(f0, 0.0, a, m, p) + _abs_power_integral(0.0, f1, m, b, p)
    g0, g1 = sorted((abs(f0), abs(f1)))
    if g1 == 0.0:
        return 0.0
    if g0 == 0.0:
        return (b - a) * g1 ** p / (p + 1)
    d = g1 / g0 - 1.0
    # (r^{p+1} - 1) / (r - 1) without cancellation for r near 1
    ratio = np.expm1((p + 1) * np.log1p(d)) / d if d > 0 else p + 1
    return (b - a) * g0 ** p * ratio / (p + 1)


def difference_profile(xn, u, z, p):
    """Phi(z) = int |u(y+z) - u(y)|^p dy over y, y+z in [x0, xN]."""
    lo, hi = xn[0], xn[-1] - z
    if hi <= lo:
        return 0.0
    br = np.unique(np.concatenate([xn, xn - z, [lo, hi]]))
    br = br[(br >= lo) & (br <= hi)]
    tot = 0.0
    for a, b in zip(br[:-1], br[1:]):
        fa = np.interp(a + z, xn, u) - np.interp(a, xn, u)
        fb = np.interp(b + z, xn, u) - np.interp(b, xn, u)
        tot += _abs_power_integral(fa, fb, a, b, p)
    return tot


def seminorm_omega(xn, u, s, p):
    """[u]^p over Omega x Omega for piecewise-linear u on a uniform grid, via z = x - y.

    For p = 2, Phi is a cubic polynomial between multiples of h and is
    integrated exactly against z^{-(1+sp)}; otherwise adaptive quadrature is
    used, with z = h t^{1/(p-sp)} on the first interval to remove the
    endpoint singularity.
    """
    L = xn[-1] - xn[0]
    h = xn[1] - xn[0]
    sp = s * p
    N = int(round(L / h))
    tot = 0.0
    for k in range(N):
        a, b = k * h, (k + 1) * h
        if p == 2.0:
            zs = a + h * np.array([0.2, 0.4, 0.6, 0.8])
            phis = [difference_profile(xn, u, z, 2.0) for z in zs]
            c = np.linalg.solve(np.vander(zs, 4, increasing=True), phis)
            if k == 0:
                c[:2] = 0.0
            for j_, cj in enumerate(c):
                if cj == 0.0:
                    continue
                e = j_ - sp
                tot += cj * (b ** e - a ** e) / e
        elif k == 0:
            beta = 1.0 / (p - sp)

            def g(t):
                z = h * t ** beta
                return difference_profile(xn, u, z, p) * z ** (-(1 + sp)) * beta * h * t ** (beta - 1)

            tot += integrate.quad(g, 0.0, 1.0, epsabs=1e-15, epsrel=1e-12, limit=400)[0]
        else:
            tot += integrate.quad(lambda z: difference_profile(xn, u, z, p) * z ** (-(1 + sp)),
                                  a, b, epsabs=1e-15, epsrel=1e-12, limit=400)[0]
    return 2.0 * tot


def exterior_term(xn, u, intervals, s, p):
    """2 int_Omega |u(x)|^p int_D |x-y|^{-(1+sp)} dy dx for D outside Omega.

    The inner integral is (|x-y_near|^{-sp} - |x-y_far|^{-sp}) / sp; a
    singular endpoint shared with D is handled with an algebraic weight.
    """
    sp = s * p
    tot = 0.0
    for lo, hi in intervals:
        for a, b in zip(xn[:-1], xn[1:]):
            ua, ub = np.interp(a, xn, u), np.interp(b, xn, u)

            def U(x):
                return abs(ua + (ub - ua) * (x - a) / (b - a)) ** p

            near = lo if lo >= b else hi
            for y in (lo, hi):
                if y in (a, b):
                    # |x - y|^{-sp} singular at an element end; if u vanishes
                    # there, |u|^p = c |x - y|^p is folded into the weight
                    uy = ua if y == a else ub
                    e = -sp if uy != 0.0 else p - sp
                    if e <= -1.0:
                        return np.inf
                    f = U if uy != 0.0 else (lambda x: U(x) / abs(x - y) ** p if x != y else
                                               abs((ub - ua) / (b - a)) ** p)
                    wv = (0.0, e) if y == b else (e, 0.0)
                    val = integrate.quad(f, a, b, weight="alg", wvar=wv,
                                         epsabs=1e-16, epsrel=1e-14)[0]
                else:
                    val = integrate.quad(lambda x: U(x) * abs(x - y) ** (-sp), a, b,
                                         epsabs=1e-16, epsrel=1e-14)[0]
                tot += (val if y == near else -val) / sp
    return 2.0 * tot


def dense_first_eig(A, M):
    """Smallest generalized eigenpair of symmetric (A, M)."""
    w, V = scipy.linalg.eigh(A, M, subset_by_index=[0, 0])
    v = V[:, 0]
    return float(w[0]), v * np.sign(v.sum())


def enumerate_masks(cells, m):
    return list(itertools.combinations(cells, m))
