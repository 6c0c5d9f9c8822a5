"""Exact counting of rectangles with exactly two vertices in a finite lattice set.

A rectangle {p, q, n, m} with p, q in the set and n outside it puts n on one of
three loci of the pair {p, q}:

* the line through p perpendicular to q - p (n adjacent to p),
* the line through q perpendicular to p - q (n adjacent to q),
* the circle with diameter pq (p, q opposite).

The number of such rectangles containing n is the total multiplicity of the loci
through n.  A point with more than ``threshold`` rectangles therefore either lies
on a single locus of multiplicity above ``threshold`` or on at least two distinct
loci, so all candidates come from pairwise locus intersections.

The set is handled as ``g * base`` with integer ``base`` of moderate size (|x| below
about 1e5); lattice points of the scaled plane are the points ``x`` of the base
plane with ``g*x`` integral.  Floating point is used only to screen candidates;
every reported incidence is confirmed in exact integer arithmetic.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numba
import numpy as np


@dataclass
class Loci:
    base: list  # base points as int tuples
    line_key: np.ndarray  # (L, 3) primitive normal (a, b) and offset c: a*x + b*y = c
    line_pt: np.ndarray  # index of a base point on each line
    line_owners: list  # per line: (i, j) pairs; the line passes through base[i] perpendicular to base[j]-base[i]
    circ_key: np.ndarray  # (C, 3): (sx, sy, pq) for |x|^2 - s.x + pq = 0
    circ_owners: list  # per circle: (i, j) diameters


def _primitive(dx, dy):
    g = math.gcd(dx, dy)
    a, b = dx // g, dy // g
    if a < 0 or (a == 0 and b < 0):
        a, b = -a, -b
    return a, b


def build_loci(base) -> Loci:
    pts = [(int(x), int(y)) for x, y in np.asarray(base).reshape(-1, 2).tolist()]
    lines: dict[tuple, list] = {}
    line_pt: dict[tuple, int] = {}
    circles: dict[tuple, list] = {}
    for i, p in enumerate(pts):
        for j, q in enumerate(pts):
            if i == j:
                continue
            a, b = _primitive(q[0] - p[0], q[1] - p[1])
            key = (a, b, a * p[0] + b * p[1])
            lines.setdefault(key, []).append((i, j))
            line_pt.setdefault(key, i)
            if i < j:
                ck = (p[0] + q[0], p[1] + q[1], p[0] * q[0] + p[1] * q[1])
                circles.setdefault(ck, []).append((i, j))
    lk = list(lines)
    ck = list(circles)
    return Loci(
        base=pts,
        line_key=np.array(lk, dtype=np.int64).reshape(-1, 3),
        line_pt=np.array([line_pt[k] for k in lk], dtype=np.int64),
        line_owners=[lines[k] for k in lk],
        circ_key=np.array(ck, dtype=np.int64).reshape(-1, 3),
        circ_owners=[circles[k] for k in ck],
    )


@numba.njit(cache=True)
def _mulmod(a, b, d):
    if a < 3037000499 and b < 3037000499:
        return (a * b) % d
    r = 0
    a %= d
    while b:
        if b & 1:
            r = (r + a) % d
        a = (2 * a) % d
        b >>= 1
    return r


@numba.njit(cache=True)
def _is_member(keys, x, y):
    k = x * 4294967296 + y
    i = np.searchsorted(keys, k)
    return i < keys.shape[0] and keys[i] == k


def _member_keys(pts):
    return np.sort(np.array([x * 4294967296 + y for x, y in pts], dtype=np.int64))


@numba.njit(cache=True)
def _ll_kernel(K, g, keys, act):
    """Pairs of lines meeting at a lattice point of the g-scaled plane."""
    n = K.shape[0]
    out_i = [0]
    out_j = [0]
    out_i.pop()
    out_j.pop()
    for i in range(n):
        a1, b1, c1 = K[i, 0], K[i, 1], K[i, 2]
        for j in range(i + 1, n):
            if not act[i] and not act[j]:
                continue
            a2, b2, c2 = K[j, 0], K[j, 1], K[j, 2]
            det = a1 * b2 - a2 * b1
            if det == 0:
                continue
            nx = c1 * b2 - c2 * b1
            ny = a1 * c2 - a2 * c1
            d = abs(det)
            rx = nx % d
            ry = ny % d
            if rx == 0 and ry == 0 and _is_member(keys, nx // det, ny // det):
                continue
            gd = g % d
            if _mulmod(gd, rx, d) == 0 and _mulmod(gd, ry, d) == 0:
                out_i.append(i)
                out_j.append(j)
    return out_i, out_j


@numba.njit(cache=True)
def _lc_kernel(P, W, S, PQ, g, tol_rel, keys, lact, cact):
    """Screen line/circle pairs for lattice intersections g*p + k*w with k integral.

    Returns (line, circle, k, flag): k is the nearest integer to a root; flag 1
    marks a near-tangent pair that needs exact treatment.
    """
    out_l = [0]
    out_c = [0]
    out_k = [0.0]
    out_f = [0]
    out_l.pop()
    out_c.pop()
    out_k.pop()
    out_f.pop()
    eps = 2.220446049250313e-16
    for i in range(P.shape[0]):
        px, py = P[i, 0], P[i, 1]
        wx, wy = W[i, 0], W[i, 1]
        A = wx * wx + wy * wy
        for j in range(S.shape[0]):
            if not lact[i] and not cact[j]:
                continue
            sx, sy = S[j, 0], S[j, 1]
            B = 2.0 * (px * wx + py * wy) - (sx * wx + sy * wy)
            C = px * px + py * py - (sx * px + sy * py) + PQ[j]
            disc = B * B - 4.0 * A * C
            mag = B * B + abs(4.0 * A * C) + 1.0
            if disc < -1e-12 * mag:
                continue
            if abs(disc) <= 1e-6 * mag:
                t0 = -B / (2.0 * A)
                if abs(t0 - math.floor(t0 + 0.5)) < 1e-9:
                    tr = int(math.floor(t0 + 0.5))
                    if _is_member(keys, int(px) + tr * int(wx), int(py) + tr * int(wy)):
                        continue
                out_l.append(i)
                out_c.append(j)
                out_k.append(0.0)
                out_f.append(1)
                continue
            sq = math.sqrt(disc)
            q = -0.5 * (B + sq) if B >= 0 else -0.5 * (B - sq)
            for r in range(2):
                if r == 0:
                    t = q / A
                elif q != 0:
                    t = C / q
                else:
                    continue
                k = t * g
                kr = math.floor(k + 0.5)
                if abs(t - math.floor(t + 0.5)) < 1e-9:
                    tr = int(math.floor(t + 0.5))
                    if _is_member(keys, int(px) + tr * int(wx), int(py) + tr * int(wy)):
                        continue
                if abs(k - kr) <= 1e-6 + tol_rel * eps * abs(k):
                    out_l.append(i)
                    out_c.append(j)
                    out_k.append(kr)
                    out_f.append(0)
    return out_l, out_c, out_k, out_f


@numba.njit(cache=True)
def _cc_kernel(S, PQ, g, tol_rel, keys, act):
    """Screen circle pairs: return (i, j, X, Y) with (X, Y) near g times an intersection."""
    out_i = [0]
    out_j = [0]
    out_x = [0.0]
    out_y = [0.0]
    out_i.pop()
    out_j.pop()
    out_x.pop()
    out_y.pop()
    eps = 2.220446049250313e-16
    n = S.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            if not act[i] and not act[j]:
                continue
            # radical line u.x = c
            ux = S[j, 0] - S[i, 0]
            uy = S[j, 1] - S[i, 1]
            if ux == 0 and uy == 0:
                continue
            c = PQ[j] - PQ[i]
            uu = ux * ux + uy * uy
            x0 = c * ux / uu
            y0 = c * uy / uu
            wx = -uy
            wy = ux
            hx = x0 - S[i, 0] / 2.0
            hy = y0 - S[i, 1] / 2.0
            r2 = (S[i, 0] ** 2 + S[i, 1] ** 2) / 4.0 - PQ[i]
            A = wx * wx + wy * wy
            B = 2.0 * (hx * wx + hy * wy)
            C = hx * hx + hy * hy - r2
            disc = B * B - 4.0 * A * C
            mag = B * B + abs(4.0 * A * C) + 1.0
            if disc < -1e-9 * mag:
                continue
            sq = math.sqrt(max(disc, 0.0))
            scale = abs(x0) + abs(y0) + math.sqrt(max(r2, 0.0)) + abs(S[i, 0]) + abs(S[i, 1]) + 1.0
            tol = 1e-6 + tol_rel * eps * g * scale
            for r in range(2):
                sg = 1.0 if r == 0 else -1.0
                t = (-B + sg * sq) / (2.0 * A)
                bx = x0 + t * wx
                by = y0 + t * wy
                if abs(bx - math.floor(bx + 0.5)) < 1e-7 and abs(by - math.floor(by + 0.5)) < 1e-7:
                    if _is_member(keys, int(math.floor(bx + 0.5)), int(math.floor(by + 0.5))):
                        continue
                X = (x0 + t * wx) * g
                Y = (y0 + t * wy) * g
                if abs(X - math.floor(X + 0.5)) <= tol and abs(Y - math.floor(Y + 0.5)) <= tol:
                    out_i.append(i)
                    out_j.append(j)
                    out_x.append(math.floor(X + 0.5))
                    out_y.append(math.floor(Y + 0.5))
    return out_i, out_j, out_x, out_y


def _on_circle(key, X, g):
    sx, sy, pq = (int(v) for v in key)
    return X[0] * X[0] + X[1] * X[1] - g * (sx * X[0] + sy * X[1]) + g * g * pq == 0


def _line_point(L: Loci, li: int, k: int, g: int):
    a, b, _ = (int(v) for v in L.line_key[li])
    p = L.base[int(L.line_pt[li])]
    return (g * p[0] - k * b, g * p[1] + k * a)


def _line_circle_exact(L: Loci, li, ci, g):
    a, b, _ = (int(v) for v in L.line_key[li])
    px, py = L.base[int(L.line_pt[li])]
    wx, wy = -b, a
    sx, sy, pq = (int(v) for v in L.circ_key[ci])
    A = wx * wx + wy * wy
    B = 2 * (px * wx + py * wy) - (sx * wx + sy * wy)
    C = px * px + py * py - (sx * px + sy * py) + pq
    D = B * B - 4 * A * C
    out = []
    if D < 0:
        return out
    r = math.isqrt(D)
    if r * r != D:
        return out
    for num in {-B + r, -B - r}:
        if (g * num) % (2 * A) == 0:
            k = g * num // (2 * A)
            out.append((g * px + k * wx, g * py + k * wy))
    return out


def incidences(L: Loci, g: int, line_act=None, circ_act=None) -> dict:
    """Map each lattice point of the scaled plane lying on two or more loci to the
    set of those loci, labelled ("L", index) or ("C", index).

    With activity masks only pairs containing an active locus are examined."""
    g = int(g)
    if line_act is None:
        line_act = np.ones(len(L.line_key), dtype=np.bool_)
    if circ_act is None:
        circ_act = np.ones(len(L.circ_key), dtype=np.bool_)
    hits: dict[tuple, set] = defaultdict(set)
    if len(L.line_key) > 1:
        keys = _member_keys(L.base)
        ii, jj = _ll_kernel(L.line_key, g, keys, line_act)
        for i, j in zip(ii, jj):
            a1, b1, c1 = (int(v) for v in L.line_key[i])
            a2, b2, c2 = (int(v) for v in L.line_key[j])
            det = a1 * b2 - a2 * b1
            X = ((g * (c1 * b2 - c2 * b1)) // det, (g * (a1 * c2 - a2 * c1)) // det)
            hits[X].update((("L", i), ("L", j)))
    if len(L.line_key) and len(L.circ_key):
        P = np.array([L.base[i] for i in L.line_pt], dtype=float)
        W = np.stack([-L.line_key[:, 1], L.line_key[:, 0]], axis=1).astype(float)
        S = L.circ_key[:, :2].astype(float)
        PQ = L.circ_key[:, 2].astype(float)
        for li, ci, k, flag in zip(*_lc_kernel(P, W, S, PQ, float(g), 64.0, _member_keys(L.base), line_act, circ_act)):
            if flag:
                for X in _line_circle_exact(L, li, ci, g):
                    hits[X].update((("L", li), ("C", ci)))
                continue
            for dk in (-1, 0, 1):
                X = _line_point(L, li, int(k) + dk, g)
                if _on_circle(L.circ_key[ci], X, g):
                    hits[X].update((("L", li), ("C", ci)))
    if len(L.circ_key) > 1:
        S = L.circ_key[:, :2].astype(float)
        PQ = L.circ_key[:, 2].astype(float)
        for i, j, x, y in zip(*_cc_kernel(S, PQ, float(g), 16.0, _member_keys(L.base), circ_act)):
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    X = (int(x) + dx, int(y) + dy)
                    if _on_circle(L.circ_key[i], X, g) and _on_circle(L.circ_key[j], X, g):
                        hits[X].update((("C", i), ("C", j)))
    return hits


def _rectangles(L: Loci, X, labels, g, is_high):
    rects = []
    for kind, idx in labels:
        owners = L.line_owners[idx] if kind == "L" else L.circ_owners[idx]
        for i, j in owners:
            p = (g * L.base[i][0], g * L.base[i][1])
            q = (g * L.base[j][0], g * L.base[j][1])
            if kind == "L":
                m = (X[0] + q[0] - p[0], X[1] + q[1] - p[1])
                rect = (p, q, m, X)  # cyclic order
            else:
                m = (p[0] + q[0] - X[0], p[1] + q[1] - X[1])
                rect = (p, X, q, m)
            if is_high is None or (is_high(X) and is_high(m)):
                rects.append(rect)
    return rects


def spreading_count(base, g: int = 1, is_high=None, threshold: int = 2, new_from: int | None = None):
    """Lattice points outside ``g*base`` on more than ``threshold`` rectangles that
    have exactly two vertices in ``g*base``.

    ``is_high`` filters rectangles whose two external vertices must both satisfy it
    (``None`` counts every rectangle).  With ``new_from`` set, only points on a locus
    of a pair involving a point of index >= new_from are examined (the earlier
    points are known to be clean).  Returns ``(violations, max_count)`` with
    violations a list of ``(point, rectangles)`` and max_count the largest count
    met at a point on two or more loci.
    """
    g = int(g)
    L = build_loci(base)
    members = {(g * x, g * y) for x, y in L.base}
    violations = []
    max_count = 0
    if new_from is None:
        line_act = np.ones(len(L.line_owners), dtype=np.bool_)
        circ_act = np.ones(len(L.circ_owners), dtype=np.bool_)
    else:
        line_act = np.array([any(i >= new_from or j >= new_from for i, j in o) for o in L.line_owners], dtype=np.bool_)
        circ_act = np.array([any(i >= new_from or j >= new_from for i, j in o) for o in L.circ_owners], dtype=np.bool_)

    # a single line of multiplicity above the threshold: every lattice point on it
    for li, owners in enumerate(L.line_owners):
        if len(owners) > threshold and line_act[li]:
            for k in range(1, 64):
                X = _line_point(L, li, k, g)
                if X in members:
                    continue
                rects = _rectangles(L, X, [("L", li)], g, is_high)
                if len(rects) > threshold:
                    violations.append((X, rects))
                    break

    for X, labels in sorted(incidences(L, g, line_act, circ_act).items()):
        if X in members:
            continue
        mult = sum(len(L.line_owners[i]) if k == "L" else len(L.circ_owners[i]) for k, i in labels)
        if mult <= threshold and mult <= max_count:
            continue
        rects = _rectangles(L, X, sorted(labels), g, is_high)
        max_count = max(max_count, len(rects))
        if len(rects) > threshold:
            violations.append((X, rects))
    return violations, max_count


def brute_spreading_count(points, radius: int, is_high=None):
    """Oracle: count rectangles with two vertices in ``points`` for every lattice
    point of the square of the given radius (outside the set)."""
    pts = [tuple(map(int, p)) for p in points]
    members = set(pts)
    counts = defaultdict(int)
    m = len(pts)
    for x in range(-radius, radius + 1):
        for y in range(-radius, radius + 1):
            n = (x, y)
            if n in members:
                continue
            c = 0
            for i in range(m):
                for j in range(m):
                    if i == j:
                        continue
                    p, q = pts[i], pts[j]
                    if (n[0] - p[0]) * (q[0] - p[0]) + (n[1] - p[1]) * (q[1] - p[1]) == 0:
                        mm = (n[0] + q[0] - p[0], n[1] + q[1] - p[1])
                        if is_high is None or (is_high(n) and is_high(mm)):
                            c += 1
                    if i < j and (n[0] - p[0]) * (n[0] - q[0]) + (n[1] - p[1]) * (n[1] - q[1]) == 0:
                        mm = (p[0] + q[0] - n[0], p[1] + q[1] - n[1])
                        if is_high is None or (is_high(n) and is_high(mm)):
                            c += 1
            if c:
                counts[n] = c
    return dict(counts)
