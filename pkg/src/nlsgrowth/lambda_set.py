"""Resonant generation sets: construction, blow-up, certification and growth sums.

Condition names follow the usual numbering: "1".."8" for closure, spouse/children,
sibling/parents, nondegeneracy, faithfulness, no high spreading, no low resonance,
no low spreading, plus "9p" (n1.n2 != 0) and "10p" ((n2 - n1).n1 != 0) for the
base set.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from . import _loci
from .modes import ConvPotential, Freq, freq, norm_sq
from .resonance import DEFAULT_ETA, _check_eta, kappa0 as kappa0_of

CONDITIONS = ("1", "2", "3", "4", "5", "6", "7", "8", "9p", "10p")
BASE_CONDITIONS = ("1", "2", "3", "4", "5", "6", "9p", "10p")
MAX_N = 7


class StructuralError(ValueError):
    pass


class SearchBudgetExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class Family:
    p1: Freq
    p2: Freq
    c1: Freq
    c2: Freq
    j: int  # parents in generation j (1-based), children in j + 1

    def scaled(self, C: int) -> "Family":
        s = lambda n: (C * n[0], C * n[1])
        return Family(s(self.p1), s(self.p2), s(self.c1), s(self.c2), self.j)


@dataclass
class GenerationSet:
    generations: list  # list of lists of Freq
    families: list  # list of Family
    kappa0: int = 0
    eta: float = DEFAULT_ETA

    @property
    def N(self) -> int:
        return len(self.generations)

    def modes(self) -> list[Freq]:
        return [n for g in self.generations for n in g]

    def generation_of(self) -> dict:
        return {n: j + 1 for j, g in enumerate(self.generations) for n in g}

    def max_radius(self) -> float:
        return max(math.sqrt(norm_sq(n)) for n in self.modes())

    def min_radius(self) -> float:
        return min(math.sqrt(norm_sq(n)) for n in self.modes())

    def scale(self) -> int:
        """gcd of all coordinates."""
        return reduce(math.gcd, (abs(c) for n in self.modes() for c in n), 0)

    def to_json(self) -> dict:
        return {
            "N": self.N,
            "kappa0": self.kappa0,
            "eta": self.eta,
            "generations": [[list(n) for n in g] for g in self.generations],
            "families": [{"p": [list(f.p1), list(f.p2)], "c": [list(f.c1), list(f.c2)], "j": f.j} for f in self.families],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GenerationSet":
        gens = [[freq(*n) for n in g] for g in doc["generations"]]
        fams = [Family(freq(*f["p"][0]), freq(*f["p"][1]), freq(*f["c"][0]), freq(*f["c"][1]), int(f["j"]))
                for f in doc["families"]]
        S = cls(gens, fams, int(doc.get("kappa0", 0)), float(doc.get("eta", DEFAULT_ETA)))
        if "N" in doc and doc["N"] != S.N:
            raise StructuralError(f"declared N={doc['N']} but {S.N} generations given")
        return S

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def reference_set(N: int, certified: bool = True) -> GenerationSet:
    """Shipped sets for N = 3, 4, 5: a base set found by ``construct_base`` and its
    certified blow-up against ``decaying_potential()``."""
    from importlib.resources import files

    name = f"{'certified' if certified else 'base'}_N{N}.json"
    path = files("nlsgrowth") / "data" / name
    if not path.is_file():
        raise FileNotFoundError(f"no reference set for N={N}")
    return GenerationSet.from_json(json.loads(path.read_text()))


def load_set(path) -> GenerationSet:
    with open(path) as fh:
        return GenerationSet.from_json(json.load(fh))


def _is_rectangle(p1, c1, p2, c2) -> bool:
    """p1, c1, p2, c2 in cyclic order with right angle at c1."""
    if (p1[0] - c1[0] + p2[0] - c2[0], p1[1] - c1[1] + p2[1] - c2[1]) != (0, 0):
        return False
    return norm_sq(p1) - norm_sq(c1) + norm_sq(p2) - norm_sq(c2) == 0


def structural_errors(S: GenerationSet) -> list[str]:
    errs = []
    if S.N < 2:
        errs.append(f"need at least 2 generations, got {S.N}")
    seen = {}
    for j, g in enumerate(S.generations):
        if len(set(g)) != len(g):
            errs.append(f"generation {j + 1} has repeated modes")
        for n in g:
            if n in seen and seen[n] != j:
                errs.append(f"mode {n} in generations {seen[n] + 1} and {j + 1}")
            seen[n] = j
            if norm_sq(n) < S.kappa0 ** 2:
                errs.append(f"mode {n} lies inside B(kappa0={S.kappa0})")
    gen = S.generation_of()
    for f in S.families:
        if not 1 <= f.j < S.N:
            errs.append(f"family {f} has generation index out of range")
            continue
        if gen.get(f.p1) != f.j or gen.get(f.p2) != f.j:
            errs.append(f"family {f}: parents not in generation {f.j}")
        if gen.get(f.c1) != f.j + 1 or gen.get(f.c2) != f.j + 1:
            errs.append(f"family {f}: children not in generation {f.j + 1}")
        if len({f.p1, f.p2, f.c1, f.c2}) != 4 or not _is_rectangle(f.p1, f.c1, f.p2, f.c2):
            errs.append(f"family {f} is not a rectangle")
    return errs


# ----------------------------------------------------------------------------
# verification


@dataclass
class ConditionReport:
    results: dict = field(default_factory=dict)  # name -> {"pass", "count", "witness"}
    structural: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.structural and all(r["pass"] for r in self.results.values())

    def failed(self) -> list[str]:
        return [k for k, r in self.results.items() if not r["pass"]]

    def to_json(self) -> dict:
        return {"passed": self.passed, "structural": self.structural, "conditions": self.results, "stats": self.stats}


def _upscale(x, g):
    if isinstance(x, tuple) and len(x) == 2 and all(isinstance(c, int) for c in x):
        return (g * x[0], g * x[1])
    if isinstance(x, (tuple, list)):
        return type(x)(_upscale(y, g) for y in x)
    return x


def _record(report, name, witnesses, count=None, g=1):
    w = _upscale(witnesses[0], g) if witnesses else None
    report.results[name] = {
        "pass": not witnesses,
        "count": len(witnesses) if count is None else count,
        "witness": _jsonable(w),
    }


def _jsonable(x):
    if isinstance(x, tuple) and len(x) == 2 and all(isinstance(c, int) for c in x):
        return [x[0], x[1]]
    if isinstance(x, (tuple, list)):
        return [_jsonable(y) for y in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def _rectangles_within(pts: list) -> list[tuple]:
    """Rectangles (a, b, c, d) in cyclic order with a, b, c in ``pts`` (right angle
    at b); d = a - b + c may or may not be in ``pts``."""
    P = np.array(pts, dtype=np.int64)
    if np.abs(P).max(initial=0) > 10 ** 8:
        raise ValueError("base coordinates too large for exact int64 dot products")
    out = []
    for ib, b in enumerate(pts):
        D = P - P[ib]
        dots = D @ D.T
        ii, kk = np.nonzero(np.triu(dots == 0, 1))
        for i, k in zip(ii.tolist(), kk.tolist()):
            if i == ib or k == ib:
                continue
            a, c = pts[i], pts[k]
            out.append((a, b, c, (a[0] - b[0] + c[0], a[1] - b[1] + c[1])))
    return out


def _family_key(f: Family):
    return frozenset((frozenset((f.p1, f.p2)), frozenset((f.c1, f.c2))))


def _divide(S: GenerationSet, g: int) -> GenerationSet:
    d = lambda n: (n[0] // g, n[1] // g)
    gens = [[d(n) for n in gg] for gg in S.generations]
    fams = [Family(d(f.p1), d(f.p2), d(f.c1), d(f.c2), f.j) for f in S.families]
    return GenerationSet(gens, fams, S.kappa0, S.eta)


def _tail_slack(V: ConvPotential, modes) -> float:
    """Largest possible contribution of unstored coefficients to a divisor."""
    return math.fsum(V.bound(n) for n in modes if n not in V.coeffs)


def _low_points(k0: int) -> list[Freq]:
    return [(x, y) for x in range(-k0, k0 + 1) for y in range(-k0, k0 + 1) if x * x + y * y < k0 * k0]


def verify(S: GenerationSet, V: ConvPotential, box_margin: int = 0, spreading_threshold: int = 2) -> ConditionReport:
    """Check conditions 1-8, 9p and 10p.

    Conditions 1-6, 9p and 10p are invariant under multiplying the set by an
    integer, so they are checked on the set divided by the gcd of its coordinates.
    Condition 6 counts, for every lattice point outside the set, the rectangles
    through it with two vertices in the set and two high vertices outside; the
    locus method in ``_loci`` covers the whole lattice, which contains the box of
    radius 3 max|n| + box_margin where such rectangles live.
    """
    if box_margin < 0:
        raise ValueError("box_margin must be non-negative")
    _check_eta(S.eta)
    report = ConditionReport()
    report.structural = structural_errors(S)
    if report.structural:
        return report
    k0, eta = S.kappa0, S.eta
    g = S.scale() or 1
    B = _divide(S, g)
    pts = B.modes()
    members = set(pts)
    gen = B.generation_of()
    N = B.N

    rects = _rectangles_within(pts)
    _record(report, "1", [r for r in rects if r[3] not in members], g=g)

    # nuclear families derived from the geometry, not from the stored list
    derived = {}
    for a, b, c, d in rects:
        if d not in members:
            continue
        for p1, p2, c1, c2 in ((a, c, b, d), (b, d, a, c)):
            j = gen[p1]
            if gen[p2] == j and gen[c1] == j + 1 and gen[c2] == j + 1:
                derived[frozenset((frozenset((p1, p2)), frozenset((c1, c2))))] = (p1, p2, c1, c2, j)
    fams = list(derived.values())
    spouses, children, siblings, parents = {}, {}, {}, {}
    for p1, p2, c1, c2, j in fams:
        for p, q in ((p1, p2), (p2, p1)):
            spouses.setdefault(p, []).append(q)
            children.setdefault(p, []).append((c1, c2))
        for c, s in ((c1, c2), (c2, c1)):
            siblings.setdefault(c, []).append(s)
            parents.setdefault(c, []).append((p1, p2))
    w2 = [(n, spouses.get(n, [])) for n in pts if gen[n] < N and len(spouses.get(n, [])) != 1]
    w3 = [(n, siblings.get(n, [])) for n in pts if gen[n] > 1 and len(siblings.get(n, [])) != 1]
    _record(report, "2", w2, g=g)
    _record(report, "3", w3, g=g)
    w4 = [(n, spouses[n][0]) for n in pts
          if len(spouses.get(n, [])) == 1 and len(siblings.get(n, [])) == 1 and spouses[n][0] == siblings[n][0]]
    _record(report, "4", w4, g=g)

    fam_keys = set(derived)
    w5 = {}
    for a, b, c, d in rects:
        key = frozenset((frozenset((a, c)), frozenset((b, d))))
        if d in members and key not in fam_keys:
            w5.setdefault(key, (a, b, c, d))
    w5 = [tuple((g * x, g * y) for x, y in r) for r in w5.values()]
    _record(report, "5", w5)

    listed = {_family_key(_divide_family(f, g)) for f in S.families}
    if listed != fam_keys:
        report.structural.append("stored families differ from the nuclear families of the geometry")

    # lattice points of the scaled set are the points of the base loci with denominator dividing g
    is_high = (lambda X: norm_sq(X) >= k0 * k0) if k0 else None
    viol, max_count = _loci.spreading_count(np.array(pts, dtype=np.int64), g, is_high, threshold=spreading_threshold)
    report.results["6"] = {"pass": not viol, "count": len(viol), "max_count": max_count,
                           "witness": _jsonable(viol[0] if viol else None)}

    full = S.modes()
    w7, w8 = _low_conditions(full, set(full), V, k0, eta)
    _record(report, "7", w7)
    _record(report, "8", w8)

    w9, w10 = [], []
    for i, a in enumerate(pts):
        for k, b in enumerate(pts):
            if i == k:
                continue
            if i < k and a[0] * b[0] + a[1] * b[1] == 0:
                w9.append((a, b))
            if (b[0] - a[0]) * a[0] + (b[1] - a[1]) * a[1] == 0:
                w10.append((a, b))
    _record(report, "9p", [tuple((g * x, g * y) for x, y in w) for w in w9])
    _record(report, "10p", [tuple((g * x, g * y) for x, y in w) for w in w10])

    report.stats = {
        "N": S.N,
        "modes_per_generation": [len(x) for x in S.generations],
        "scale": g,
        "min_radius": S.min_radius(),
        "max_radius": S.max_radius(),
        "box_radius": 3 * S.max_radius() + box_margin,
        "rectangles": len(rects),
        "nuclear_families": len(fams),
        "max_spreading_count": max_count,
    }
    return report


def _divide_family(f: Family, g: int) -> Family:
    d = lambda n: (n[0] // g, n[1] // g)
    return Family(d(f.p1), d(f.p2), d(f.c1), d(f.c2), f.j)


def _rho_exact(t, V: ConvPotential):
    n1, n2, n3, n4 = t
    asq = norm_sq(n1) - norm_sq(n2) + norm_sq(n3) - norm_sq(n4)
    return asq + math.fsum((V.v(n1), -V.v(n2), V.v(n3), -V.v(n4)))


def _near_resonant(t, V, eta) -> bool:
    """|rho| <= eta for some admissible value of the unstored coefficients."""
    return abs(_rho_exact(t, V)) <= eta + _tail_slack(V, t)


def _low_conditions(pts, members, V, k0, eta):
    """Witness lists for conditions 7 and 8.

    7: a tuple with three set modes and a low mode.  Writing it as (a, b, c, d) with
       d = a - b + c covers every slot of the low mode.
    8: two set modes and two outside modes, one of them low.  Up to trivial
       permutations and reversal the set modes sit either in slots 1 and 3 (the
       outside pair sums to their sum) or in slots 2 and 3 (tuple (m, a, b, l) with
       l = m - a + b); the low mode is taken as m, the mirrored case by swapping
       a and b.
    """
    w7, w8 = [], []
    if k0 <= 0:
        return w7, w8
    low = _low_points(k0)
    P = np.array(pts, dtype=np.int64)
    # float screening: a tuple is a candidate only if its divisor could be small
    Pf = P.astype(float)
    sq = (Pf ** 2).sum(1)
    scale_tol = 1e-9
    lows = np.array(low, dtype=np.int64)
    for ia, a in enumerate(pts):
        d = P[ia] - P[:, None, :] + P[None, :, :]  # d[b, c] = a - b + c
        hit = (np.abs(d[..., 0]) < k0) & (np.abs(d[..., 1]) < k0)
        for ib, ic in zip(*np.nonzero(hit)):
            dd = (int(d[ib, ic, 0]), int(d[ib, ic, 1]))
            if norm_sq(dd) >= k0 * k0:
                continue
            t = (a, pts[ib], pts[ic], dd)
            if _near_resonant(t, V, eta):
                w7.append(t)
    for ia, a in enumerate(pts):
        for ib in range(ia, len(pts)):
            b = pts[ib]
            s = (a[0] + b[0], a[1] + b[1])
            # slots 1 and 3: (a, m, b, l) with m + l = a + b, m low
            base = sq[ia] + sq[ib]
            for m in low:
                l = (s[0] - m[0], s[1] - m[1])
                if l in members:
                    continue
                approx = base - (m[0] ** 2 + m[1] ** 2) - (float(l[0]) ** 2 + float(l[1]) ** 2)
                if abs(approx) > scale_tol * max(base, 1.0) + 4 * eta + 1:
                    continue
                t = (a, m, b, l)
                if (a != l and b != l) and _near_resonant(t, V, eta):
                    w8.append(t)
        for ib, b in enumerate(pts):
            if ib == ia:
                continue
            # slots 2 and 3: (m, a, b, l) with l = m - a + b, m low
            base = -sq[ia] + sq[ib]
            for m in low:
                l = (m[0] - a[0] + b[0], m[1] - a[1] + b[1])
                if l in members:
                    continue
                approx = (m[0] ** 2 + m[1] ** 2) + base - (float(l[0]) ** 2 + float(l[1]) ** 2)
                if abs(approx) > scale_tol * max(sq[ia] + sq[ib], 1.0) + 4 * eta + 1:
                    continue
                t = (m, a, b, l)
                if m != l and b != l and _near_resonant(t, V, eta):
                    w8.append(t)
    return w7, w8


# ----------------------------------------------------------------------------
# blow-up constants


def blow_up(S: GenerationSet, C: int) -> GenerationSet:
    C = int(C)
    if C < 1:
        raise ValueError("blow-up factor must be >= 1")
    s = lambda n: (C * n[0], C * n[1])
    return GenerationSet([[s(n) for n in g] for g in S.generations], [f.scaled(C) for f in S.families], S.kappa0, S.eta)


def compute_C1(kappa0: int, v_norm: float) -> int:
    return math.ceil(kappa0 ** 2 + 4 * v_norm + 1)


def compute_C2(kappa0: int, eta: float, v_norm: float, C1: int, radius_bound: float) -> int:
    return math.ceil(4 * (kappa0 + 2 * eta + 8 * v_norm + 1) * C1 * radius_bound)


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % p == 0:
            return n == p
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):  # deterministic below 3.3e24
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def next_prime(n: int) -> int:
    """Smallest prime >= n."""
    n = max(int(n), 2)
    while not _is_prime(n):
        n += 1
    return n


def certify_full(S_base: GenerationSet, V: ConvPotential, eta: float | None = None, box_margin: int = 0):
    """Blow up by C1 and then C2 and verify conditions 1-8 against V.

    C2 is taken as the smallest prime not below the formula value, i.e. the
    formula evaluated at a radius bound R' >= max|n|, so that the second blow-up
    adds no common divisor with the geometry of the base set.
    """
    eta = S_base.eta if eta is None else eta
    _check_eta(eta)
    base = GenerationSet(S_base.generations, S_base.families, 0, eta)
    pre = verify(base, V, box_margin)
    bad = [c for c in BASE_CONDITIONS if c in pre.results and not pre.results[c]["pass"]]
    if pre.structural or bad:
        pre.stats["stage"] = "base"
        return base, pre
    k0 = kappa0_of(V)
    C1 = compute_C1(k0, V.hs0_norm)
    S1 = blow_up(base, C1)
    R = S1.max_radius()
    C2_formula = compute_C2(k0, eta, V.hs0_norm, C1, R)
    C2 = next_prime(C2_formula)
    S2 = blow_up(S1, C2)
    S2.kappa0 = k0
    report = verify(S2, V, box_margin)
    report.stats.update(kappa0=k0, C1=C1, C2=C2, C2_formula=C2_formula, radius_bound=R * C2 / C2_formula, stage="certified")
    return S2, report


# ----------------------------------------------------------------------------
# growth sums


def growth_stats(S: GenerationSet, s: float) -> dict:
    """S_j = sum over generation j of |n|^(2s); ratio S_{N-1}/S_3 and its target."""
    if not s > 1:
        raise ValueError("s must exceed 1")
    if float(s).is_integer():
        k = int(s)
        sums = [sum(norm_sq(n) ** k for n in g) for g in S.generations]
    else:
        sums = [math.fsum(float(norm_sq(n)) ** s for n in g) for g in S.generations]
    N = S.N
    out = {"s": s, "S": sums, "ratio": None, "bound": None, "meets_bound": None}
    if N >= 4:
        ratio = sums[N - 2] / sums[2]
        bound = 0.5 * 2 ** ((s - 1) * (N - 4))
        out.update(ratio=float(ratio), bound=bound, meets_bound=bool(ratio >= bound))
    else:
        out["note"] = "ratio undefined for N < 4"
    return out


# ----------------------------------------------------------------------------
# base construction


def _shape_ok(g: int, h: int) -> bool:
    """Single family with sides g*u and h*i*u is free of structural spreading."""
    for u in ((1, 0), (2, 1), (3, 2), (5, 3), (4, 1)):
        t = (g * u[0], g * u[1])
        s = (-h * u[1], h * u[0])
        P = np.array([(0, 0), t, (t[0] + s[0], t[1] + s[1]), s]) + np.array([7, 3])
        if _loci.spreading_count(P, 1)[0]:
            return False
    return True


_SHAPES_CACHE: dict = {}


def family_shapes(wmax: int = 300) -> list[tuple[int, int]]:
    """Coprime side ratios (g, h) with g^2 + h^2 <= wmax, sorted by g^2 + h^2."""
    if wmax not in _SHAPES_CACHE:
        r = math.isqrt(wmax)
        shapes = [(g, h) for g in range(1, r + 1) for h in range(-r, r + 1)
                  if h and math.gcd(g, abs(h)) == 1 and g * g + h * h <= wmax and _shape_ok(g, h)]
        _SHAPES_CACHE[wmax] = sorted(shapes, key=lambda w: (w[0] ** 2 + w[1] ** 2, w))
    return _SHAPES_CACHE[wmax]


def _clean(pts, scale, new_from=None) -> bool:
    return not _loci.spreading_count(np.array(pts, dtype=np.int64), scale, new_from=new_from)[0]


def _child_options(p, q, shapes, scale, spread: int = 0):
    """Child pairs completing a rectangle over the diagonal p-q.

    d = q - p is divided by the Gaussian integer w = g + ih; with u = d / w the
    children are p + g*u and q - g*u.  Options come longest primitive side first
    (chance lattice crossings of the side lines are then rare); ``spread`` +1 or -1
    instead orders the long-sided options by decreasing or increasing
    |c1|^4 + |c2|^4.
    """
    d = (q[0] - p[0], q[1] - p[1])
    out, seen = [], set()
    for g, h in shapes:
        nw = g * g + h * h
        re = d[0] * g + d[1] * h
        im = d[1] * g - d[0] * h
        if re % nw or im % nw:
            continue
        u = (re // nw, im // nw)
        c1 = (p[0] + g * u[0], p[1] + g * u[1])
        c2 = (q[0] - g * u[0], q[1] - g * u[1])
        key = frozenset((c1, c2))
        if key in seen or (0, 0) in key:
            continue
        if not _clean([p, c1, q, c2], scale):
            continue
        seen.add(key)
        gu = math.gcd(*u)
        out.append(((u[0] * u[0] + u[1] * u[1]) // (gu * gu), norm_sq(c1) ** 2 + norm_sq(c2) ** 2, (c1, c2)))
    if not out:
        return []
    if spread:
        longest = max(o[0] for o in out)
        out = [o for o in out if o[0] * 64 >= longest]
        out.sort(key=lambda o: -spread * o[1])
    else:
        out.sort(key=lambda o: -o[0])
    return [o[2] for o in out]


def _perfect_matching(nodes, adj, rng, taken, accept, budget, chosen=()):
    """Randomised backtracking over perfect matchings.

    ``accept(chosen, option)`` vets each new child pair given the children already
    placed, and ``budget`` caps the number of vetted choices."""
    if not nodes:
        return []
    p = nodes[0]
    qs = [q for q in nodes[1:] if (p, q) in adj]
    rng.shuffle(qs)
    for q in qs:
        for o in adj[(p, q)]:
            if set(o) & taken:
                continue
            if budget[0] <= 0:
                return None
            budget[0] -= 1
            if not accept(chosen, o):
                continue
            rest = _perfect_matching([x for x in nodes[1:] if x != q], adj, rng, taken | set(o), accept, budget,
                                     chosen + tuple(o))
            if rest is not None:
                return [(p, q) + tuple(o)] + rest
    return None


def _attempt(N, rng, shapes, radius, scale, step_tries):
    m = 2 ** (N - 1)
    used: set = set()
    g1, g2, fams = [], [], []
    tries = 0
    while len(g1) < m:
        tries += 1
        if tries > 200 * m:
            return None
        p = tuple(int(v) for v in rng.integers(-radius, radius + 1, 2))
        u = tuple(int(v) for v in rng.integers(-(radius // 2), radius // 2 + 1, 2))
        if u == (0, 0) or math.gcd(*u) != 1:
            continue
        g, h = shapes[int(rng.integers(len(shapes)))]
        t = (g * u[0], g * u[1])
        s = (-h * u[1], h * u[0])
        q = (p[0] + t[0] + s[0], p[1] + t[1] + s[1])
        c1 = (p[0] + t[0], p[1] + t[1])
        c2 = (p[0] + s[0], p[1] + s[1])
        quad = {p, q, c1, c2}
        if len(quad) < 4 or quad & used or (0, 0) in quad:
            continue
        if not _clean(g1 + g2 + [p, c1, q, c2], scale, new_from=len(g1) + len(g2)):
            continue
        used |= quad
        g1 += [p, q]
        g2 += [c1, c2]
        fams.append(Family(p, q, c1, c2, 1))
    gens = [g1, g2]
    sib = {}
    for f in fams:
        sib[f.c1], sib[f.c2] = f.c2, f.c1
    for j in range(2, N):
        cur = gens[-1]
        adj = {}
        for i, p in enumerate(cur):
            for q in cur[i + 1:]:
                if q == sib.get(p):
                    continue  # spouse must differ from sibling
                opts = [o for o in _child_options(p, q, shapes, scale, spread=-1 if j == 2 else 1) if not set(o) & used]
                if opts:
                    adj[(p, q)] = opts
                    adj[(q, p)] = [(o[1], o[0]) for o in opts]
        allpts = [n for gg in gens for n in gg]
        accept = lambda chosen, o: _clean(allpts + list(chosen) + list(o), scale, new_from=len(allpts) + len(chosen))
        res = None
        for _ in range(step_tries):
            order = [cur[i] for i in rng.permutation(len(cur))]
            res = _perfect_matching(order, adj, rng, set(), accept, [20 * len(cur)])
            if res is not None:
                break
        if res is None:
            return None
        newf = [Family(p, q, c1, c2, j) for p, q, c1, c2 in res]
        used |= {c for f in res for c in f[2:]}
        fams += newf
        gens.append([c for f in newf for c in (f.c1, f.c2)])
        sib = {}
        for f in newf:
            sib[f.c1], sib[f.c2] = f.c2, f.c1
    return gens, fams


def construct_base(
    N: int,
    search_budget: int = 50,
    seed: int = 0,
    radius: int = 4000,
    check_scale: int = 1,
    growth_s: float | None = 2.0,
    wmax: int = 300,
    step_tries: int = 3,
) -> GenerationSet:
    """Randomised search for a base set with 2^(N-1) modes per generation.

    Generation 1 and 2 come from independent families; each later generation is a
    perfect matching of the previous one (siblings never paired) with children
    placed on the rectangle over each matched diagonal.  Every partial set is kept
    free of points on three or more rectangles through two of its modes, also for
    the blow-up factor ``check_scale``.  ``search_budget`` counts full restarts.
    When ``growth_s`` is given and N >= 4 the set must also satisfy the growth
    bound for that s.
    """
    if not 2 <= N <= MAX_N:
        raise ValueError(f"N must lie in [2, {MAX_N}], got {N}")
    if search_budget < 1:
        raise ValueError("search_budget must be positive")
    rng = np.random.default_rng(seed)
    shapes = family_shapes(wmax)
    for _ in range(search_budget):
        res = _attempt(N, rng, shapes, radius, check_scale, step_tries)
        if res is None:
            continue
        gens, fams = res
        S = GenerationSet(gens, fams, 0, DEFAULT_ETA)
        if growth_s is not None and N >= 4 and not growth_stats(S, growth_s)["meets_bound"]:
            continue
        rep = verify(S, ConvPotential({}), 0)
        if rep.passed:
            return S
    raise SearchBudgetExhausted(f"no N={N} set found within {search_budget} restarts (seed {seed})")
