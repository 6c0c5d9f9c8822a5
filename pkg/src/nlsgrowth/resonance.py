"""Small divisors, the low/high threshold and classification of momentum-conserving 4-tuples."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numba
import numpy as np

from .modes import ConvPotential, Freq, freq, norm_sq

CLASSES = ("A0", "A1", "IPrime_i", "IPrime_ii", "NonResonant")
LOW_THRESHOLD = 0.01
DEFAULT_ETA = 0.3


@dataclass(frozen=True)
class Tuple4:
    n1: Freq
    n2: Freq
    n3: Freq
    n4: Freq
    rho: float
    alt_sq: int
    cls: str

    def to_json(self) -> str:
        return json.dumps({
            "n": [list(self.n1), list(self.n2), list(self.n3), list(self.n4)],
            "rho": self.rho, "alt_sq": self.alt_sq, "class": self.cls,
        })


def check_momentum(n1, n2, n3, n4):
    if (n1[0] - n2[0] + n3[0] != n4[0]) or (n1[1] - n2[1] + n3[1] != n4[1]):
        raise ValueError(f"momentum constraint violated: {n1} - {n2} + {n3} != {n4}")


def alt_sq(n1, n2, n3, n4) -> int:
    return norm_sq(n1) - norm_sq(n2) + norm_sq(n3) - norm_sq(n4)


def small_divisor(n1, n2, n3, n4, V: ConvPotential) -> float:
    n1, n2, n3, n4 = (freq(*n) for n in (n1, n2, n3, n4))
    check_momentum(n1, n2, n3, n4)
    vpart = math.fsum((V.v(n1), -V.v(n2), V.v(n3), -V.v(n4)))
    return alt_sq(n1, n2, n3, n4) + vpart


def kappa0(V: ConvPotential) -> int:
    """Smallest integer k with |v_n| <= 1/100 for every |n| >= k.

    Stored coefficients are used where present, the tail bound elsewhere.
    """
    def bad(bound):
        return bound > LOW_THRESHOLD * (1 + 1e-12)

    worst = -1  # largest |n|^2 of a mode violating the threshold
    for n, v in V.coeffs.items():
        if bad(abs(v)):
            worst = max(worst, norm_sq(n))
    if V.decay_constant > 0:
        r = (V.decay_constant / LOW_THRESHOLD) ** (1.0 / V.s0)
        R = math.isqrt(int(r * r) + 2) + 1
        for x in range(-R, R + 1):
            for y in range(-R, R + 1):
                n = (x, y)
                if n == (0, 0) or n in V.coeffs:
                    continue
                if bad(V.bound(n)):
                    worst = max(worst, norm_sq(n))
    elif (0, 0) not in V.coeffs:
        pass
    if worst < 0:
        return 0
    return math.isqrt(worst) + 1


def is_low(n: Freq, k0: int) -> bool:
    return norm_sq(n) < k0 * k0


def _check_eta(eta):
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")


def classify_values(n1, n2, n3, n4, rho: float, asq: int, eta: float, k0: int) -> str:
    low = any(is_low(n, k0) for n in (n1, n2, n3, n4))
    offdiag = n1 != n4 and n3 != n4
    if low:
        if abs(rho) > eta:
            return "IPrime_i"
        return "A0" if offdiag else "NonResonant"
    if asq != 0:
        return "IPrime_ii"
    return "A1" if offdiag else "NonResonant"


def classify(n1, n2, n3, n4, V: ConvPotential, eta: float = DEFAULT_ETA, k0: int | None = None) -> Tuple4:
    _check_eta(eta)
    n1, n2, n3, n4 = (freq(*n) for n in (n1, n2, n3, n4))
    if k0 is None:
        k0 = kappa0(V)
    rho = small_divisor(n1, n2, n3, n4, V)
    asq = alt_sq(n1, n2, n3, n4)
    return Tuple4(n1, n2, n3, n4, rho, asq, classify_values(n1, n2, n3, n4, rho, asq, eta, k0))


def trivial_permutations(t):
    n1, n2, n3, n4 = t
    return [(n1, n2, n3, n4), (n3, n2, n1, n4), (n1, n4, n3, n2), (n3, n4, n1, n2)]


def canonical(t):
    return min(trivial_permutations(t))


def _box_array(box) -> np.ndarray:
    return np.array(sorted({freq(*n) for n in box}), dtype=np.int64).reshape(-1, 2)


def enumerate_rectangles(box) -> list[tuple]:
    """All rectangle tuples in the box, one representative per trivial-permutation class."""
    P = _box_array(box)
    members = {tuple(p) for p in P.tolist()}
    out = set()
    if len(P) == 0:
        return []
    for b in P:
        # right angle at n2 = b: (n1 - b).(n3 - b) = 0
        d = P - b
        dots = d @ d.T
        ii, kk = np.nonzero(dots == 0)
        for i, k in zip(ii, kk):
            if i == k:
                continue
            n1, n3 = tuple(P[i].tolist()), tuple(P[k].tolist())
            n2 = tuple(b.tolist())
            if n1 == n2 or n3 == n2:
                continue
            n4 = (n1[0] - n2[0] + n3[0], n1[1] - n2[1] + n3[1])
            if n4 in members:
                out.add(canonical((n1, n2, n3, n4)))
    return sorted(out)


def enumerate_class(n, cls: str, box, V: ConvPotential, eta: float = DEFAULT_ETA, k0: int | None = None) -> list[Tuple4]:
    """All (n1, n2, n3) in the box of the given class with n4 = n."""
    _check_eta(eta)
    if cls not in CLASSES:
        raise ValueError(f"unknown class {cls!r}")
    if k0 is None:
        k0 = kappa0(V)
    n = freq(*n)
    pts = sorted({freq(*m) for m in box})
    members = set(pts)
    out = []
    for n1 in pts:
        for n3 in pts:
            n2 = (n1[0] + n3[0] - n[0], n1[1] + n3[1] - n[1])
            if n2 not in members:
                continue
            t = classify(n1, n2, n3, n, V, eta, k0)
            if t.cls == cls:
                out.append(t)
    return out


def potential_grid(V: ConvPotential, radius: int) -> np.ndarray:
    """Stored coefficients on the square of given radius, indexed [x + radius, y + radius]."""
    g = np.zeros((2 * radius + 1, 2 * radius + 1))
    for (x, y), v in V.coeffs.items():
        if abs(x) <= radius and abs(y) <= radius:
            g[x + radius, y + radius] = v
    return g


@numba.njit(cache=True)
def _scan_square(R, vgrid, eta, k0sq, counts, extremes):
    """Classify every tuple with all four modes in the square of radius R.

    counts: A0, A1, IPrime_i, IPrime_ii, NonResonant.
    extremes: [min |rho| over IPrime_i, min |rho| over IPrime_ii, max |rho| over A0,
               max |v-part| over A1].
    """
    for x4 in range(-R, R + 1):
        for y4 in range(-R, R + 1):
            s4 = x4 * x4 + y4 * y4
            v4 = vgrid[x4 + R, y4 + R]
            for x1 in range(-R, R + 1):
                for y1 in range(-R, R + 1):
                    s1 = x1 * x1 + y1 * y1
                    v1 = vgrid[x1 + R, y1 + R]
                    for x3 in range(-R, R + 1):
                        x2 = x1 + x3 - x4
                        if x2 < -R or x2 > R:
                            continue
                        for y3 in range(-R, R + 1):
                            y2 = y1 + y3 - y4
                            if y2 < -R or y2 > R:
                                continue
                            s3 = x3 * x3 + y3 * y3
                            s2 = x2 * x2 + y2 * y2
                            asq = s1 - s2 + s3 - s4
                            vp = v1 - vgrid[x2 + R, y2 + R] + vgrid[x3 + R, y3 + R] - v4
                            rho = asq + vp
                            low = s1 < k0sq or s2 < k0sq or s3 < k0sq or s4 < k0sq
                            offd = not ((x1 == x4 and y1 == y4) or (x3 == x4 and y3 == y4))
                            if low:
                                if abs(rho) > eta:
                                    counts[2] += 1
                                    if abs(rho) < extremes[0]:
                                        extremes[0] = abs(rho)
                                elif offd:
                                    counts[0] += 1
                                    if abs(rho) > extremes[2]:
                                        extremes[2] = abs(rho)
                                else:
                                    counts[4] += 1
                            elif asq != 0:
                                counts[3] += 1
                                if abs(rho) < extremes[1]:
                                    extremes[1] = abs(rho)
                            elif offd:
                                counts[1] += 1
                                if abs(vp) > extremes[3]:
                                    extremes[3] = abs(vp)
                            else:
                                counts[4] += 1


def scan_square(radius: int, V: ConvPotential, eta: float = DEFAULT_ETA, k0: int | None = None) -> dict:
    """Exhaustive class counts and small-divisor extremes over the square box.

    Only stored coefficients enter the divisors (the dynamics sees the tail as zero).
    """
    _check_eta(eta)
    if k0 is None:
        k0 = kappa0(V)
    counts = np.zeros(5, dtype=np.int64)
    ext = np.array([np.inf, np.inf, 0.0, 0.0])
    _scan_square(int(radius), potential_grid(V, int(radius)), float(eta), int(k0) ** 2, counts, ext)
    out = {c: int(k) for c, k in zip(CLASSES, counts)}
    out.update(
        min_abs_rho_i=float(ext[0]),
        min_abs_rho_ii=float(ext[1]),
        max_abs_rho_A0=float(ext[2]),
        max_abs_vpart_A1=float(ext[3]),
    )
    fi = 1.0 / ext[0] if np.isfinite(ext[0]) else 0.0
    fii = 1.0 / ext[1] if np.isfinite(ext[1]) else 0.0
    out["max_abs_F"] = float(max(fi, fii))
    return out
