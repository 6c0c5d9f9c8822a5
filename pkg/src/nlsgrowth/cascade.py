"""End-to-end runs: embed the rescaled toy orbit on a generation set, integrate the
deviation under the fuller dynamics, and report Sobolev-norm growth."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from functools import reduce

import numba
import numpy as np

from .dynamics import Trajectory, integrate, rotate_backward
from .lambda_set import GenerationSet, growth_stats
from .modes import AmplitudeField, ConvPotential, dump_json, freq
from .normal_form import CLS_CODE, F_BOUND, CubicField, NormalFormError, lie_transform
from .resonance import DEFAULT_ETA, _check_eta, kappa0 as kappa0_of
from .toy_model import SliderResult, lift_from_mtilde, slider_search, toy_rhs

DYNAMICS = ("truncated", "truncated+J", "truncated+J+quintic")
MAX_SUPPORT = 200
_I1P = (CLS_CODE["IPrime_i"], CLS_CODE["IPrime_ii"])
_RES = (CLS_CODE["A0"], CLS_CODE["A1"])


# ----------------------------------------------------------------------------
# ordered triples over a support


@dataclass
class TripleTable:
    """All ordered (x, y, z) in the support with m = x - y + z, classified as the
    tuple (x, y, z, m).  ``asq`` is exact in units of ``g**2`` (g = gcd of the
    support coordinates); ``rho`` is the float small divisor."""

    modes: list
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    m: np.ndarray  # (T, 2) int64 coordinates of x - y + z
    m_index: np.ndarray  # index into modes, -1 outside the support
    asq: np.ndarray  # exact, divided by g**2
    g: int
    vpart: np.ndarray  # v_x - v_y + v_z - v_m
    rho: np.ndarray
    cls: np.ndarray

    def __len__(self):
        return len(self.x)

    def rho_key(self) -> np.ndarray:
        """Exact key for equality of small divisors within one m."""
        return np.stack([self.asq, np.round(self.vpart * 1e12).astype(np.int64)], axis=1)


def _v_lookup(V: ConvPotential, pts: np.ndarray) -> np.ndarray:
    out = np.zeros(len(pts))
    if not V.coeffs or not len(pts):
        return out
    R = max(max(abs(a), abs(b)) for a, b in V.coeffs)
    near = np.nonzero(np.abs(pts).max(1) <= R)[0]
    for i in near:
        out[i] = V.v((int(pts[i, 0]), int(pts[i, 1])))
    return out


def triple_table(modes, V: ConvPotential, eta: float, k0: int) -> TripleTable:
    _check_eta(eta)
    modes = sorted({freq(*n) for n in modes})
    K = len(modes)
    if K > MAX_SUPPORT:
        raise ValueError(f"support of {K} modes exceeds the enumeration limit {MAX_SUPPORT}")
    xy = np.array(modes, dtype=np.int64).reshape(-1, 2)
    g = int(reduce(math.gcd, (abs(int(c)) for c in xy.ravel()), 0)) or 1
    b = xy // g
    if K and np.abs(b).max() > 1e8:
        raise ValueError("coordinates too large for exact int64 arithmetic")
    X, Y, Z = (a.ravel() for a in np.meshgrid(np.arange(K), np.arange(K), np.arange(K), indexing="ij"))
    mb = b[X] - b[Y] + b[Z]
    asq = -2 * ((b[X] - b[Y]) * (b[Z] - b[Y])).sum(1)
    m = mb * g
    index = {n: i for i, n in enumerate(modes)}
    m_index = np.array([index.get((int(p), int(q)), -1) for p, q in m], dtype=np.int64)
    vs = _v_lookup(V, xy)
    vm = np.where(m_index >= 0, vs[np.maximum(m_index, 0)], _v_lookup(V, m))
    vpart = (vs[X] - vs[Y]) + (vs[Z] - vm)
    rho = float(g) ** 2 * asq.astype(float) + vpart
    k2 = float(k0) ** 2
    low_s = (xy.astype(float) ** 2).sum(1) < k2
    low_m = (m.astype(float) ** 2).sum(1) < k2
    anylow = low_s[X] | low_s[Y] | low_s[Z] | low_m
    offd = (X != m_index) & (Z != m_index)
    cls = np.full(len(X), CLS_CODE["NonResonant"], dtype=np.int64)
    big = np.abs(rho) > eta
    cls[anylow & big] = CLS_CODE["IPrime_i"]
    cls[anylow & ~big & offd] = CLS_CODE["A0"]
    cls[~anylow & (asq != 0)] = CLS_CODE["IPrime_ii"]
    cls[~anylow & (asq == 0) & offd] = CLS_CODE["A1"]
    return TripleTable(modes, X, Y, Z, m, m_index, asq, g, vpart, rho, cls)


def _resolve(S: GenerationSet | None, V, eta, kappa0):
    eta = (S.eta if S is not None else DEFAULT_ETA) if eta is None else eta
    if kappa0 is None:
        kappa0 = S.kappa0 if S is not None else kappa0_of(V)
    return eta, int(kappa0)


# ----------------------------------------------------------------------------
# truncated dynamics and the J remainder


def _cubic_rhs(beta: AmplitudeField, tt: TripleTable, weight: np.ndarray, box=None) -> AmplitudeField:
    """sum over triples of i * weight * beta_x conj(beta_y) beta_z, placed at m."""
    a = beta.values(tt.modes)
    w = 1j * weight * a[tt.x] * np.conj(a[tt.y]) * a[tt.z]
    keep = np.nonzero(w != 0)[0]
    out: dict = {}
    for t in keep:
        n = (int(tt.m[t, 0]), int(tt.m[t, 1]))
        out[n] = out.get(n, 0j) + complex(w[t])
    if box is not None:
        allowed = set(box)
        out = {n: v for n, v in out.items() if n in allowed}
    return AmplitudeField(out, "Rotating")


def _box_modes(box):
    if box is None:
        return None
    if isinstance(box, GenerationSet):
        return set(box.modes())
    return {freq(*n) for n in box}


def truncated_rhs(beta: AmplitudeField, V: ConvPotential, eta: float | None = None, kappa0: int | None = None,
                  t: float = 0.0, box=None) -> AmplitudeField:
    """d/dt beta for -i beta_n' = -|beta_n|^2 beta_n + sum_A0 (...) e^{i rho t} + sum_A1 (...).

    ``box`` (a mode collection or a GenerationSet) bounds the support: the input
    must lie inside it and outputs outside it are dropped.
    """
    eta, k0 = _resolve(box if isinstance(box, GenerationSet) else None, V, eta, kappa0)
    allowed = _box_modes(box)
    if allowed is not None:
        extra = beta.support() - allowed
        if extra:
            raise ValueError(f"support leaves the box, e.g. {sorted(extra)[0]}")
    tt = triple_table(beta.support(), V, eta, k0)
    weight = np.zeros(len(tt), dtype=complex)
    weight[tt.cls == CLS_CODE["A1"]] = 1.0
    a0 = tt.cls == CLS_CODE["A0"]
    weight[a0] = np.exp(1j * tt.rho[a0] * t)
    weight[(tt.x == tt.y) & (tt.y == tt.z)] = -1.0
    return _cubic_rhs(beta, tt, weight, allowed)


def family_rhs(beta: AmplitudeField, S: GenerationSet) -> AmplitudeField:
    """Family-reduced form: -i beta_n' = -|beta_n|^2 beta_n + 2 beta_c1 beta_c2 conj(beta_spouse)
    + 2 beta_p1 beta_p2 conj(beta_sibling)."""
    modes = S.modes()
    extra = beta.support() - set(modes)
    if extra:
        raise ValueError(f"support leaves the generation set, e.g. {sorted(extra)[0]}")
    out = {n: -abs(beta[n]) ** 2 * beta[n] for n in modes}
    for f in S.families:
        p1, p2, c1, c2 = (freq(*n) for n in (f.p1, f.p2, f.c1, f.c2))
        out[p1] += 2 * beta[c1] * beta[c2] * np.conj(beta[p2])
        out[p2] += 2 * beta[c1] * beta[c2] * np.conj(beta[p1])
        out[c1] += 2 * beta[p1] * beta[p2] * np.conj(beta[c2])
        out[c2] += 2 * beta[p1] * beta[p2] * np.conj(beta[c1])
    return AmplitudeField({n: 1j * v for n, v in out.items()}, "Rotating")


def remainder_J_rhs(beta: AmplitudeField, V: ConvPotential, t: float, eta: float | None = None,
                    kappa0: int | None = None, box=None) -> AmplitudeField:
    """Contribution i * J_n(beta, t) of J_n = sum_A1 beta beta-bar beta (e^{i rho t} - 1) to beta'."""
    eta, k0 = _resolve(box if isinstance(box, GenerationSet) else None, V, eta, kappa0)
    tt = triple_table(beta.support(), V, eta, k0)
    weight = np.zeros(len(tt), dtype=complex)
    a1 = tt.cls == CLS_CODE["A1"]
    weight[a1] = np.expm1(1j * tt.rho[a1] * t)
    return _cubic_rhs(beta, tt, weight, _box_modes(box))


# ----------------------------------------------------------------------------
# compiled pieces on a generation set


@numba.njit(cache=True)
def _quintic_kernel(a, x, y, z, group, h, f, G, K):
    # h and f carry the multiplicity of the mirrored triple (z, y, x)
    Hg = np.zeros(G, dtype=np.complex128)
    Fg = np.zeros(G, dtype=np.complex128)
    for t in range(len(x)):
        A = a[x[t]] * np.conj(a[y[t]]) * a[z[t]]
        Hg[group[t]] += h[t] * A
        Fg[group[t]] += f[t] * A
    out = np.zeros(K, dtype=np.complex128)
    for t in range(len(x)):
        g = group[t]
        ax, ay, az = a[x[t]], a[y[t]], a[z[t]]
        cy = 1j * (np.conj(Hg[g]) * f[t] - np.conj(Fg[g]) * h[t])
        cx = 1j * (Fg[g] * np.conj(h[t]) - Hg[g] * np.conj(f[t]))
        out[y[t]] += cy * ax * az
        out[x[t]] += cx * ay * np.conj(az)
        out[z[t]] += cx * np.conj(ax) * ay
    return 2j * out


class QuinticProbe:
    """Field of the degree-six term 1/2 {G' + G~, F} restricted to the set.

    Only monomials whose six modes all lie in the set enter.  They arise from
    contracting two quartic terms through one intermediate mode m = x - y + z;
    with ``resonant`` set, only pairs with equal small divisor (zero total
    frequency, hence time independent in rotating coordinates) are kept.
    """

    def __init__(self, tt: TripleTable, resonant: bool = True):
        K = len(tt.modes)
        inside = tt.m_index >= 0
        offd_slot4 = inside & (tt.x != tt.m_index) & (tt.z != tt.m_index) | ~inside
        # the reading (x, m, z, y) is off-diagonal unless x = y or z = y
        offd_slot2 = (tt.x != tt.y) & (tt.z != tt.y)
        res = np.isin(tt.cls, _RES)
        h = 0.25 * (offd_slot4.astype(float) + offd_slot2) + 0.25 * res * (offd_slot4.astype(float) + offd_slot2)
        self_ = (tt.x == tt.y) & (tt.y == tt.z)
        h = np.where(self_, -1.0, h)
        f = np.zeros(len(tt), dtype=complex)
        ip = np.isin(tt.cls, _I1P)
        f[ip] = -0.5j / tt.rho[ip]
        if ip.any() and np.max(np.abs(f[ip])) > 0.5 * F_BOUND:
            raise NormalFormError("generator coefficient exceeds the |F| bound")
        # key the intermediate mode: inside the set by index, outside by coordinates
        mkey = np.where(inside[:, None], np.stack([tt.m_index, np.full(len(tt), -(2 ** 62))], 1), tt.m)
        cols = [mkey, tt.rho_key()] if resonant else [mkey]
        key = np.concatenate(cols, axis=1)
        _, group = np.unique(key, axis=0, return_inverse=True)
        group = group.ravel()
        # drop groups where H or F vanishes identically
        hs = np.bincount(group, np.abs(h)) > 0
        fs = np.bincount(group, np.abs(f)) > 0
        keep = np.nonzero((hs & fs)[group] & (tt.x <= tt.z))[0]
        keep = keep[np.argsort(group[keep], kind="stable")]  # sequential group access
        mult = np.where(tt.x[keep] < tt.z[keep], 2.0, 1.0)
        _, self.group = np.unique(group[keep], return_inverse=True)
        self.group = self.group.ravel()
        self.G = int(self.group.max()) + 1 if len(keep) else 0
        self.K = K
        self.group = self.group.astype(np.int64)
        self.x, self.y, self.z = (np.ascontiguousarray(v[keep], dtype=np.int64) for v in (tt.x, tt.y, tt.z))
        self.h = np.ascontiguousarray(mult * h[keep], dtype=complex)
        self.f = np.ascontiguousarray(mult * f[keep])
        self.resonant = resonant

    def __len__(self):
        return len(self.x)

    def _scatter(self, idx, w):
        return np.bincount(idx, w.real, self.K) + 1j * np.bincount(idx, w.imag, self.K)

    def _sum(self, w):
        return np.bincount(self.group, w.real, self.G) + 1j * np.bincount(self.group, w.imag, self.G)

    def __call__(self, a: np.ndarray) -> np.ndarray:
        if not len(self.x):
            return np.zeros(self.K, dtype=complex)
        return _quintic_kernel(np.ascontiguousarray(a, dtype=np.complex128), self.x, self.y, self.z, self.group,
                               self.h, self.f, self.G, self.K)

    def jvp(self, a: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Real directional derivative of the field at ``a`` along ``v``."""
        if not len(self.x):
            return np.zeros(self.K, dtype=complex)
        ax, ay, az = a[self.x], a[self.y], a[self.z]
        vx, vy, vz = v[self.x], v[self.y], v[self.z]
        A = ax * np.conj(ay) * az
        dA = vx * np.conj(ay) * az + ax * np.conj(vy) * az + ax * np.conj(ay) * vz
        Hg, Fg = self._sum(self.h * A)[self.group], self._sum(self.f * A)[self.group]
        dH, dF = self._sum(self.h * dA)[self.group], self._sum(self.f * dA)[self.group]
        cy = 1j * (np.conj(Hg) * self.f - np.conj(Fg) * self.h)
        cx = 1j * (Fg * np.conj(self.h) - Hg * np.conj(self.f))
        dcy = 1j * (np.conj(dH) * self.f - np.conj(dF) * self.h)
        dcx = 1j * (dF * np.conj(self.h) - dH * np.conj(self.f))
        out = self._scatter(self.y, dcy * ax * az + cy * (vx * az + ax * vz))
        out += self._scatter(self.x, dcx * ay * np.conj(az) + cx * (vy * np.conj(az) + ay * np.conj(vz)))
        out += self._scatter(self.z, dcx * np.conj(ax) * ay + cx * (np.conj(vx) * ay + np.conj(ax) * vy))
        return 2j * out


def _generator_field(tt: TripleTable) -> CubicField:
    """Field of the part of F with at least three modes in the set, over the set
    plus the intermediate modes it reaches (set modes first)."""
    K = len(tt.modes)
    ip = np.nonzero(np.isin(tt.cls, _I1P))[0]
    outside = tt.m_index[ip] < 0
    ext, inv = np.unique(tt.m[ip][outside], axis=0, return_inverse=True)
    mi = tt.m_index[ip].copy()
    mi[outside] = K + inv.ravel()
    x, y, z, rho = tt.x[ip], tt.y[ip], tt.z[ip], tt.rho[ip]
    fc = 0.25 * (-1j / rho)
    # ordered readings (n1, n2, n3, n4, coefficient): all four when m is outside
    readings = [(x, y, z, mi, fc)]
    o = outside
    readings += [(x[o], mi[o], z[o], y[o], fc[o]), (mi[o], x[o], y[o], z[o], -fc[o]), (y[o], x[o], mi[o], z[o], -fc[o])]
    X, Y, Z, O, C = [], [], [], [], []
    for n1, n2, n3, n4, c in readings:
        # d/d conj(a_n4) and d/d conj(a_n2) of c a_n1 conj(a_n2) a_n3 conj(a_n4)
        X += [n1, n1]
        Y += [n2, n4]
        Z += [n3, n3]
        O += [n4, n2]
        C += [2j * c, 2j * c]
    modes = list(tt.modes) + [(int(p), int(q)) for p, q in ext]
    cat = lambda v: np.concatenate(v) if v else np.zeros(0)
    return CubicField(modes, cat(X), cat(Y), cat(Z), cat(O), cat(C))


class SetDynamics:
    """Compiled vector fields over the modes of a generation set."""

    def __init__(self, S: GenerationSet, V: ConvPotential, eta: float | None = None, kappa0: int | None = None):
        self.S, self.V = S, V
        self.eta, self.k0 = _resolve(S, V, eta, kappa0)
        tt = triple_table(S.modes(), V, self.eta, self.k0)
        self.table = tt
        self.modes = tt.modes
        self.K = len(self.modes)
        inside = tt.m_index >= 0
        a1 = np.nonzero(inside & (tt.cls == CLS_CODE["A1"]))[0]
        a0 = np.nonzero(inside & (tt.cls == CLS_CODE["A0"]))[0]
        diag = np.arange(self.K)
        # static part: self interaction and A1 sums, -i beta' = ...
        self.T = CubicField(self.modes, np.r_[diag, tt.x[a1]], np.r_[diag, tt.y[a1]], np.r_[diag, tt.z[a1]],
                            np.r_[diag, tt.m_index[a1]], np.r_[np.full(self.K, -1j), np.full(len(a1), 1j)])
        self._a0 = (tt.x[a0], tt.y[a0], tt.z[a0], tt.m_index[a0], tt.rho[a0])
        self._a1 = (tt.x[a1], tt.y[a1], tt.z[a1], tt.m_index[a1], tt.rho[a1])
        self.rho_A1_max = float(np.max(np.abs(tt.rho[a1]))) if len(a1) else 0.0
        self._quintic = None
        self._gamma = None

    def forcing(self, t: float, with_J: bool) -> CubicField:
        """Time-dependent cubic terms: A0 with e^{i rho t}, and J with e^{i rho t} - 1."""
        parts = [(self._a0, lambda r: 1j * np.exp(1j * r * t))]
        if with_J:
            parts.append((self._a1, lambda r: 1j * np.expm1(1j * r * t)))
        X, Y, Z, O, C = [], [], [], [], []
        for (x, y, z, o, r), w in parts:
            X.append(x), Y.append(y), Z.append(z), O.append(o), C.append(w(r))
        return CubicField(self.modes, *(np.concatenate(v) for v in (X, Y, Z, O, C)))

    @property
    def has_forcing(self) -> bool:
        return len(self._a0[0]) > 0 or (len(self._a1[0]) > 0 and self.rho_A1_max > 0)

    def quintic(self) -> QuinticProbe:
        if self._quintic is None:
            self._quintic = QuinticProbe(self.table, resonant=True)
        return self._quintic

    def gamma_field(self) -> CubicField:
        if self._gamma is None:
            self._gamma = _generator_field(self.table)
        return self._gamma

    def to_array(self, f: AmplitudeField) -> np.ndarray:
        extra = f.support() - set(self.modes)
        if extra:
            raise ValueError(f"support leaves the generation set, e.g. {sorted(extra)[0]}")
        return f.values(self.modes)

    def lift(self, b: np.ndarray) -> np.ndarray:
        """Array form of lift_from_mtilde in this object's mode order."""
        gen = self.S.generation_of()
        idx = np.array([gen[n] - 1 for n in self.modes])
        return np.asarray(b)[idx]


# ----------------------------------------------------------------------------
# experiment


def embed_beta_lambda(S: GenerationSet, toy_traj: Trajectory, lam: float) -> Trajectory:
    """beta^lam_n(t) = b_j(t / lam^2) / lam on generation j, sampled at lam^2 times the toy times."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if toy_traj.values.shape[1] != S.N:
        raise ValueError(f"toy trajectory has {toy_traj.values.shape[1]} slots, set has {S.N} generations")
    modes = S.modes()
    gen = S.generation_of()
    idx = np.array([gen[n] - 1 for n in modes])
    return Trajectory(toy_traj.times * lam ** 2, toy_traj.values[:, idx] / lam, modes, "Rotating", {"lambda": lam})


@dataclass
class ExperimentConfig:
    S: GenerationSet
    V: ConvPotential
    s: float = 2.0
    lam: float = 16.0
    eps: float = 0.05
    start: int | None = None  # default N - 2
    end: int | None = None  # default N - 1
    dynamics: str = "truncated+J+quintic"
    eta: float | None = None
    kappa0: int | None = None
    rel_tol: float = 1e-10
    abs_tol: float = 1e-13
    samples: int = 512
    slider_budget: int = 400
    slider_time: float = 300.0
    threshold: float = 0.1
    bootstrap_C: float = 1.0
    gamma_stride: int = 1  # apply Gamma at every k-th sample (and both ends)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.s > 1:
            raise ValueError("s must exceed 1")
        if self.dynamics not in DYNAMICS:
            raise ValueError(f"dynamics must be one of {DYNAMICS}")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.samples < 8:
            raise ValueError("need at least 8 samples")
        if self.gamma_stride < 1:
            raise ValueError("gamma_stride must be at least 1")
        N = self.S.N
        self.start = max(1, N - 2) if self.start is None else int(self.start)
        self.end = N - 1 if self.end is None else int(self.end)
        if not 1 <= self.start < self.end <= N:
            raise ValueError("need 1 <= start < end <= N")

    def summary(self) -> dict:
        return {
            "N": self.S.N, "modes": len(self.S.modes()), "s": self.s, "lambda": self.lam, "eps": self.eps,
            "start": self.start, "end": self.end, "dynamics": self.dynamics, "eta": self.eta,
            "kappa0": self.kappa0 if self.kappa0 is not None else self.S.kappa0,
            "rel_tol": self.rel_tol, "abs_tol": self.abs_tol, "samples": self.samples, "gamma_stride": self.gamma_stride,
            "potential": self.V.to_json(),
        }


@dataclass
class DeviationSeries:
    times: np.ndarray  # physical time t = lam^2 tau
    l1_deviation: np.ndarray
    bound: float  # lam^-2
    lam: float
    scale: float  # xi = scale * eta
    b: np.ndarray  # toy states at the sample times
    eta: np.ndarray  # scaled deviation at the sample times
    slider: SliderResult
    T0: float
    stage_times: list = field(default_factory=list)
    failed: bool = False
    message: str = ""

    @property
    def peak(self) -> float:
        return float(np.max(self.l1_deviation)) if len(self.l1_deviation) else 0.0

    @property
    def within_bound(self) -> bool:
        return self.peak <= self.bound

    def xi(self, k: int) -> np.ndarray:
        return self.scale * self.eta[k]

    def summary(self) -> dict:
        return {
            "lambda": self.lam, "T0": self.T0, "T": self.lam ** 2 * self.T0, "peak_l1_deviation": self.peak,
            "bound": self.bound, "within_bound": self.within_bound, "scale": self.scale,
            "failed": self.failed, "message": self.message, "slider": self.slider.to_json(),
        }


def _sample_times(T0: float, n: int, extra) -> np.ndarray:
    ts = set(np.linspace(0.0, T0, n).tolist())
    ts.update(float(t) for t in extra if 0 < t < T0)
    return np.array(sorted(ts))


def approximation_experiment(cfg: ExperimentConfig, slider: SliderResult | None = None,
                             system: SetDynamics | None = None) -> DeviationSeries:
    """Integrate the deviation xi = beta - beta^lam under the configured dynamics.

    Written in rescaled time tau = t / lam^2 with xi = lam^-3 p0 eta(tau), the
    deviation solves eta' = DT(B) eta + eps D^2T(B)[eta, eta] / 2 + eps^2 T(eta)
    + forcing, where B is the lifted toy state, eps = p0 / lam^2 and T the
    static truncated field.  The expansion is exact, so tiny deviations are not
    lost to cancellation against beta^lam.
    """
    S, lam = cfg.S, cfg.lam
    sysd = SetDynamics(S, cfg.V, cfg.eta, cfg.kappa0) if system is None else system
    if slider is None:
        slider = slider_search(S.N, cfg.start, cfg.end, cfg.eps, budget=cfg.slider_budget, threshold=cfg.threshold,
                               time_budget=cfg.slider_time)
    if len(slider.b0) != S.N:
        raise ValueError("slider orbit does not match the number of generations")
    T0 = slider.T0
    with_J = cfg.dynamics != "truncated"
    quint = sysd.quintic() if cfg.dynamics.endswith("quintic") else None
    forced = sysd.has_forcing or quint is not None and len(quint) > 0

    def forcing(tau, Bv):
        """Unscaled forcing lam^5 xi-units: quintic P(B) + lam^2 K_t(B)."""
        out = np.zeros(sysd.K, dtype=complex)
        if quint is not None:
            out += quint(Bv)
        if sysd.has_forcing:
            out += lam ** 2 * sysd.forcing(lam ** 2 * tau, with_J)(Bv)
        return out

    # normalisation p0 from the forcing along the orbit
    p0 = 0.0
    if forced:
        probe = integrate(lambda t, y: toy_rhs(y), slider.b0, (0.0, T0), 1e-10, 1e-13,
                          np.linspace(0.0, T0, 17) if T0 > 0 else None)
        for tau, bv in zip(probe.times, probe.values):
            p0 = max(p0, float(np.sum(np.abs(forcing(tau, sysd.lift(bv))))))
    p0 = p0 if p0 > 0 else 1.0
    epsn = p0 / lam ** 2
    N, K = S.N, sysd.K
    T = sysd.T

    def rhs(tau, y):
        b, e = y[:N], y[N:]
        B = sysd.lift(b)
        de = T.jvp(B, e) + 0.5 * epsn * T.hvp(B, e, e) + epsn ** 2 * T(e)
        if forced:
            Bx = B + epsn * e
            de = de + forcing(tau, Bx) / p0
        return np.concatenate([toy_rhs(b), de])

    taus = _sample_times(T0, cfg.samples, slider.stage_times)
    y0 = np.concatenate([slider.b0, np.zeros(K, dtype=complex)])
    failed, msg = False, ""
    try:
        tr = integrate(rhs, y0, (0.0, T0), cfg.rel_tol, cfg.abs_tol, taus if T0 > 0 else None)
        vals = tr.values
        got = tr.times
    except Exception as exc:  # partial series is returned and flagged
        failed, msg = True, str(exc)
        got, vals = taus[:1], y0[None, :]
    scale = p0 / lam ** 3
    dev = scale * np.sum(np.abs(vals[:, N:]), axis=1)
    return DeviationSeries(got * lam ** 2, dev, lam ** -2.0, lam, scale, vals[:, :N].copy(), vals[:, N:].copy(),
                           slider, T0, [lam ** 2 * t for t in slider.stage_times], failed, msg)


def scaling_exponent(lams, peaks) -> float:
    """Least-squares slope of log(peak) against log(lambda)."""
    x, y = np.log(np.asarray(lams, dtype=float)), np.log(np.asarray(peaks, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


# ----------------------------------------------------------------------------
# Sobolev growth


def _hs_weights(modes, s: float) -> np.ndarray:
    return np.array([(1.0 + float(n[0]) ** 2 + float(n[1]) ** 2) ** s for n in modes])


def compose_back(beta: np.ndarray, sysd: SetDynamics, t: float) -> tuple[AmplitudeField, AmplitudeField]:
    """r(t) = Gamma(rotated-back beta(t)) with the order-3 Lie series of the generator.

    Returns r and the rotated-back state it was computed from."""
    field_ = AmplitudeField.from_arrays(sysd.modes, beta, "Rotating")
    alpha = rotate_backward(field_, sysd.V, t)
    r = lie_transform(alpha, None, order=3, max_l1=math.inf, field=sysd.gamma_field())
    return r.retag("Gauged"), alpha


def _resonant_energy(beta: np.ndarray, sysd: SetDynamics, omega: np.ndarray) -> float:
    """1/2 sum omega |beta|^2 + G~ on the set (A1 tuples and the -1/4 |beta|^4 terms)."""
    x, y, z, o, _ = sysd._a1
    quart = 0.25 * np.sum(np.conj(beta[o]) * beta[x] * np.conj(beta[y]) * beta[z]).real
    return float(0.5 * np.sum(omega * np.abs(beta) ** 2) + quart - 0.25 * np.sum(np.abs(beta) ** 4))


def sobolev_growth_report(cfg: ExperimentConfig, series: DeviationSeries, system: SetDynamics | None = None,
                          initial_constant: float = 2.0) -> dict:
    """H^s norms of the composed-back trajectory and the chain of inequalities
    from final-slot occupation to the norm ratio.

    Gamma is applied at every ``cfg.gamma_stride``-th sample and at both ends;
    elsewhere r is the rotated-back state.  The largest relative H^s change
    caused by Gamma where it was applied is reported as ``gamma_max_rel_Hs``.
    """
    S, lam, s = cfg.S, cfg.lam, cfg.s
    sysd = SetDynamics(S, cfg.V, cfg.eta, cfg.kappa0) if system is None else system
    modes = sysd.modes
    w = _hs_weights(modes, s)
    omega = np.array([cfg.V.omega(n) for n in modes])
    gamma = sysd.gamma_field()
    rows, gen_rows = [], []
    gen = S.generation_of()
    gidx = np.array([gen[n] - 1 for n in modes])
    wg = _hs_weights(gamma.modes, s)
    gamma_err = gamma_rel = 0.0
    last = len(series.times) - 1
    for k, t in enumerate(series.times):
        beta = sysd.lift(series.b[k]) / lam + series.xi(k)
        if k % cfg.gamma_stride == 0 or k == last:
            r, alpha = compose_back(beta, sysd, float(t))
            rv, av = r.values(gamma.modes), alpha.values(gamma.modes)
            hs = math.sqrt(math.fsum(wg * np.abs(rv) ** 2))
            hs_a = math.sqrt(math.fsum(wg * np.abs(av) ** 2))
            l1b = float(np.sum(np.abs(beta)))
            if l1b > 0:
                gamma_err = max(gamma_err, float(np.sum(np.abs(rv - av))) / l1b ** 3)
                gamma_rel = max(gamma_rel, abs(hs - hs_a) / hs_a)
        else:
            rv = np.abs(beta)  # the rotation does not change moduli
            hs = math.sqrt(math.fsum(w * rv ** 2))
        mass = float(np.sum(np.abs(rv) ** 2))
        rows.append((float(t), hs, mass, _resonant_energy(beta, sysd, omega)))
        p = np.bincount(gidx, np.abs(beta) ** 2, S.N)
        gen_rows.append((float(t),) + tuple((p / p.sum()).tolist() if p.sum() > 0 else p.tolist()))
    hs0, hsT = rows[0][1], rows[-1][1]
    g = growth_stats(S, s)
    Sj = g["S"]
    N = S.N
    out = {
        "s": s, "lambda": lam, "initial_Hs": hs0, "final_Hs": hsT, "ratio": hsT / hs0 if hs0 > 0 else None,
        "series": rows, "generations": gen_rows, "S": [float(v) for v in Sj],
        "lambda_bounds": [float(v) * lam ** -2 for v in Sj], "gamma_cubic_constant": gamma_err,
        "gamma_max_rel_Hs": gamma_rel,
    }
    end, start = cfg.end, cfg.start
    chain = []
    b_end = series.b[-1]
    achieved = float(abs(b_end[end - 1]) ** 2 / np.sum(np.abs(b_end) ** 2))
    chain.append({"name": "slider transfer |b_end(T0)|^2 >= 1 - threshold", "lhs": achieved,
                  "rhs": 1 - cfg.threshold, "holds": achieved >= 1 - cfg.threshold})
    chain.append({"name": "deviation sup ||xi||_l1 <= lam^-2 / 8", "lhs": series.peak, "rhs": lam ** -2 / 8,
                  "holds": series.peak <= lam ** -2 / 8})
    beta_T = sysd.lift(b_end) / lam + series.xi(len(series.times) - 1)
    in_end = gidx == end - 1
    min_end = float(np.min(np.abs(beta_T[in_end])))
    chain.append({"name": "min over generation end of |beta~_n(T)| >= 1 / (2 lam)", "lhs": min_end,
                  "rhs": 0.5 / lam, "holds": min_end >= 0.5 / lam})
    w_end, w_start = float(Sj[end - 1]), float(Sj[start - 1])
    chain.append({"name": "||r(T)||_Hs^2 >= lam^-2 S_end / 4", "lhs": hsT ** 2, "rhs": lam ** -2 * w_end / 4,
                  "holds": hsT ** 2 >= lam ** -2 * w_end / 4})
    chain.append({"name": f"||r(0)||_Hs^2 <= {initial_constant:g} lam^-2 S_start", "lhs": hs0 ** 2,
                  "rhs": initial_constant * lam ** -2 * w_start, "holds": hs0 ** 2 <= initial_constant * lam ** -2 * w_start})
    target = 0.5 * math.sqrt(w_end / w_start)
    chain.append({"name": "||r(T)||_Hs / ||r(0)||_Hs >= sqrt(S_end / S_start) / 2", "lhs": out["ratio"],
                  "rhs": target, "holds": out["ratio"] is not None and out["ratio"] >= target})
    out.update(chain=chain, chain_holds=all(c["holds"] for c in chain), target_ratio=target,
               sqrt_growth=math.sqrt(w_end / w_start), start=start, end=end, N=N)
    return out


# ----------------------------------------------------------------------------
# decomposition of the deviation equation


def z_decomposition_probe(cfg: ExperimentConfig, series: DeviationSeries, xi_samples=None,
                          system: SetDynamics | None = None, every: int = 32) -> dict:
    """l1 norms of Z0 (forcing at xi = 0), Z1 xi (linear part) and Z2 (the rest)
    at sampled times, in physical units, plus the a-priori bootstrap flag
    ||xi|| <= C lam^{-3/2} 2^{-N}.  ``xi_samples`` overrides the run's deviation."""
    sysd = SetDynamics(cfg.S, cfg.V, cfg.eta, cfg.kappa0) if system is None else system
    lam = cfg.lam
    with_J = cfg.dynamics != "truncated"
    quint = sysd.quintic() if cfg.dynamics.endswith("quintic") else None
    T = sysd.T

    def cubics(t):
        return [T] + ([sysd.forcing(t, with_J)] if sysd.has_forcing else [])

    idx = list(range(0, len(series.times), max(1, every)))
    if idx[-1] != len(series.times) - 1:
        idx.append(len(series.times) - 1)
    rows = []
    bound = cfg.bootstrap_C * lam ** -1.5 * 2.0 ** (-cfg.S.N)
    for j, k in enumerate(idx):
        t = float(series.times[k])
        beta = sysd.lift(series.b[k]) / lam
        xi = series.xi(k) if xi_samples is None else np.asarray(xi_samples[j], dtype=complex)
        z0 = np.zeros(sysd.K, dtype=complex)
        z1 = T.jvp(beta, xi)
        z2 = 0.5 * T.hvp(beta, xi, xi) + T(xi)
        for X in cubics(t)[1:]:
            z0 += X(beta)
            z1 += X.jvp(beta, xi)
            z2 += 0.5 * X.hvp(beta, xi, xi) + X(xi)
        if quint is not None:
            p = quint(beta)
            dp = quint.jvp(beta, xi)
            z0 += p
            z1 += dp
            # floating difference: limited by round-off relative to |P(beta)|
            z2 += quint(beta + xi) - p - dp
        nx = float(np.sum(np.abs(xi)))
        rows.append({"t": t, "Z0": float(np.sum(np.abs(z0))), "Z1xi": float(np.sum(np.abs(z1))),
                     "Z2": float(np.sum(np.abs(z2))), "xi": nx, "bootstrap_ok": nx <= bound})
    return {"bootstrap_bound": bound, "bootstrap_ok": all(r["bootstrap_ok"] for r in rows), "rows": rows}


# ----------------------------------------------------------------------------
# outputs


def _fmt(x) -> str:
    return repr(float(x))


def write_outputs(out_dir, cfg: ExperimentConfig, series: DeviationSeries, report: dict, extra: dict | None = None,
                  wall_clock: float | None = None):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "deviation.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "l1_dev", "bound"])
        for t, d in zip(series.times, series.l1_deviation):
            w.writerow([_fmt(t), _fmt(d), _fmt(series.bound)])
    with open(os.path.join(out_dir, "sobolev.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "H^s", "mass", "energy"])
        for row in report["series"]:
            w.writerow([_fmt(v) for v in row])
    with open(os.path.join(out_dir, "generations.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"share_{j + 1}" for j in range(cfg.S.N)])
        for row in report["generations"]:
            w.writerow([_fmt(v) for v in row])
    summary = {k: v for k, v in report.items() if k not in ("series", "generations")}
    doc = {"config": cfg.summary(), "deviation": series.summary(), "sobolev": summary}
    if extra:
        doc.update(extra)
    doc["wall_clock"] = wall_clock
    dump_json(json.loads(json.dumps(doc, default=_json_default)), os.path.join(out_dir, "run.json"))


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serialisable: {type(x)}")
