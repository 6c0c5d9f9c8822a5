"""Mode equations on finite boxes, conserved functionals, frame changes and the ODE driver."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .modes import AmplitudeField, ConvPotential, Freq, freq, l1_norm, mass, norm_sq, sobolev_norm


class IntegrationError(RuntimeError):
    pass


def _encode(xy: np.ndarray) -> np.ndarray:
    return xy[..., 0].astype(np.int64) * (1 << 32) + xy[..., 1].astype(np.int64)


class CubicSystem:
    """Precomputed cubic interactions among an ordered list of modes.

    Every triple (i, j, k) of box indices whose combination n_i - n_j + n_k is again
    a box mode is stored once, so the convolution sum costs one gather and one
    scatter per evaluation.  Interactions landing outside the box are dropped
    (Galerkin truncation), which keeps mass and the box-restricted Hamiltonian
    exactly conserved.
    """

    def __init__(self, modes: Sequence[Freq], V: ConvPotential, gauged: bool = False):
        self.modes = [freq(*n) for n in modes]
        if len(set(self.modes)) != len(self.modes):
            raise ValueError("duplicate modes in box")
        self.index = {n: i for i, n in enumerate(self.modes)}
        self.V = V
        self.gauged = gauged
        K = len(self.modes)
        self.omega = np.array([V.omega(n) for n in self.modes], dtype=float)
        if K == 0:
            self.i = self.j = self.k = self.out = np.zeros(0, dtype=np.int64)
            return
        xy = np.array(self.modes, dtype=np.int64)
        keys = _encode(xy)
        order = np.argsort(keys)
        skeys = keys[order]
        parts = []
        for j in range(K):
            # n_i - n_j + n_k for all i, k
            tgt = xy[:, None, :] - xy[j] + xy[None, :, :]
            tk = _encode(tgt).ravel()
            pos = np.searchsorted(skeys, tk)
            pos = np.minimum(pos, K - 1)
            hit = skeys[pos] == tk
            ii, kk = np.divmod(np.nonzero(hit)[0], K)
            out = order[pos[hit]]
            parts.append((ii, np.full(ii.shape, j), kk, out))
        self.i, self.j, self.k, self.out = (np.concatenate(p) for p in zip(*parts))
        if gauged:
            keep = (self.i != self.out) & (self.k != self.out)
            self.i, self.j, self.k, self.out = self.i[keep], self.j[keep], self.k[keep], self.out[keep]

    def __len__(self):
        return len(self.modes)

    def convolution(self, a: np.ndarray) -> np.ndarray:
        K = len(self.modes)
        if K == 0:
            return np.zeros(0, dtype=complex)
        w = a[self.i] * np.conj(a[self.j]) * a[self.k]
        return np.bincount(self.out, w.real, K) + 1j * np.bincount(self.out, w.imag, K)

    def rhs(self, t: float, a: np.ndarray) -> np.ndarray:
        c = self.convolution(a)
        if self.gauged:
            c = c - np.abs(a) ** 2 * a
        return 1j * (self.omega * a + c)

    def hamiltonian(self, a: np.ndarray) -> float:
        """D + G on the box (ungauged quartic part)."""
        d = 0.5 * float(np.sum(self.omega * np.abs(a) ** 2))
        if self.gauged:
            raise ValueError("hamiltonian is defined for the original equation")
        g = 0.25 * complex(np.sum(np.conj(a) * self.convolution(a)))
        return d + g.real

    def to_array(self, f: AmplitudeField) -> np.ndarray:
        extra = f.support() - set(self.index)
        if extra:
            raise ValueError(f"field support leaves the box, e.g. {sorted(extra)[0]}")
        return f.values(self.modes)

    def to_field(self, a: np.ndarray, frame: str) -> AmplitudeField:
        return AmplitudeField.from_arrays(self.modes, a, frame)


def _box_system(support, box, V, gauged):
    box = [freq(*n) for n in box]
    missing = set(support) - set(box)
    if missing:
        raise ValueError(f"field support leaves the box, e.g. {sorted(missing)[0]}")
    return CubicSystem(box, V, gauged)


def full_rhs(a: AmplitudeField, V: ConvPotential, box) -> AmplitudeField:
    if a.frame != "Original":
        raise ValueError("full_rhs expects the Original frame")
    sys_ = _box_system(a.support(), box, V, gauged=False)
    return sys_.to_field(sys_.rhs(0.0, sys_.to_array(a)), "Original")


def gauged_rhs(r: AmplitudeField, V: ConvPotential, box) -> AmplitudeField:
    if r.frame != "Gauged":
        raise ValueError("gauged_rhs expects the Gauged frame")
    sys_ = _box_system(r.support(), box, V, gauged=True)
    return sys_.to_field(sys_.rhs(0.0, sys_.to_array(r)), "Gauged")


def hamiltonian(a: AmplitudeField, V: ConvPotential) -> float:
    """D + G summed over the support of ``a``."""
    modes = sorted(a.support())
    sys_ = CubicSystem(modes, V)
    x = sys_.to_array(a)
    d = 0.5 * math.fsum(float(w) * abs(v) ** 2 for w, v in zip(sys_.omega, x))
    g = 0.25 * complex(np.sum(np.conj(x) * sys_.convolution(x))) if modes else 0j
    total = d + g
    assert abs(total.imag) <= 1e-12 * max(1.0, abs(total)), "hamiltonian is not real"
    return total.real


def gauge_constant(f: AmplitudeField) -> float:
    return 2.0 * mass(f)


def gauge_forward(r: AmplitudeField, t: float) -> AmplitudeField:
    """Gauged r -> original a = exp(iGt) r with G = 2 * mass(r)."""
    if r.frame != "Gauged":
        raise ValueError("gauge_forward expects the Gauged frame")
    ph = np.exp(1j * gauge_constant(r) * t)
    return AmplitudeField({n: ph * v for n, v in r.entries.items()}, "Original")


def gauge_backward(a: AmplitudeField, t: float) -> AmplitudeField:
    if a.frame != "Original":
        raise ValueError("gauge_backward expects the Original frame")
    ph = np.exp(-1j * gauge_constant(a) * t)
    return AmplitudeField({n: ph * v for n, v in a.entries.items()}, "Gauged")


def rotate_forward(alpha: AmplitudeField, V: ConvPotential, t: float) -> AmplitudeField:
    """Normal-form alpha -> rotating beta with alpha_n = exp(i omega_n t) beta_n."""
    if alpha.frame != "NormalForm":
        raise ValueError("rotate_forward expects the NormalForm frame")
    return AmplitudeField({n: v * rotation_phase(n, V, -t) for n, v in alpha.entries.items()}, "Rotating")


def rotate_backward(beta: AmplitudeField, V: ConvPotential, t: float) -> AmplitudeField:
    if beta.frame != "Rotating":
        raise ValueError("rotate_backward expects the Rotating frame")
    return AmplitudeField({n: v * rotation_phase(n, V, t) for n, v in beta.entries.items()}, "NormalForm")


def rotation_phase(n: Freq, V: ConvPotential, t: float) -> complex:
    """exp(i (|n|^2 + v_n) t), reducing the integer part modulo 2*pi in extended precision.

    Frequencies of certified sets reach |n|^2 ~ 1e25, far beyond what a double
    product |n|^2 * t can resolve.
    """
    import mpmath

    k = norm_sq(n)
    if k * abs(t) < 1e6:
        return complex(np.exp(1j * (k + V.v(n)) * t))
    with mpmath.workdps(40 + len(str(k))):
        ang = mpmath.fmod(mpmath.mpf(k) * mpmath.mpf(t), 2 * mpmath.pi)
        ang = float(ang) + V.v(n) * t
    return complex(np.exp(1j * ang))


# ----------------------------------------------------------------------------
# integration


@dataclass
class Trajectory:
    times: np.ndarray
    values: np.ndarray  # shape (len(times), dim)
    modes: list | None = None  # Freq per column, or None for plain vectors
    frame: str = "Original"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def field(self, idx: int) -> AmplitudeField:
        return AmplitudeField.from_arrays(self.modes, self.values[idx], self.frame)

    @property
    def states(self):
        if self.modes is None:
            return [v for v in self.values]
        return [self.field(i) for i in range(len(self.times))]


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0,
    t_span,
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-12,
    t_eval=None,
) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) with step rejection and dense output.

    ``rhs(t, y)`` acts on complex vectors.  Failures (step size collapse, non-finite
    state) raise :class:`IntegrationError`.
    """
    if rel_tol <= 0 or abs_tol <= 0:
        raise ValueError("tolerances must be positive")
    y0 = np.asarray(y0, dtype=complex)
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t_eval is None:
        t_eval = np.array([t0, t1]) if t1 > t0 else np.array([t0])
    t_eval = np.asarray(t_eval, dtype=float)
    nfev = [0]

    def f(t, y):
        nfev[0] += 1
        dy = rhs(t, y)
        if not np.all(np.isfinite(dy)):
            raise IntegrationError(f"non-finite derivative at t={t:.6g}")
        return dy

    if t1 == t0:
        return Trajectory(np.array([t0]), y0[None, :].copy(), meta={"steps": 0, "rejected": 0, "rel_tol": rel_tol, "abs_tol": abs_tol})
    sol = solve_ivp(f, (t0, t1), y0, method="RK45", rtol=rel_tol, atol=abs_tol, t_eval=t_eval, dense_output=False)
    if sol.status != 0:
        raise IntegrationError(f"integration failed: {sol.message}")
    if not np.all(np.isfinite(sol.y)):
        raise IntegrationError("non-finite state")
    meta = {
        "rel_tol": rel_tol,
        "abs_tol": abs_tol,
        "nfev": int(sol.nfev),
        # RK45 uses 6 evaluations per attempted step (FSAL)
        "steps": int(sol.nfev // 6),
    }
    return Trajectory(sol.t, sol.y.T.copy(), meta=meta)


def integrate_field(
    system: CubicSystem,
    a0: AmplitudeField,
    t_span,
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-12,
    t_eval=None,
) -> Trajectory:
    tr = integrate(system.rhs, system.to_array(a0), t_span, rel_tol, abs_tol, t_eval)
    tr.modes = list(system.modes)
    tr.frame = a0.frame
    return tr


def write_trajectory_csv(path, traj: Trajectory, V: ConvPotential, s: float = 1.0, tracked=None):
    tracked = list(tracked if tracked is not None else traj.modes)
    cols = [traj.modes.index(n) for n in tracked]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["t", "mass", "hamiltonian", "sobolev_s", "l1"]
        for n in tracked:
            head += [f"re_({n[0]},{n[1]})", f"im_({n[0]},{n[1]})"]
        w.writerow(head)
        for idx, t in enumerate(traj.times):
            f = traj.field(idx)
            row = [repr(float(t)), repr(mass(f)), repr(hamiltonian(f.retag("Original"), V)),
                   repr(sobolev_norm(f, s)), repr(l1_norm(f))]
            for c in cols:
                v = traj.values[idx, c]
                row += [repr(float(v.real)), repr(float(v.imag))]
            w.writerow(row)
