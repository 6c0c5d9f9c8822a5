"""The N-slot toy model on the invariant plane where each generation shares one value."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .dynamics import Trajectory, integrate
from .modes import AmplitudeField

DEFAULT_SEED_AMPLITUDE = 1e-3
DEFAULT_THRESHOLD = 0.1


def toy_state(values) -> np.ndarray:
    b = np.asarray(values, dtype=complex).ravel()
    if len(b) < 2:
        raise ValueError("toy states need at least 2 slots")
    return b


def toy_rhs(b: np.ndarray) -> np.ndarray:
    """bdot_j = -i |b_j|^2 b_j + 2i conj(b_j) (b_{j-1}^2 + b_{j+1}^2), b_0 = b_{N+1} = 0."""
    b = np.asarray(b, dtype=complex)
    sq = b * b
    nb = np.zeros_like(b)
    nb[1:] += sq[:-1]
    nb[:-1] += sq[1:]
    return -1j * np.abs(b) ** 2 * b + 2j * np.conj(b) * nb


def toy_mass(b) -> float:
    return float(math.fsum(abs(v) ** 2 for v in np.asarray(b).ravel()))


def toy_hamiltonian(b) -> float:
    """-1/4 sum |b_j|^4 + sum Re(conj(b_j)^2 b_{j+1}^2); the field is 2i dh/dbbar."""
    b = np.asarray(b, dtype=complex)
    return float(-0.25 * np.sum(np.abs(b) ** 4) + np.sum((np.conj(b[:-1]) ** 2 * b[1:] ** 2).real))


def run_toy(b0, t_end: float, n_samples: int = 513, rel_tol: float = 1e-12, abs_tol: float = 1e-14) -> Trajectory:
    b0 = toy_state(b0)
    t_eval = np.linspace(0.0, t_end, n_samples) if t_end > 0 else None
    return integrate(lambda t, y: toy_rhs(y), b0, (0.0, t_end), rel_tol, abs_tol, t_eval)


def rescale_solution(traj: Trajectory, lam: float) -> Trajectory:
    """b^lam(t) = b(t / lam^2) / lam, sampled at the rescaled times."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return Trajectory(traj.times * lam ** 2, traj.values / lam, traj.modes, traj.frame, dict(traj.meta, rescaled_by=lam))


_FD6 = np.array([-1, 9, -45, 0, 45, -9, 1]) / 60.0


def rhs_residual(traj: Trajectory, rhs=toy_rhs) -> float:
    """max over interior samples of |finite-difference derivative - rhs|.

    Needs uniformly spaced samples; uses the sixth-order central stencil.
    """
    t = traj.times
    if len(t) < 7:
        raise ValueError("need at least 7 samples")
    h = np.diff(t)
    if np.max(np.abs(h - h[0])) > 1e-9 * max(1.0, abs(t[-1])):
        raise ValueError("samples must be uniformly spaced")
    y = traj.values
    worst = 0.0
    for i in range(3, len(t) - 3):
        d = _FD6 @ y[i - 3:i + 4] / h[0]
        worst = max(worst, float(np.max(np.abs(d - rhs(y[i])))))
    return worst


def restrict_to_mtilde(beta: AmplitudeField, S, tol: float = 1e-12) -> np.ndarray:
    """Common value of each generation; fails on unequal values or leakage."""
    gens = S.generations
    members = {n for g in gens for n in g}
    extra = beta.support() - members
    if extra:
        raise ValueError(f"support leaves the generation set, e.g. {sorted(extra)[0]}")
    b = np.zeros(len(gens), dtype=complex)
    for j, g in enumerate(gens):
        vals = [beta[n] for n in g]
        b[j] = vals[0]
        spread = max(abs(v - vals[0]) for v in vals)
        if spread > tol * max(1.0, abs(vals[0])):
            raise ValueError(f"generation {j + 1} values differ by {spread:.3g}")
    return b


def lift_from_mtilde(b, S, frame: str = "Rotating") -> AmplitudeField:
    b = toy_state(b)
    if len(b) != S.N:
        raise ValueError(f"toy state has {len(b)} slots, set has {S.N} generations")
    return AmplitudeField({n: b[j] for j, g in enumerate(S.generations) for n in g}, frame)


def write_toy_csv(path, traj: Trajectory):
    N = traj.values.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"|b_{j + 1}|^2" for j in range(N)] + ["mass"])
        for t, b in zip(traj.times, traj.values):
            p = np.abs(b) ** 2
            w.writerow([repr(float(t))] + [repr(float(x)) for x in p] + [repr(toy_mass(b))])


# ----------------------------------------------------------------------------
# slider search


@dataclass
class SliderResult:
    b0: np.ndarray
    T0: float
    achieved: float  # fraction of mass in the target slot at T0
    eps_prime: float  # 1 - achieved
    success: bool
    start: int
    end: int
    phases: list = field(default_factory=list)
    stage_times: list = field(default_factory=list)
    evaluations: int = 0

    def to_json(self) -> dict:
        return {
            "b0": [[float(v.real), float(v.imag)] for v in self.b0],
            "T0": self.T0, "achieved": self.achieved, "eps_prime": self.eps_prime, "success": self.success,
            "start": self.start, "end": self.end, "phases": self.phases, "stage_times": self.stage_times,
            "evaluations": self.evaluations,
        }


def _initial(N, start, eps, seeds, phases, delta):
    b = np.zeros(N, dtype=complex)
    seeded = [start + 1 + k for k in range(len(phases))]
    b[start - 1] = 1.0
    for s, ph in zip(seeded, phases):
        b[s - 1] = delta * np.exp(1j * ph)
    b /= math.sqrt(toy_mass(b))
    if abs(b[start - 1]) ** 2 < 1 - eps:
        raise ValueError("seed amplitude too large for the requested start purity")
    return b


def _peak(b0, slot, t_max, samples, rel_tol):
    tr = run_toy(b0, t_max, samples, rel_tol, rel_tol * 1e-2)
    frac = np.abs(tr.values[:, slot - 1]) ** 2 / toy_mass(b0)
    i = int(np.argmax(frac))
    return float(frac[i]), float(tr.times[i]), tr


def slider_search(N: int, target_start: int, target_end: int, eps: float = 0.05, budget: int = 400,
                  delta: float = DEFAULT_SEED_AMPLITUDE, threshold: float = DEFAULT_THRESHOLD,
                  t_max: float | None = None, samples: int = 4001, rel_tol: float = 1e-11,
                  time_budget: float = 300.0, search_tol: float = 1e-9) -> SliderResult:
    """Stage-by-stage phase search for an orbit moving mass from one slot to a later one.

    Slot ``target_start`` starts with almost all the mass; slots start+1..end carry
    seeds of amplitude ``delta`` whose phases are tuned one stage at a time to
    maximise the peak mass reached in the next slot.  ``budget`` caps the number
    of integrations and ``time_budget`` the wall time (seconds).  Phase candidates
    are scored at ``search_tol``; the returned orbit is integrated at ``rel_tol``.
    """
    if not 1 <= target_start <= target_end <= N:
        raise ValueError("need 1 <= start <= end <= N")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if N < 2:
        raise ValueError("N must be at least 2")
    if target_start == target_end:
        b0 = _initial(N, target_start, eps, [], [], delta)
        return SliderResult(b0, 0.0, 1.0, 0.0, True, target_start, target_end)
    stages = target_end - target_start
    if t_max is None:
        t_max = 4.0 * (stages + 1) * math.log(1 / delta)
    clock = time.monotonic()
    evals = [0]
    phases: list[float] = []
    stage_times: list[float] = []
    best_frac, best_t = 0.0, 0.0

    def objective(ph, k):
        if evals[0] >= budget or time.monotonic() - clock > time_budget:
            return 0.0
        evals[0] += 1
        b0 = _initial(N, target_start, eps, [], phases + [ph], delta)
        f, t, _ = _peak(b0, target_start + k + 1, t_max, samples, search_tol)
        return f

    for k in range(stages):
        grid = np.linspace(0, 2 * math.pi, 16, endpoint=False)
        vals = [objective(ph, k) for ph in grid]
        i = int(np.argmax(vals))
        lo, hi = grid[i] - 2 * math.pi / 16, grid[i] + 2 * math.pi / 16
        res = minimize_scalar(lambda ph: -objective(ph, k), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-6, "maxiter": 60})
        ph = float(res.x) if -res.fun >= vals[i] else float(grid[i])
        phases.append(ph % (2 * math.pi))
        b0 = _initial(N, target_start, eps, [], phases, delta)
        best_frac, best_t, _ = _peak(b0, target_start + k + 1, t_max, samples, rel_tol)
        stage_times.append(best_t)
    b0 = _initial(N, target_start, eps, [], phases, delta)
    # first time the target slot reaches the achieved level (up to the threshold)
    level = min(best_frac, 1.0)
    tr = run_toy(b0, t_max, samples, rel_tol, rel_tol * 1e-2)
    frac = np.abs(tr.values[:, target_end - 1]) ** 2 / toy_mass(b0)
    need = max(1 - threshold, level - 1e-9) if level >= 1 - threshold else level - 1e-9
    T0 = float(tr.times[int(np.argmax(frac >= need))])
    achieved = float(frac[int(np.argmax(frac >= need))])
    return SliderResult(b0, T0, achieved, 1 - achieved, achieved >= 1 - threshold, target_start, target_end,
                        phases, stage_times, evals[0])
