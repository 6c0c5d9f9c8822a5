"""Lattice frequencies, sparse amplitude fields, convolution potentials and norms."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

Freq = tuple[int, int]

FRAMES = ("Original", "Gauged", "NormalForm", "Rotating")


def freq(x, y) -> Freq:
    return (int(x), int(y))


def norm_sq(n: Freq) -> int:
    return n[0] * n[0] + n[1] * n[1]


def japanese_bracket(n: Freq) -> float:
    return math.sqrt(1 + norm_sq(n))


def square_box(radius: int) -> list[Freq]:
    """All lattice points with max(|x|, |y|) <= radius, in lexicographic order."""
    r = int(radius)
    return [(x, y) for x in range(-r, r + 1) for y in range(-r, r + 1)]


@dataclass(frozen=True)
class AmplitudeField:
    """Finitely supported map Freq -> complex, tagged with its coordinate frame.

    Exact zeros are dropped at construction so equality is decidable.
    """

    entries: Mapping[Freq, complex] = field(default_factory=dict)
    frame: str = "Original"

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}")
        clean = {freq(*n): complex(v) for n, v in self.entries.items() if v != 0}
        object.__setattr__(self, "entries", clean)

    @classmethod
    def from_arrays(cls, modes: Iterable[Freq], values, frame="Original"):
        return cls(dict(zip((freq(*n) for n in modes), np.asarray(values).tolist())), frame)

    def support(self) -> set[Freq]:
        return set(self.entries)

    def __getitem__(self, n: Freq) -> complex:
        return self.entries.get(n, 0j)

    def __len__(self):
        return len(self.entries)

    def values(self, modes: Iterable[Freq]) -> np.ndarray:
        return np.array([self.entries.get(n, 0j) for n in modes], dtype=complex)

    def retag(self, frame: str) -> "AmplitudeField":
        return AmplitudeField(self.entries, frame)

    def scale(self, c: complex) -> "AmplitudeField":
        return AmplitudeField({n: c * v for n, v in self.entries.items()}, self.frame)

    def __add__(self, other: "AmplitudeField") -> "AmplitudeField":
        out = dict(self.entries)
        for n, v in other.entries.items():
            out[n] = out.get(n, 0j) + v
        return AmplitudeField(out, self.frame)

    def __sub__(self, other: "AmplitudeField") -> "AmplitudeField":
        return self + other.scale(-1)

    def to_json(self) -> dict:
        return {
            "frame": self.frame,
            "entries": [
                {"n": [n[0], n[1]], "re": v.real, "im": v.imag}
                for n, v in sorted(self.entries.items())
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AmplitudeField":
        ent = {freq(*e["n"]): complex(e["re"], e["im"]) for e in doc["entries"]}
        return cls(ent, doc.get("frame", "Original"))


def sobolev_norm(f: AmplitudeField, s: float) -> float:
    if s < 0:
        raise ValueError("s must be non-negative")
    total = math.fsum((1 + norm_sq(n)) ** s * abs(v) ** 2 for n, v in f.entries.items())
    return math.sqrt(total)


def mass(f: AmplitudeField) -> float:
    return math.fsum(abs(v) ** 2 for v in f.entries.values())


def l1_norm(f: AmplitudeField) -> float:
    return math.fsum(abs(v) for v in f.entries.values())


@dataclass(frozen=True)
class ConvPotential:
    """Real Fourier coefficients of a convolution potential.

    ``coeffs`` are the stored coefficients used by the dynamics; every other mode
    is zero for the dynamics but bounded by ``decay_constant * |n|**-s0`` when a
    conservative bound is needed (threshold and blow-up constants).  Stored values
    may exceed the tail model, which is how isolated low-mode spikes are expressed.
    """

    coeffs: Mapping[Freq, float] = field(default_factory=dict)
    s0: float = 1.0
    hs0_norm: float = 0.0
    decay_constant: float = 0.0

    def __post_init__(self):
        if self.s0 <= 0:
            raise ValueError("s0 must be positive")
        if self.hs0_norm < 0 or self.decay_constant < 0:
            raise ValueError("hs0_norm and decay_constant must be non-negative")
        clean = {}
        for n, v in self.coeffs.items():
            n = freq(*n)
            v = float(v)
            if v == 0.0:
                continue
            clean[n] = v
        object.__setattr__(self, "coeffs", clean)

    def v(self, n: Freq) -> float:
        return self.coeffs.get(n, 0.0)

    def bound(self, n: Freq) -> float:
        """Largest |v_n| compatible with the stored data and the tail model."""
        if n in self.coeffs:
            return abs(self.coeffs[n])
        if n == (0, 0):
            return 0.0
        return self.decay_constant * norm_sq(n) ** (-self.s0 / 2)

    def omega(self, n: Freq) -> float:
        return norm_sq(n) + self.v(n)

    @property
    def stored_radius(self) -> float:
        return max((math.sqrt(norm_sq(n)) for n in self.coeffs), default=0.0)

    def to_json(self) -> dict:
        return {
            "s0": self.s0,
            "hs0_norm": self.hs0_norm,
            "decay_constant": self.decay_constant,
            "coeffs": [{"n": [n[0], n[1]], "v": v} for n, v in sorted(self.coeffs.items())],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ConvPotential":
        return cls(
            {freq(*c["n"]): c["v"] for c in doc.get("coeffs", [])},
            s0=doc["s0"],
            hs0_norm=doc["hs0_norm"],
            decay_constant=doc["decay_constant"],
        )


def zero_potential() -> ConvPotential:
    return ConvPotential({}, s0=1.0, hs0_norm=0.0, decay_constant=0.0)


def decaying_potential(amplitude: float = 0.3, radius: int = 3, s0: float = 2.0) -> ConvPotential:
    """v_n = amplitude / (1 + |n|^2) on the square of given radius, zero beyond.

    The H^{s0} norm is evaluated on the stored coefficients; the tail bound uses
    ``amplitude * |n|^-s0``.
    """
    coeffs = {n: amplitude / (1 + norm_sq(n)) for n in square_box(radius)}
    h = math.sqrt(math.fsum((1 + norm_sq(n)) ** s0 * v * v for n, v in coeffs.items()))
    return ConvPotential(coeffs, s0=s0, hs0_norm=h, decay_constant=amplitude)


def _finite_or_null(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _finite_or_null(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite_or_null(v) for v in x]
    return x


def dump_json(obj, path):
    """Strict JSON: non-finite floats (e.g. an empty minimum) are written as null."""
    with open(path, "w") as fh:
        json.dump(_finite_or_null(obj), fh, indent=1, sort_keys=True, allow_nan=False)
        fh.write("\n")
