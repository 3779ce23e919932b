"""Constellation geometry, bit labels and shaped symbol distributions.

Point ``i`` always carries the ``m``-bit binary expansion of ``i`` as its
label, bit 0 being the most significant. Relabeling therefore moves points
around the index space rather than rewriting labels.
"""

import itertools
import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .constants import APSK32_GAMMA
from .errors import ConfigError, DegenerateConstellationError

LOG2 = np.log(2.0)


def bit_labels(m):
    """``(2**m, m)`` array of labels, row ``i`` = bits of ``i`` MSB first."""
    idx = np.arange(2 ** m)
    return ((idx[:, None] >> np.arange(m - 1, -1, -1)[None, :]) & 1).astype(np.int8)


@dataclass(frozen=True, eq=False)
class Constellation:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=complex).reshape(-1)
        object.__setattr__(self, "points", pts)
        M = pts.size
        if M < 2 or M & (M - 1):
            raise ConfigError(f"constellation size {M} is not a power of two >= 2")
        if not np.all(np.isfinite(pts)):
            raise ValueError("constellation points must be finite")
        if np.unique(pts).size != M:
            warnings.warn("constellation has coinciding points", RuntimeWarning, stacklevel=3)

    @property
    def M(self):
        return self.points.size

    @property
    def m(self):
        return int(self.M).bit_length() - 1

    @property
    def labels(self):
        return bit_labels(self.m)

    def as_real(self):
        """Points as an ``(M, 2)`` array of (re, im) rows."""
        return np.stack([self.points.real, self.points.imag], axis=1)

    def mean_energy(self, dist=None):
        e = np.abs(self.points) ** 2
        if dist is None:
            return float(e.mean())
        return float(np.dot(dist, e))


@dataclass(frozen=True)
class ShapingSpec:
    """Shaped bit positions ``S`` and the probability ``p0`` of a shaped zero."""

    S: tuple
    p0: float

    def __post_init__(self):
        object.__setattr__(self, "S", tuple(sorted(int(k) for k in self.S)))
        if not 0.0 <= self.p0 <= 1.0:
            raise ConfigError(f"p0={self.p0} outside [0, 1]")

    def check(self, m):
        if len(set(self.S)) != len(self.S) or any(k < 0 or k >= m for k in self.S):
            raise ConfigError(f"shaped positions {self.S} invalid for m={m}")
        if not 0 < len(self.S) < m:
            raise ConfigError(f"need 0 < |S| < m, got |S|={len(self.S)}, m={m}")


def symbol_distribution(m, spec):
    """Symbol probabilities as the product of per-bit label probabilities."""
    spec.check(m)
    labels = bit_labels(m)
    per_bit = np.full((2, m), 0.5)
    per_bit[0, list(spec.S)] = spec.p0
    per_bit[1, list(spec.S)] = 1.0 - spec.p0
    return np.prod(per_bit[labels, np.arange(m)], axis=1)


def shaped_zero_counts(m, S):
    """Per label: number of zeros and ones among the shaped positions."""
    sub = bit_labels(m)[:, list(S)]
    ones = sub.sum(axis=1).astype(float)
    return len(S) - ones, ones


def log_symbol_probs(m, S, p0_logit):
    """Differentiable natural-log symbol probabilities with p0 = sigmoid(logit)."""
    zeros, ones = shaped_zero_counts(m, S)
    return (zeros * ad.log_sigmoid(p0_logit) + ones * ad.log_sigmoid(-p0_logit)
            - (m - len(S)) * LOG2)


def normalize(raw_points, dist=None):
    """Scale points to unit average energy under ``dist`` (uniform if None)."""
    raw = np.asarray(raw_points, dtype=complex).reshape(-1)
    if dist is None:
        dist = np.full(raw.size, 1.0 / raw.size)
    energy = float(np.dot(dist, np.abs(raw) ** 2))
    if not energy > 0.0:
        raise DegenerateConstellationError("constellation has zero average energy")
    return Constellation(raw / np.sqrt(energy))


def normalize_real(raw, probs):
    """Differentiable counterpart of :func:`normalize` on ``(M, 2)`` points."""
    energy = ad.sum(probs * ad.sum(ad.square(raw), axis=1))
    return raw / ad.sqrt(energy)


def entropy(dist):
    """Entropy in bits, with 0*log(0) taken as 0."""
    p = np.asarray(dist, dtype=float)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log2(nz)))


# DVB-S2 32APSK bit mapping: label -> (ring, phase in degrees).
_APSK32_MAP = {
    0b10001: (0, 45.0), 0b10101: (0, 135.0), 0b10111: (0, 225.0), 0b10011: (0, 315.0),
    0b10000: (1, 15.0), 0b00000: (1, 45.0), 0b00001: (1, 75.0), 0b00101: (1, 105.0),
    0b00100: (1, 135.0), 0b10100: (1, 165.0), 0b10110: (1, 195.0), 0b00110: (1, 225.0),
    0b00111: (1, 255.0), 0b00011: (1, 285.0), 0b00010: (1, 315.0), 0b10010: (1, 345.0),
    0b11000: (2, 0.0), 0b01000: (2, 22.5), 0b11001: (2, 45.0), 0b01001: (2, 67.5),
    0b01101: (2, 90.0), 0b11101: (2, 112.5), 0b01100: (2, 135.0), 0b11100: (2, 157.5),
    0b11110: (2, 180.0), 0b01110: (2, 202.5), 0b11111: (2, 225.0), 0b01111: (2, 247.5),
    0b01011: (2, 270.0), 0b11011: (2, 292.5), 0b01010: (2, 315.0), 0b11010: (2, 337.5),
}


def make_apsk32(gamma=APSK32_GAMMA):
    """DVB-S2 4+12+16 APSK with its standard labeling, unit energy."""
    radii = (1.0, gamma[0], gamma[1])
    pts = np.empty(32, dtype=complex)
    for label, (ring, deg) in _APSK32_MAP.items():
        pts[label] = radii[ring] * np.exp(1j * np.deg2rad(deg))
    return normalize(pts)


def _pam_gray(bits):
    if len(bits) > 1:
        return (1 - 2 * bits[0]) * (2 ** len(bits[1:]) - _pam_gray(bits[1:]))
    return 1 - 2 * bits[0]


def make_qam32():
    """Rectangular 8x4 32-QAM with Gray labeling, unit energy.

    The first three label bits select the in-phase level and the last two
    the quadrature level, each with a binary reflected Gray code.
    """
    labels = bit_labels(5)
    pts = np.array([_pam_gray(list(b[:3])) + 1j * _pam_gray(list(b[3:])) for b in labels])
    return normalize(pts)


def _transform_labels(m, perm, flip):
    labels = bit_labels(m)
    weights = 1 << np.arange(m - 1, -1, -1)
    return (labels[:, list(perm)] @ weights) ^ flip


def best_label_transform(c, spec):
    """Exhaustive search over bit-position swaps and flips.

    Returns ``(perm, flip, energy)`` minimizing the shaped mean energy. The
    new label of old label ``i`` has bit ``p`` equal to old bit ``perm[p]``
    XOR bit ``p`` of ``flip``. Ties go to the lexicographically smallest
    ``(perm, flip)``.
    """
    m = c.m
    if m > 6:
        raise ConfigError("relabel search is limited to m <= 6")
    dist = symbol_distribution(m, spec)
    e = np.abs(c.points) ** 2
    flips = np.arange(2 ** m)
    best = None
    for perm in itertools.permutations(range(m)):
        new = _transform_labels(m, perm, 0)
        # energies[f] = sum_i dist[new_i ^ f] * e_i
        energies = dist[new[None, :] ^ flips[:, None]] @ e
        tol = 1e-12 * max(1.0, float(energies.min()))
        f = int(np.argmax(energies <= energies.min() + tol))
        if best is None or energies[f] < best[2] - tol:
            best = (tuple(perm), f, float(energies[f]))
    return best


def apply_label_transform(c, perm, flip):
    new = _transform_labels(c.m, perm, flip)
    pts = np.empty_like(c.points)
    pts[new] = c.points
    return Constellation(pts)


def relabel_for_shaping(c, spec):
    """Hamming-distance preserving relabeling that puts likely labels on
    low-energy points."""
    perm, flip, _ = best_label_transform(c, spec)
    return apply_label_transform(c, perm, flip)


def shaped_baseline(c, spec):
    """Relabel for shaping, then rescale to unit energy under the shaped distribution."""
    return normalize(relabel_for_shaping(c, spec).points, symbol_distribution(c.m, spec))


def to_json(c):
    return {"m": c.m, "points": [[float(p.real), float(p.imag)] for p in c.points],
            "label_order": "index"}


def from_json(obj):
    if obj.get("label_order", "index") != "index":
        raise ConfigError(f"unsupported label_order {obj['label_order']!r}")
    pts = np.array([complex(re, im) for re, im in obj["points"]])
    c = Constellation(pts)
    if c.m != int(obj["m"]):
        raise ConfigError(f"m={obj['m']} does not match {c.M} points")
    return c


def save_constellation(c, path):
    with open(path, "w") as fh:
        json.dump(to_json(c), fh, indent=1)


def load_constellation(path):
    with open(path) as fh:
        return from_json(json.load(fh))
