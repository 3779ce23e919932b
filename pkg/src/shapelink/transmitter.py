"""Transmit chain: FEC encode, interleave, split, shape, interleave, map.

Bit streams are handled as ``(frames, length)`` arrays. Mapper bits are
``(frames, symbols, m)``; shaped bits fill the columns listed in ``S`` of
consecutive symbols, unshaped bits the remaining columns.
"""

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from .constellation import Constellation, ShapingSpec
from .errors import ConfigError
from .fec import ParityCheckMatrix
from .shaping_code import ShapingCode, shape_encode


def compute_L(n, m, S_size, k_s, n_s):
    """Number of shaping blocks per frame, from |S|(n - L k_s + L n_s) = m L n_s."""
    if min(n, m, S_size, k_s, n_s) <= 0:
        raise ConfigError("frame parameters must be positive")
    denom = m * n_s - S_size * (n_s - k_s)
    L = Fraction(S_size * n, denom)
    if L.denominator != 1:
        raise ConfigError(
            f"L = |S| n / (m n_s - |S| (n_s - k_s)) = {S_size}*{n}/{denom} is not an integer")
    L = int(L)
    if (n - L * k_s + L * n_s) % m:
        raise ConfigError(f"mapper bit count n - L k_s + L n_s = {n - L * k_s + L * n_s} "
                          f"is not a multiple of m={m}")
    return L


def rate(R_c, m, S_size, R_s):
    """Information bits per symbol of the shaped system."""
    if not (0 < R_c <= 1 and 0 < R_s <= 1):
        raise ConfigError("code rates must lie in (0, 1]")
    return R_c * (m + S_size * (R_s - 1))


class Interleaver:
    """Seeded uniform random permutation along the last axis."""

    def __init__(self, length, seed):
        self.length = int(length)
        self.seed = seed
        self.perm = np.random.default_rng(seed).permutation(self.length)
        self.inverse = np.argsort(self.perm)

    def interleave(self, x):
        return ad.take(x, self.perm, axis=-1)

    def deinterleave(self, x):
        return ad.take(x, self.inverse, axis=-1)


@dataclass(frozen=True, eq=False)
class Link:
    """Everything both ends of the link agree on for one frame format.

    ``shaping`` may be None for plain (uniform) BICM.
    """

    H: ParityCheckMatrix
    constellation: Constellation
    shaping: ShapingCode = None
    S: tuple = ()
    seed1: int = 1
    seed2: int = 2

    def __post_init__(self):
        object.__setattr__(self, "S", tuple(sorted(self.S)))
        m, n = self.m, self.H.n
        if self.shaping is None:
            if self.S:
                raise ConfigError("shaped positions given without a shaping code")
            if n % m:
                raise ConfigError(f"code length n={n} is not a multiple of m={m}")
            L = 0
        else:
            ShapingSpec(self.S, self.shaping.p0).check(m)
            L = compute_L(n, m, len(self.S), self.shaping.k_s, self.shaping.n_s)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "pi1", Interleaver(n, self.seed1))
        object.__setattr__(self, "pi2", Interleaver(max(self.n_c, 1), self.seed2))
        order = list(self.S) + [k for k in range(m) if k not in self.S]
        object.__setattr__(self, "unshaped", tuple(k for k in range(m) if k not in self.S))
        object.__setattr__(self, "column_order", np.argsort(order))

    @property
    def m(self):
        return self.constellation.m

    @property
    def n(self):
        return self.H.n

    @property
    def k(self):
        return self.H.k

    @property
    def n_d(self):
        return self.L * self.shaping.k_s if self.shaping else 0

    @property
    def n_c(self):
        return self.L * self.shaping.n_s if self.shaping else 0

    @property
    def n_sym(self):
        return (self.n - self.n_d + self.n_c) // self.m

    @property
    def p0(self):
        return self.shaping.p0 if self.shaping else 0.5

    @property
    def spec(self):
        return ShapingSpec(self.S, self.p0) if self.shaping else None

    @property
    def rate(self):
        return self.k / self.n_sym

    def with_constellation(self, constellation):
        return Link(self.H, constellation, self.shaping, self.S, self.seed1, self.seed2)

    # -- stream plumbing (work on numpy arrays and Vars alike) --

    def merge(self, s_part, st_part):
        """Unshaped stream ``(F, n - n_d)`` + shaped stream ``(F, n_c)`` ->
        mapper array ``(F, n_sym, m)``."""
        F = np.shape(ad.value(s_part))[0]
        u = ad.reshape(s_part, (F, self.n_sym, self.m - len(self.S)))
        if not self.S:
            return u
        sh = ad.reshape(st_part, (F, self.n_sym, len(self.S)))
        both = ad.concatenate([sh, u], axis=-1)
        return ad.take(both, self.column_order, axis=-1)

    def split(self, z):
        """Inverse of :meth:`merge`: returns ``(s_part, st_part)``."""
        F = np.shape(ad.value(z))[0]
        s_part = ad.reshape(ad.take(z, np.array(self.unshaped), axis=-1), (F, -1))
        if not self.S:
            return s_part, None
        st_part = ad.reshape(ad.take(z, np.array(self.S), axis=-1), (F, -1))
        return s_part, st_part


def build_frame(link, b):
    """Run the transmit chain on messages ``b`` of shape ``(F, k)``.

    Returns ``(x, book)`` with complex symbols ``x`` of shape ``(F, n_sym)``
    and a dict of every intermediate stream.
    """
    b = np.atleast_2d(np.asarray(b, dtype=np.int8))
    if b.shape[-1] != link.k:
        raise ConfigError(f"message length {b.shape[-1]} != k={link.k}")
    u = link.H.encoder.encode(b)
    v = link.pi1.interleave(u)
    d, s = v[:, :link.n_d], v[:, link.n_d:]
    if link.shaping is not None:
        c = shape_encode(link.shaping, d)
        st = link.pi2.interleave(c)
    else:
        c = st = np.zeros((b.shape[0], 0), dtype=np.int8)
    z = link.merge(s, st)
    idx = z.astype(np.int64) @ (1 << np.arange(link.m - 1, -1, -1))
    x = link.constellation.points[idx]
    return x, {"b": b, "u": u, "v": v, "d": d, "c": c, "s": s, "s_tilde": st, "z": z, "idx": idx}


def bookkeeping_json(link, book):
    """Debug export of a frame's index maps and streams."""
    out = {"n": link.n, "k": link.k, "m": link.m, "S": list(link.S), "L": link.L,
           "n_sym": link.n_sym, "pi1": link.pi1.perm.tolist(), "pi2": link.pi2.perm.tolist()}
    for key, val in book.items():
        out[key] = np.asarray(val).tolist()
    return json.dumps(out)
