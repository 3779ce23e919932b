"""Capacity estimates, gap to Gaussian capacity, and the BER harness."""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import awgn, ebn0_to_n0, fading_link
from .constellation import Constellation, bit_labels, entropy
from .demap import map_demap
from .errors import ConfigError, SaturationError
from .receiver import Observation, receive
from .transmitter import build_frame


def gaussian_capacity(snr_linear):
    return np.log2(1.0 + np.asarray(snr_linear, dtype=float))


def _points(c):
    return c.points if isinstance(c, Constellation) else np.asarray(c, dtype=complex)


def _bit_entropies(dist, m):
    labels = bit_labels(m)
    p1 = np.clip(dist @ labels, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(p1 * np.log2(p1) + (1 - p1) * np.log2(1 - p1))
    return np.nan_to_num(h)


def _bit_loss_samples(points, log_prior, idx, noise, N0):
    """Per-sample sum over bits of log2(1 + exp(-s_k * APP_k))."""
    m = int(np.log2(points.size))
    labels = bit_labels(m).astype(float)
    y = points[idx] + np.sqrt(N0) * noise
    metric = -np.abs(y[:, None] - points[None, :]) ** 2 / N0 + log_prior[None, :]
    w = np.exp(metric - metric.max(axis=1, keepdims=True))
    # the largest term is 1, so only one side can underflow; floor it
    s1 = np.maximum(w @ labels, 1e-300)
    s0 = np.maximum(w @ (1.0 - labels), 1e-300)
    app = np.log(s1) - np.log(s0)
    s = 2.0 * labels[idx] - 1.0
    return np.logaddexp(0.0, -s * app).sum(axis=1) / np.log(2.0)


class _CommonDraws:
    """Fixed symbol indices and unit noise, reused across SNR values."""

    def __init__(self, dist, samples, rng, chunk=100_000):
        self.chunks = []
        left = int(samples)
        while left > 0:
            n = min(chunk, left)
            idx = rng.choice(dist.size, size=n, p=dist)
            noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
            self.chunks.append((idx, noise))
            left -= n

    def capacity(self, points, dist, N0):
        m = int(np.log2(points.size))
        with np.errstate(divide="ignore"):
            log_prior = np.log(dist)
        vals = np.concatenate([_bit_loss_samples(points, log_prior, i, z, N0) for i, z in self.chunks])
        cap = _bit_entropies(dist, m).sum() - vals.mean()
        return cap, vals.std(ddof=1) / np.sqrt(vals.size)


def bicm_capacity(constellation, dist, N0, samples=100_000, rng=None, return_stderr=False):
    """Monte-Carlo estimate of sum_k I(B_k; Y) over AWGN with X ~ dist.

    Uses exact MAP a posteriori LLRs: I(B_k;Y) = H(B_k) - E[log2(1 + exp(-s L))]
    with s = +1 for a sent one and -1 for a zero.
    """
    if samples < 2:
        raise ConfigError("need at least 2 samples")
    points = _points(constellation)
    dist = np.full(points.size, 1.0 / points.size) if dist is None else np.asarray(dist, dtype=float)
    rng = np.random.default_rng(rng)
    cap, se = _CommonDraws(dist, samples, rng).capacity(points, dist, float(N0))
    return (cap, se) if return_stderr else cap


def capacity_curve(constellation, dist, snr_db_list, samples=100_000, seed=0):
    """``[(snr_db, capacity_bits, stderr)]`` with the same draws at every SNR."""
    points = _points(constellation)
    dist = np.full(points.size, 1.0 / points.size) if dist is None else np.asarray(dist, dtype=float)
    draws = _CommonDraws(dist, samples, np.random.default_rng(seed))
    out = []
    for snr_db in snr_db_list:
        cap, se = draws.capacity(points, dist, 10.0 ** (-snr_db / 10.0))
        out.append((float(snr_db), float(cap), float(se)))
    return out


def gap_to_capacity(constellation, dist, R_target, samples=1_000_000, seed=0, tol=0.005,
                    return_snr=False):
    """SNR gap in dB between the BICM capacity and the Gaussian capacity at ``R_target``.

    Bisection over SNR (dB) with common random numbers until the capacity
    bracket is narrower than ``tol`` bits, then linear interpolation.
    """
    points = _points(constellation)
    m = int(np.log2(points.size))
    dist = np.full(points.size, 1.0 / points.size) if dist is None else np.asarray(dist, dtype=float)
    if not 0 < R_target < min(m, entropy(dist)):
        raise SaturationError(f"rate {R_target} is not below the input entropy {entropy(dist):.4f}")
    draws = _CommonDraws(dist, samples, np.random.default_rng(seed))
    cap = lambda snr_db: draws.capacity(points, dist, 10.0 ** (-snr_db / 10.0))[0]  # noqa: E731
    shannon_db = 10.0 * np.log10(2.0 ** R_target - 1.0)
    lo, hi = shannon_db, shannon_db + 1.0
    c_lo, c_hi = cap(lo), cap(hi)
    while c_hi < R_target:
        lo, c_lo = hi, c_hi
        hi += 2.0
        if hi > shannon_db + 40.0:
            raise SaturationError(f"capacity saturates below {R_target} bits (reached {c_hi:.4f})")
        c_hi = cap(hi)
    while c_hi - c_lo > tol:
        mid = 0.5 * (lo + hi)
        c_mid = cap(mid)
        if c_mid < R_target:
            lo, c_lo = mid, c_mid
        else:
            hi, c_hi = mid, c_mid
    snr = lo + (R_target - c_lo) * (hi - lo) / (c_hi - c_lo) if c_hi > c_lo else hi
    snr, gap = float(snr), float(snr - shannon_db)
    return (gap, snr) if return_snr else gap


# -- BER harness -----------------------------------------------------------

@dataclass(frozen=True)
class BerPoint:
    eb_n0_db: float
    bit_errors: int
    bits: int
    frame_errors: int
    frames: int

    def __post_init__(self):
        if not 0 <= self.bit_errors <= self.bits:
            raise ConfigError("bit_errors must lie in [0, bits]")

    @property
    def ber(self):
        return self.bit_errors / self.bits if self.bits else float("nan")

    @property
    def low_confidence(self):
        return self.bit_errors < 20

    @property
    def ci(self):
        """95% normal-approximation interval; rule of three when no errors were seen."""
        if self.bits == 0:
            return (float("nan"), float("nan"))
        if self.bit_errors == 0:
            return (0.0, 3.0 / self.bits)
        p = self.ber
        half = 1.96 * math.sqrt(p * (1 - p) / self.bits)
        return (max(0.0, p - half), min(1.0, p + half))


class UncodedSystem:
    """Uncoded transmission with symbol-by-symbol MAP hard decisions."""

    def __init__(self, constellation, symbols_per_frame=1000):
        self.constellation = constellation
        self.symbols_per_frame = symbols_per_frame
        self.rate = float(constellation.m)

    def run(self, ebn0_db, n_frames, rng):
        c = self.constellation
        idx = rng.integers(0, c.M, (n_frames, self.symbols_per_frame))
        if np.isinf(ebn0_db):
            y = c.points[idx]
        else:
            y = awgn(c.points[idx], ebn0_to_n0(ebn0_db, self.rate), rng)
        N0 = 1e-12 if np.isinf(ebn0_db) else ebn0_to_n0(ebn0_db, self.rate)
        le = map_demap(y.reshape(-1), c, N0)
        errs = (le > 0) != c.labels[idx.reshape(-1)].astype(bool)
        per_frame = errs.reshape(n_frames, -1).sum(axis=1)
        return int(per_frame.sum()), errs.size, int((per_frame > 0).sum()), n_frames


class CodedSystem:
    """Transmitter, channel and receiver for one link configuration.

    ``fading`` is a BlockFadingConfig or None for AWGN. ``rate`` (info bits
    per symbol) sets the Eb/N0 reference; defaults to the link's own rate.
    """

    def __init__(self, link, receiver_cfg, fading=None, rate=None):
        self.link = link
        self.receiver_cfg = receiver_cfg
        self.fading = fading
        self.rate = link.rate if rate is None else rate

    def run(self, ebn0_db, n_frames, rng):
        link = self.link
        b = rng.integers(0, 2, (n_frames, link.k))
        x, _ = build_frame(link, b)
        N0 = 1e-12 if np.isinf(ebn0_db) else ebn0_to_n0(ebn0_db, self.rate)
        if self.fading is None:
            obs = Observation(awgn(x, N0, rng), N0)
        else:
            eq, _, _ = fading_link(x, self.fading, N0, rng)
            obs = Observation.equalized(eq)
        b_hat, _ = receive(obs, link, self.receiver_cfg)
        per_frame = (b_hat != b).sum(axis=1)
        return int(per_frame.sum()), b.size, int((per_frame > 0).sum()), n_frames


def _batch_rng(seed, point, batch):
    return np.random.default_rng([seed, point, batch])


def ber_point(system, ebn0_db, min_errors=100, max_bits=10 ** 8, frames_per_batch=50,
              seed=0, point_index=0, threads=1):
    """Simulate batches until ``min_errors`` bit errors or ``max_bits`` bits.

    Batch ``j`` of point ``i`` always uses the generator seeded by
    ``(seed, i, j)``, so systems run with the same seed see the same draws
    (paired comparison). Batches run ``threads`` at a time and the stop rule
    is checked after each round, in batch order.
    """
    errors = bits = ferr = frames = 0
    batch = 0
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        while errors < min_errors and bits < max_bits:
            jobs = [pool.submit(system.run, ebn0_db, frames_per_batch, _batch_rng(seed, point_index, batch + j))
                    for j in range(max(1, threads))]
            batch += len(jobs)
            for job in jobs:
                e, n, fe, f = job.result()
                errors, bits, ferr, frames = errors + e, bits + n, ferr + fe, frames + f
    return BerPoint(float(ebn0_db), errors, bits, ferr, frames)


def ber_sweep(system, ebn0_list, min_errors=100, max_bits=10 ** 8, frames_per_batch=50, seed=0,
              threads=1):
    return [ber_point(system, eb, min_errors, max_bits, frames_per_batch, seed, i, threads)
            for i, eb in enumerate(ebn0_list)]


BER_COLUMNS = ("eb_n0_db", "ber", "ci_low", "ci_high", "bits", "errors", "frame_errors", "frames",
               "low_confidence")
CAPACITY_COLUMNS = ("snr_db", "capacity_bits", "stderr")


def ber_rows(points):
    for p in points:
        lo, hi = p.ci
        yield {"eb_n0_db": repr(p.eb_n0_db), "ber": repr(p.ber), "ci_low": repr(lo), "ci_high": repr(hi),
               "bits": p.bits, "errors": p.bit_errors, "frame_errors": p.frame_errors,
               "frames": p.frames, "low_confidence": int(p.low_confidence)}


def write_ber_csv(points, path, system_name=None):
    """One system's points, or ``[(name, points), ...]`` with a leading system column."""
    named = points if system_name is None and points and isinstance(points[0], tuple) else None
    if named is None and system_name is not None:
        named = [(system_name, points)]
    cols = BER_COLUMNS if named is None else ("system",) + BER_COLUMNS
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        if named is None:
            w.writerows(ber_rows(points))
            return
        for name, pts in named:
            for row in ber_rows(pts):
                w.writerow({"system": name, **row})


def write_capacity_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CAPACITY_COLUMNS)
        for snr_db, cap, se in rows:
            w.writerow([repr(snr_db), repr(cap), repr(se)])
