import csv

import numpy as np
import pytest
from scipy import integrate

from shapelink.constellation import Constellation, ShapingSpec, make_apsk32, shaped_baseline, symbol_distribution
from shapelink.errors import ConfigError, SaturationError
from shapelink.fec import builtin_code
from shapelink.metrics import (
    BER_COLUMNS, CAPACITY_COLUMNS, BerPoint, CodedSystem, UncodedSystem, ber_point, ber_sweep,
    bicm_capacity, capacity_curve, gap_to_capacity, gaussian_capacity, write_ber_csv,
    write_capacity_csv,
)
from shapelink.receiver import ReceiverConfig
from shapelink.transmitter import Link
from oracles import q_function

BPSK = Constellation(np.array([-1.0, 1.0]))
QPSK = Constellation(np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2))


def bpsk_mi(sigma2):
    """I(X;Y) for equiprobable +-1 in real Gaussian noise of variance sigma2, by quadrature."""
    s = np.sqrt(sigma2)

    def integrand(n):
        return np.exp(-n * n / 2) / np.sqrt(2 * np.pi) * np.logaddexp(0, -2 * (1 + s * n) / sigma2)

    val, _ = integrate.quad(integrand, -12, 12, limit=200)
    return 1 - val / np.log(2)


@pytest.mark.parametrize("snr,want", [(1, 1.0), (3, 2.0), (7, 3.0)])
def test_gaussian_capacity(snr, want):
    assert gaussian_capacity(snr) == pytest.approx(want)


def test_bpsk_saturates():
    assert bicm_capacity(BPSK, None, 1e-3, samples=20000, rng=0) == pytest.approx(1.0, abs=0.01)


def test_zero_at_infinite_noise():
    assert bicm_capacity(make_apsk32(), None, 1e6, samples=20000, rng=0) == pytest.approx(0.0, abs=0.01)


@pytest.mark.parametrize("N0", [0.5, 1.0, 2.0])
def test_bpsk_matches_quadrature(N0):
    cap, se = bicm_capacity(BPSK, None, N0, samples=200_000, rng=1, return_stderr=True)
    assert abs(cap - bpsk_mi(N0 / 2)) < 4 * se + 1e-4


def test_qpsk_is_two_bpsk_channels():
    # Es/N0 = 0 dB: each quadrature carries +-1/sqrt(2) in noise of variance 1/2,
    # the same channel as +-1 in noise of variance 1
    cap, se = bicm_capacity(QPSK, None, 1.0, samples=200_000, rng=2, return_stderr=True)
    assert abs(cap - 2 * bpsk_mi(1.0)) < 4 * se + 1e-4


def test_capacity_bounded_by_entropy():
    c = make_apsk32()
    dist = symbol_distribution(5, ShapingSpec((0,), 0.8125))
    for N0 in (1e-4, 0.1, 1.0):
        cap = bicm_capacity(shaped_baseline(c, ShapingSpec((0,), 0.8125)), dist, N0, samples=20000, rng=3)
        assert cap <= -np.sum(dist * np.log2(dist)) + 1e-9
        assert cap <= 5


def test_stderr_halves_with_four_times_samples():
    c = make_apsk32()
    _, se1 = bicm_capacity(c, None, 0.2, samples=50_000, rng=4, return_stderr=True)
    _, se2 = bicm_capacity(c, None, 0.2, samples=100_000, rng=5, return_stderr=True)
    assert se2 / se1 == pytest.approx(1 / np.sqrt(2), rel=0.2)


def test_capacity_curve_monotone():
    rows = capacity_curve(make_apsk32(), None, np.arange(0, 21, 2.0), samples=20000, seed=6)
    caps = [r[1] for r in rows]
    assert all(a < b for a, b in zip(caps, caps[1:]))
    assert capacity_curve(make_apsk32(), None, [5.0], samples=5000, seed=6) == \
        capacity_curve(make_apsk32(), None, [5.0], samples=5000, seed=6)


def test_gap_positive_and_bracketed():
    gap, snr = gap_to_capacity(make_apsk32(), None, 3.0, samples=50_000, seed=7, return_snr=True)
    assert 0 < gap < 3
    cap = bicm_capacity(make_apsk32(), None, 10 ** (-snr / 10), samples=50_000, rng=np.random.default_rng(7))
    assert cap == pytest.approx(3.0, abs=0.01)


def test_gap_saturation():
    with pytest.raises(SaturationError):
        gap_to_capacity(BPSK, None, 1.0, samples=1000)
    dist = symbol_distribution(5, ShapingSpec((0,), 0.95))
    with pytest.raises(SaturationError):
        gap_to_capacity(make_apsk32(), dist, 4.5, samples=1000)


def test_capacity_needs_samples():
    with pytest.raises(ConfigError):
        bicm_capacity(BPSK, None, 1.0, samples=1)


# -- BER harness ---------------------------------------------------------------

def test_ber_point_ci():
    p = BerPoint(5.0, 100, 10 ** 5, 40, 100)
    lo, hi = p.ci
    assert p.ber == 1e-3 and lo < 1e-3 < hi
    assert hi - lo == pytest.approx(2 * 1.96 * np.sqrt(1e-3 * (1 - 1e-3) / 1e5))
    assert not p.low_confidence
    z = BerPoint(9.0, 0, 3000, 0, 3)
    assert z.ci == (0.0, 1e-3) and z.low_confidence
    with pytest.raises(ConfigError):
        BerPoint(0.0, 5, 4, 1, 1)


def test_noiseless_point_has_no_errors():
    p = ber_point(UncodedSystem(make_apsk32(), 100), float("inf"), max_bits=10 ** 4)
    assert p.bit_errors == 0 and p.ber == 0 and p.bits >= 10 ** 4


@pytest.mark.parametrize("eb", [0, 2, 4, 6, 8, 10])
def test_uncoded_bpsk_matches_q_function(eb):
    p = ber_point(UncodedSystem(BPSK, 2000), eb, min_errors=100, frames_per_batch=25, seed=8,
                  point_index=eb)
    lo, hi = p.ci
    assert abs(p.ber - q_function(np.sqrt(2 * 10 ** (eb / 10)))) <= 3 * (hi - lo) / 2


def test_ber_monotone_in_ebn0():
    pts = ber_sweep(UncodedSystem(make_apsk32(), 500), [4, 6, 8, 10], min_errors=200, seed=9)
    for a, b in zip(pts, pts[1:]):
        assert b.ber <= a.ber or b.ci[0] <= a.ci[1]


def test_paired_seeds_and_threads_are_reproducible():
    link = Link(builtin_code("ldpc1440_r35"), make_apsk32())
    sys_a = CodedSystem(link, ReceiverConfig(outer_iters=2, bp_iters_per_outer=10))
    one = ber_point(sys_a, 3.0, min_errors=50, frames_per_batch=4, seed=10, threads=1)
    again = ber_point(sys_a, 3.0, min_errors=50, frames_per_batch=4, seed=10, threads=1)
    assert one == again
    # a second system on the same seed sees the same messages and noise
    sys_b = CodedSystem(link, ReceiverConfig(outer_iters=2, bp_iters_per_outer=10))
    assert ber_point(sys_b, 3.0, min_errors=50, frames_per_batch=4, seed=10) == one


def test_thread_rounds_use_fixed_batch_seeds():
    sys = UncodedSystem(make_apsk32(), 200)
    a = ber_point(sys, 6.0, min_errors=10 ** 9, max_bits=8 * 5 * 1000, frames_per_batch=5, seed=11, threads=4)
    b = ber_point(sys, 6.0, min_errors=10 ** 9, max_bits=8 * 5 * 1000, frames_per_batch=5, seed=11, threads=1)
    assert a == b


def test_csv_columns(tmp_path):
    pts = [BerPoint(1.0, 10, 1000, 2, 2), BerPoint(2.0, 0, 1000, 0, 2)]
    write_ber_csv(pts, tmp_path / "a.csv")
    rows = list(csv.DictReader(open(tmp_path / "a.csv")))
    assert tuple(rows[0]) == BER_COLUMNS and rows[1]["low_confidence"] == "1"
    write_ber_csv([("u", pts), ("s", pts)], tmp_path / "b.csv")
    rows = list(csv.DictReader(open(tmp_path / "b.csv")))
    assert tuple(rows[0]) == ("system",) + BER_COLUMNS and [r["system"] for r in rows] == ["u", "u", "s", "s"]
    write_capacity_csv([(0.0, 1.5, 0.01)], tmp_path / "c.csv")
    assert open(tmp_path / "c.csv").read().splitlines() == [",".join(CAPACITY_COLUMNS), "0.0,1.5,0.01"]
