import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shapelink import autodiff as ad
from shapelink.constants import APSK32_RING_SIZES
from shapelink.constellation import (
    Constellation, ShapingSpec, apply_label_transform, best_label_transform, bit_labels, entropy,
    from_json, load_constellation, log_symbol_probs, make_apsk32, make_qam32, normalize,
    normalize_real, relabel_for_shaping, save_constellation, shaped_baseline, symbol_distribution,
    to_json,
)
from shapelink.errors import ConfigError, DegenerateConstellationError
from oracles import central_diff, labels_of, rel_err


def hb(p):
    return -p * np.log2(p) - (1 - p) * np.log2(1 - p)


def test_uniform_distribution():
    np.testing.assert_allclose(symbol_distribution(5, ShapingSpec((0,), 0.5)), np.full(32, 1 / 32))


def test_single_shaped_bit_levels():
    d = symbol_distribution(5, ShapingSpec((0,), 0.8125))
    np.testing.assert_allclose(d[:16], 0.8125 / 16)
    np.testing.assert_allclose(d[16:], 0.1875 / 16)


def test_two_shaped_bits_against_enumeration():
    p0 = 0.6875
    d = symbol_distribution(5, ShapingSpec((0, 4), p0))
    for i, lab in enumerate(labels_of(5)):
        want = 1.0
        for k, b in enumerate(lab):
            want *= (p0 if b == 0 else 1 - p0) if k in (0, 4) else 0.5
        assert d[i] == pytest.approx(want, abs=1e-15)
    assert len(np.unique(np.round(d, 14))) == 3  # p0(1-p0) appears twice


@settings(max_examples=60, deadline=None)
@given(m=st.integers(2, 6), p0=st.floats(0.0, 1.0), data=st.data())
def test_distribution_sums_to_one(m, p0, data):
    size = data.draw(st.integers(1, m - 1))
    S = data.draw(st.lists(st.integers(0, m - 1), min_size=size, max_size=size, unique=True))
    d = symbol_distribution(m, ShapingSpec(S, p0))
    assert abs(d.sum() - 1.0) < 1e-12
    if 1e-100 < p0 < 1:  # products of subnormal p0 underflow to zero
        assert np.all(d > 0)


@pytest.mark.parametrize("S", [(), (0, 1, 2, 3, 4), (5,)])
def test_invalid_shaping_sets(S):
    with pytest.raises(ConfigError):
        symbol_distribution(5, ShapingSpec(S, 0.7))


def test_p0_out_of_range():
    with pytest.raises(ConfigError):
        ShapingSpec((0,), 1.2)


def test_normalize_examples():
    circ = np.exp(2j * np.pi * np.arange(8) / 8)
    d = np.full(8, 1 / 8)
    np.testing.assert_allclose(normalize(circ, d).points, circ, atol=1e-15)
    np.testing.assert_allclose(normalize(7 * circ, d).points, normalize(circ, d).points, atol=1e-15)
    c = normalize([1.0, 3.0], [0.75, 0.25])
    np.testing.assert_allclose(c.points, np.array([1.0, 3.0]) / np.sqrt(3.0))


def test_normalize_rejects_zero():
    with pytest.raises(DegenerateConstellationError):
        normalize(np.zeros(4))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_normalize_idempotent_and_unit_energy(seed):
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=16) + 1j * rng.normal(size=16)
    d = rng.dirichlet(np.ones(16))
    c1 = normalize(raw, d)
    assert abs(c1.mean_energy(d) - 1) < 1e-12
    np.testing.assert_allclose(normalize(c1.points, d).points, c1.points, atol=1e-12)


def test_entropy_examples():
    assert entropy(np.full(32, 1 / 32)) == pytest.approx(5.0)
    d = symbol_distribution(5, ShapingSpec((0,), 0.8125))
    assert entropy(d) == pytest.approx(4 + hb(0.8125), abs=1e-12)
    assert entropy(np.eye(8)[3]) == 0.0


@settings(max_examples=40, deadline=None)
@given(p0=st.floats(0.01, 0.99))
def test_entropy_bounds(p0):
    h = entropy(symbol_distribution(5, ShapingSpec((1, 3), p0)))
    assert 0 <= h <= 5 + 1e-12
    if abs(p0 - 0.5) > 1e-6:
        assert h < 5


def test_baselines_unit_energy():
    for c in (make_apsk32(), make_qam32()):
        assert abs(c.mean_energy() - 1) < 1e-12
        assert c.M == 32


def test_apsk_rings():
    r = np.round(np.abs(make_apsk32().points), 9)
    counts = tuple(int((r == v).sum()) for v in np.unique(r))
    assert counts == APSK32_RING_SIZES


def test_qam_gray_on_lattice_neighbors():
    c = make_qam32()
    pts = c.points
    step = np.min(np.abs(pts[:, None] - pts[None, :])[~np.eye(32, dtype=bool)])
    lab = bit_labels(5)
    pairs = 0
    for i, j in itertools.combinations(range(32), 2):
        if abs(abs(pts[i] - pts[j]) - step) < 1e-9:
            pairs += 1
            assert np.sum(lab[i] != lab[j]) == 1
    assert pairs == 8 * 3 + 7 * 4  # horizontal plus vertical neighbours of an 8x4 grid


def test_relabel_flat_objective_keeps_energy():
    c = make_apsk32()
    r = relabel_for_shaping(c, ShapingSpec((0,), 0.5))
    assert r.mean_energy() == pytest.approx(c.mean_energy(), abs=1e-12)


def test_relabel_symmetric_energies():
    # a single-bit constellation cannot have 0 < |S| < m; use equal-energy QPSK
    c = Constellation([1.0, 1j, -1j, -1.0])
    spec = ShapingSpec((0,), 0.9)
    r = relabel_for_shaping(c, spec)
    assert r.mean_energy(symbol_distribution(2, spec)) == pytest.approx(1.0, abs=1e-12)
    assert best_label_transform(c, spec)[:2] == ((0, 1), 0)


def _brute_best(c, spec):
    m = c.m
    dist = symbol_distribution(m, spec)
    e = np.abs(c.points) ** 2
    best = None
    for perm in itertools.permutations(range(m)):
        for flip in range(2 ** m):
            new = [int("".join(str(lab[p]) for p in perm), 2) ^ flip for lab in labels_of(m)]
            energy = sum(dist[new[i]] * e[i] for i in range(2 ** m))
            if best is None or energy < best[0] - 1e-12:
                best = (energy, perm, flip)
    return best


def test_relabel_matches_exhaustive_oracle():
    c = make_apsk32()
    spec = ShapingSpec((0,), 0.8125)
    energy, perm, flip = _brute_best(c, spec)
    p, f, e = best_label_transform(c, spec)
    assert (p, f) == (perm, flip)
    assert e == pytest.approx(energy, abs=1e-12)
    r = apply_label_transform(c, p, f)
    inner = np.sort(np.abs(r.points[:16]))
    outer = np.sort(np.abs(r.points[16:]))
    assert inner.max() <= outer.min() + 1e-12


def test_relabel_preserves_hamming_distances():
    c = make_qam32()
    r = relabel_for_shaping(c, ShapingSpec((0, 4), 0.6875))
    where = {complex(np.round(p, 12)): i for i, p in enumerate(r.points)}
    lab = bit_labels(5)
    rng = np.random.default_rng(0)
    for _ in range(200):
        i, j = rng.choice(32, 2, replace=False)
        a, b = where[complex(np.round(c.points[i], 12))], where[complex(np.round(c.points[j], 12))]
        assert np.sum(lab[i] != lab[j]) == np.sum(lab[a] != lab[b])


def test_shaped_baseline_unit_energy_under_shaping():
    spec = ShapingSpec((0,), 0.8125)
    c = shaped_baseline(make_apsk32(), spec)
    assert c.mean_energy(symbol_distribution(5, spec)) == pytest.approx(1.0, abs=1e-12)


def test_json_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    c = Constellation(rng.normal(size=32) + 1j * rng.normal(size=32))
    path = tmp_path / "c.json"
    save_constellation(c, path)
    obj = json.loads(path.read_text())
    assert set(obj) == {"m", "points", "label_order"} and obj["label_order"] == "index"
    np.testing.assert_array_equal(load_constellation(path).points, c.points)
    assert from_json(to_json(c)).points.tolist() == c.points.tolist()


def test_json_rejects_mismatched_m():
    obj = to_json(make_qam32())
    obj["m"] = 4
    with pytest.raises(ConfigError):
        from_json(obj)


def test_coinciding_points_warn():
    with pytest.warns(RuntimeWarning):
        Constellation([1.0, 1.0, -1.0, 0.5])


def test_log_symbol_probs_matches_distribution():
    logit = 1.3
    p0 = 1 / (1 + np.exp(-logit))
    np.testing.assert_allclose(np.exp(log_symbol_probs(5, (0, 2), logit)),
                               symbol_distribution(5, ShapingSpec((0, 2), p0)), atol=1e-15)


def test_normalization_gradient():
    rng = np.random.default_rng(4)
    raw = rng.normal(size=(8, 2))
    probs = rng.dirichlet(np.ones(8))
    w = rng.normal(size=(8, 2))
    f = lambda r: float(np.sum(w * normalize_real(r, probs)))  # noqa: E731
    tape = ad.Tape()
    x = tape.var(raw)
    (g,) = tape.gradient(ad.sum(w * normalize_real(x, probs)), [x])
    assert rel_err(g, central_diff(f, raw)) < 1e-5


def test_entropy_gradient_wrt_logit():
    def H(logit):
        lp = log_symbol_probs(5, (0,), logit)
        return -ad.sum(ad.exp(lp) * lp) / np.log(2)
    tape = ad.Tape()
    x = tape.var(0.7)
    (g,) = tape.gradient(H(x), [x])
    fd = central_diff(lambda v: float(H(float(v))), np.array(0.7))
    assert rel_err(g, fd) < 1e-5
