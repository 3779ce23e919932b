import json

import numpy as np
import pytest

from shapelink import autodiff as ad
from shapelink.constellation import ShapingSpec, entropy, make_apsk32, make_qam32, symbol_distribution
from shapelink.errors import DivergenceError
from shapelink.metrics import bicm_capacity
from shapelink.training import (
    AdamState, Batch, TrainConfig, TrainIddConfig, TrainableParams, adam_step, clip_by_global_norm,
    idd_link, load_checkpoint, loss_idd, loss_non_idd, make_batch, make_frame_batch, save_checkpoint,
    smoothed, start_idd, start_non_idd, train_idd, train_non_idd, write_history_csv,
)
from shapelink.channel import ebn0_to_n0
from oracles import central_diff, rel_err


# -- optimizer ---------------------------------------------------------------

def test_adam_zero_gradient():
    x = np.array([1.0, -2.0])
    st = AdamState.zeros_like([x])
    for _ in range(5):
        (x2,) = adam_step(st, [x], [np.zeros(2)])
        np.testing.assert_array_equal(x2, x)


def test_adam_first_step_is_lr_times_sign():
    x = np.zeros(4)
    g = np.array([3.0, -0.01, 100.0, -7.0])
    (x2,) = adam_step(AdamState.zeros_like([x]), [x], [g])
    np.testing.assert_allclose(x2 - x, -1e-3 * np.sign(g), rtol=1e-6)


def test_adam_quadratic_convergence():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    c = np.array([0.4, -0.3])
    x = np.zeros(2)
    st = AdamState.zeros_like([x])
    for _ in range(2000):
        (x,) = adam_step(st, [x], [A @ (x - c)])
    assert np.linalg.norm(A @ (x - c)) < 1e-6


def test_adam_state_json():
    st = AdamState.zeros_like([np.ones(3), np.ones((2, 2))])
    adam_step(st, [np.ones(3), np.ones((2, 2))], [np.arange(3.0), np.eye(2)])
    back = AdamState.from_json(json.loads(json.dumps(st.to_json())))
    assert back.t == 1
    for a, b in zip(back.v, st.v):
        np.testing.assert_array_equal(a, b)


def test_global_norm_clip():
    g = [np.array([3.0]), np.array([4.0])]
    clipped, norm = clip_by_global_norm(g, 1.0)
    assert norm == 5.0
    assert np.hypot(clipped[0][0], clipped[1][0]) == pytest.approx(1.0)
    same, _ = clip_by_global_norm(g, 10.0)
    assert same is g


# -- non-IDD loss -------------------------------------------------------------

def params_from(c, p0=0.5):
    return TrainableParams(c.as_real(), float(np.log(p0 / (1 - p0))))


def test_params_p0_and_constellation():
    p = params_from(make_apsk32(), 0.8)
    assert p.p0 == pytest.approx(0.8)
    c = p.constellation((0,))
    assert c.mean_energy(symbol_distribution(5, ShapingSpec((0,), 0.8))) == pytest.approx(1.0)
    back = TrainableParams.from_json(json.loads(json.dumps(p.to_json())))
    np.testing.assert_array_equal(back.raw_points, p.raw_points)


def test_make_batch_equal_occurrences():
    b = make_batch(32, 992, (5, 6), 3.0, np.random.default_rng(0))
    assert np.all(np.bincount(b.idx, minlength=32) == 31)
    assert b.ebn0_db[0] == 5 and b.ebn0_db[-1] == 6
    counts = np.bincount(make_batch(32, 1000, (5, 6), 3.0, np.random.default_rng(0)).idx)
    assert set(counts) == {31, 32}


def test_perfect_demapper_limit():
    p = params_from(make_apsk32(), 0.8)
    b = make_batch(32, 320, (90, 90), 3.0, np.random.default_rng(1))
    loss, parts = loss_non_idd(p, b, (0,))
    H = entropy(symbol_distribution(5, ShapingSpec((0,), 0.8)))
    assert float(parts["bce"]) < 1e-9
    assert float(loss) == pytest.approx(-H, abs=1e-9)


def test_symmetric_point_p0_gradient():
    # bit 0 of the QAM labeling flips under x -> -conj(x); a mirrored batch makes the
    # p0 derivative vanish exactly at p0 = 1/2
    p = params_from(make_qam32(), 0.5)
    rng = np.random.default_rng(2)
    idx = np.arange(64) % 32
    noise = rng.standard_normal((64, 2))
    idx = np.concatenate([idx, idx ^ 16])
    noise = np.concatenate([noise, noise * [-1.0, 1.0]])
    N0 = np.full(128, ebn0_to_n0(5.5, 3.0))
    batch = Batch(idx, noise, N0, np.full(128, 5.5))

    def f(logit):
        return float(loss_non_idd(TrainableParams(p.raw_points, float(logit)), batch, (0,))[0])

    fd = central_diff(lambda v: f(v[0]), np.array([0.0]))[0]
    tape = ad.Tape()
    loss, parts = loss_non_idd(p, batch, (0,), tape)
    g = tape.gradient(loss, parts["leaves"])[1]
    assert abs(fd) < 1e-9 and abs(float(g)) < 1e-12
    # away from the symmetric point the derivative is clearly nonzero
    assert abs(central_diff(lambda v: f(v[0]), np.array([1.0]))[0]) > 1e-3


def test_negative_loss_approximates_capacity():
    c = make_qam32()
    p = params_from(c, 0.5)
    b = make_batch(32, 64000, (5.5, 5.5), 3.0, np.random.default_rng(3))
    loss, _ = loss_non_idd(p, b, (0,))
    cap = bicm_capacity(c, None, ebn0_to_n0(5.5, 3.0), samples=200_000, rng=4)
    assert abs(-float(loss) - cap) < 0.05


@pytest.mark.parametrize("which", [0, 1])
def test_non_idd_gradients(which):
    p = params_from(make_apsk32(), 0.7)
    b = make_batch(32, 64, (5, 6), 3.0, np.random.default_rng(5))
    arrays = p.arrays()

    def f(x):
        arr = list(arrays)
        arr[which] = x
        return float(loss_non_idd(p.with_arrays(arr), b, (0,))[0])

    tape = ad.Tape()
    loss, parts = loss_non_idd(p, b, (0,), tape)
    g = tape.gradient(loss, parts["leaves"])[which]
    assert rel_err(g, central_diff(f, arrays[which])) < 1e-5


# -- IDD loss -----------------------------------------------------------------

def idd_setup(batch=3, seed=6):
    cfg = TrainIddConfig(code="reg108", unfold=2, batch=batch, ebn0_db=(4.0, 6.0))
    st = start_idd(cfg)
    link = idd_link(cfg)
    fb = make_frame_batch(link, batch, cfg.ebn0_db, link.rate, np.random.default_rng(seed))
    return cfg, st.params, link, fb


def test_idd_single_iteration_equals_non_idd_bce():
    cfg, p, link, fb = idd_setup(batch=4)
    loss1, _ = loss_idd(p, link, fb, 1)
    n = fb.idx.size
    batch = Batch(fb.idx.reshape(-1), fb.noise.reshape(n, 2), np.repeat(fb.N0, link.n_sym),
                  np.repeat(fb.ebn0_db, link.n_sym), weighting="uniform")
    _, parts = loss_non_idd(p, batch, cfg.S, train_p0=False)
    assert abs(float(loss1) - float(parts["bce"])) < 1e-9


def test_idd_loss_is_sum_over_iterations():
    _, p, link, fb = idd_setup()
    loss, parts = loss_idd(p, link, fb, 4)
    assert len(parts["per_iteration"]) == 4
    assert float(loss) == pytest.approx(sum(parts["per_iteration"]), abs=1e-12)


def test_idd_tape_matches_plain_forward():
    _, p, link, fb = idd_setup()
    plain, _ = loss_idd(p, link, fb, 3)
    taped, _ = loss_idd(p, link, fb, 3, ad.Tape())
    assert abs(float(plain) - float(ad.value(taped))) < 1e-9


def test_unfolded_gradient_two_iterations():
    _, p, link, fb = idd_setup(batch=2)
    arrays = p.arrays()

    def f(x):
        return float(loss_idd(p.with_arrays([x] + arrays[1:]), link, fb, 2)[0])

    tape = ad.Tape()
    loss, parts = loss_idd(p, link, fb, 2, tape)
    (g,) = tape.gradient(loss, parts["leaves"])
    assert rel_err(g, central_diff(f, arrays[0])) < 1e-4


# -- drivers ------------------------------------------------------------------

def small_cfg(**kw):
    base = dict(iterations=6, batch=64, seed=11)
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_deterministic():
    a = train_non_idd(small_cfg())
    b = train_non_idd(small_cfg())
    assert [r["loss"] for r in a.history] == [r["loss"] for r in b.history]
    np.testing.assert_array_equal(a.params.raw_points, b.params.raw_points)


def test_checkpoint_resume_is_exact(tmp_path):
    cfg = small_cfg()
    full = train_non_idd(cfg)
    half = train_non_idd(cfg, steps=3)
    save_checkpoint(half, cfg, tmp_path / "ck.json")
    state, conf = load_checkpoint(tmp_path / "ck.json")
    assert conf["seed"] == 11 and state.step == 3
    resumed = train_non_idd(cfg, state=state)
    assert [r["loss"] for r in resumed.history] == [r["loss"] for r in full.history]
    np.testing.assert_array_equal(resumed.params.raw_points, full.params.raw_points)
    assert resumed.params.p0_logit == full.params.p0_logit


def test_frozen_p0_keeps_unit_energy():
    energies = []

    def watch(state):
        energies.append(state.params.constellation((0,)).mean_energy(
            symbol_distribution(5, ShapingSpec((0,), state.params.p0))))

    st = train_non_idd(small_cfg(train_p0=False, p0_init=0.5), on_step=watch)
    assert st.params.p0 == 0.5
    np.testing.assert_allclose(energies, 1.0, atol=1e-12)
    assert not np.array_equal(st.params.raw_points, start_non_idd(small_cfg()).params.raw_points)


def test_frozen_points():
    st = train_non_idd(small_cfg(train_points=False))
    np.testing.assert_array_equal(st.params.raw_points, start_non_idd(small_cfg()).params.raw_points)
    assert st.params.p0 != 0.5


def test_fading_and_neural_demapper_run():
    st = train_non_idd(small_cfg(channel="fading", csi="estimated", demapper_hidden=(8,), iterations=3))
    assert len(st.history) == 3 and all(np.isfinite(r["loss"]) for r in st.history)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    cfg = small_cfg(iterations=1)
    st = start_non_idd(cfg)
    st.params = TrainableParams(st.params.raw_points * np.nan, st.params.p0_logit)
    with pytest.raises(DivergenceError, match="step 0"):
        train_non_idd(cfg, state=st)


def test_idd_training_steps_are_finite():
    cfg = TrainIddConfig(unfold=2, iterations=3, batch=4, ebn0_db=(4.0, 6.0))
    st = train_idd(cfg)
    assert cfg.rate == pytest.approx(idd_link(cfg).rate)
    assert [r["step"] for r in st.history] == [1, 2, 3]
    assert all(np.isfinite(r["loss"]) and np.isfinite(r["grad_norm"]) for r in st.history)
    assert {"bce_1", "bce_2"} <= set(st.history[0])


def test_smoothed_and_history_csv(tmp_path):
    np.testing.assert_allclose(smoothed([1, 2, 3, 4], window=2), [1, 1.5, 2.5, 3.5])
    write_history_csv([{"step": 1, "loss": 0.5}], tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text() == "step,loss\n1,0.5\n"


@pytest.mark.slow
def test_two_shaped_bits_learn_p0():
    st = train_non_idd(TrainConfig(S=(0, 4), relabel_p0=0.6875))
    assert 0.62 <= st.params.p0 <= 0.72
