"""End-to-end training of constellation geometry and shaping probability.

Two drivers share the same parameter set and optimizer:

* :func:`train_non_idd` minimizes ``BCE - H(X)`` of a demapper on symbol
  batches (p0 is learned).
* :func:`train_idd` unfolds the iterative receiver for ``I`` iterations and
  minimizes the sum of the demapper BCE over all iterations (p0 fixed by
  the shaping code).

Losses are in bits.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .channel import ebn0_to_n0, lmmse_estimate, rician_coefficients
from .constants import equalized_noise_variance
from .constellation import (
    ShapingSpec, bit_labels, entropy, log_symbol_probs, make_apsk32, make_qam32, normalize,
    normalize_real, relabel_for_shaping, symbol_distribution,
)
from .demap import NeuralDemapper, demapper_features, map_demap, neural_demap
from .errors import ConfigError, DivergenceError
from .fec import bp_init, load_code
from .receiver import idd_iteration, initial_apriori, zero_input_apriori
from .shaping_code import build_shaping_code
from .transmitter import Link, build_frame

LN2 = math.log(2.0)


# -- parameters and optimizer ----------------------------------------------

@dataclass
class TrainableParams:
    raw_points: np.ndarray          # (M, 2) unnormalized (re, im)
    p0_logit: float = 0.0
    demapper: NeuralDemapper = None

    @property
    def p0(self):
        return 1.0 / (1.0 + math.exp(-self.p0_logit))

    @property
    def m(self):
        return int(self.raw_points.shape[0]).bit_length() - 1

    def arrays(self):
        out = [np.asarray(self.raw_points, dtype=float), np.asarray(float(self.p0_logit))]
        if self.demapper is not None:
            out += self.demapper.params()
        return out

    def with_arrays(self, arrays):
        dm = self.demapper.with_params(arrays[2:]) if self.demapper is not None else None
        return TrainableParams(np.array(arrays[0]), float(arrays[1]), dm)

    def constellation(self, S=None):
        """Normalized constellation under the current symbol distribution."""
        if S:
            dist = symbol_distribution(self.m, ShapingSpec(S, self.p0))
        else:
            dist = None
        raw = self.raw_points[:, 0] + 1j * self.raw_points[:, 1]
        return normalize(raw, dist)

    def to_json(self):
        return {"raw_points": self.raw_points.tolist(), "p0_logit": self.p0_logit,
                "demapper": None if self.demapper is None else self.demapper.to_json()}

    @classmethod
    def from_json(cls, obj):
        dm = obj.get("demapper")
        return cls(np.array(obj["raw_points"], dtype=float), float(obj["p0_logit"]),
                   None if dm is None else NeuralDemapper.from_json(dm))


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays, lr=1e-3):
        return cls([np.zeros_like(a, dtype=float) for a in arrays],
                   [np.zeros_like(a, dtype=float) for a in arrays], 0, lr)

    def to_json(self):
        return {"m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v], "t": self.t,
                "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    @classmethod
    def from_json(cls, obj):
        return cls([np.array(a, dtype=float) for a in obj["m"]], [np.array(a, dtype=float) for a in obj["v"]],
                   obj["t"], obj["lr"], obj["beta1"], obj["beta2"], obj["eps"])


def adam_step(state, params, grads):
    """One bias-corrected Adam update; ``state`` is advanced in place."""
    if len(params) != len(state.m):
        raise ConfigError("parameter list does not match optimizer state")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        out.append(p - state.lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps))
    return out


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_by_global_norm(grads, max_norm):
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return grads, norm
    return [g * (max_norm / norm) for g in grads], norm


# -- batches and losses ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class Batch:
    """Symbol indices with the unit noise and noise variance applied to each.

    ``noise`` holds (re, im) draws of unit variance per component; the
    channel adds ``sqrt(N0/2) * noise``. ``weighting`` is "prior" to weight
    items by their symbol probability, or "uniform".
    """

    idx: np.ndarray
    noise: np.ndarray
    N0: np.ndarray
    ebn0_db: np.ndarray
    weighting: str = "prior"
    fading: dict = None  # {"h", "h_hat"} complex per item for fading batches


def make_batch(M, size, ebn0_range, rate, rng, fading=None):
    """Equal symbol occurrences, Eb/N0 spread evenly over ``ebn0_range``."""
    idx = np.arange(size) % M
    ebn0 = np.linspace(ebn0_range[0], ebn0_range[1], size)
    N0 = ebn0_to_n0(ebn0, rate)
    noise = rng.standard_normal((size, 2))
    fad = None
    if fading is not None:
        h = rician_coefficients(size, fading.k_factor, rng)
        if fading.csi == "perfect":
            h_hat = h
        else:
            pil = h[:, None] + np.sqrt(N0[:, None] / 2.0) * (
                rng.standard_normal((size, fading.n_p)) + 1j * rng.standard_normal((size, fading.n_p)))
            h_hat = lmmse_estimate(pil, 1.0, N0)
        fad = {"h": h, "h_hat": h_hat}
    return Batch(idx, noise, N0, ebn0, "prior", fad)


def _shaped_mask(m, S):
    mask = np.zeros((1, m))
    mask[0, list(S)] = 1.0
    return mask


def _cmul(a, x):
    """Complex constant ``a`` (N,) times points given as (N, 2) pairs."""
    x0, x1 = x[:, 0], x[:, 1]
    return ad.stack([a.real * x0 - a.imag * x1, a.real * x1 + a.imag * x0], axis=1)


def bce_bits(app, bits):
    """Per-bit cross entropy in bits of LLRs ``app`` against the sent bits."""
    return (ad.softplus(app) - bits * app) / LN2


def _forward_symbols(pts, batch, m, La_shaped, demapper_params, demapper):
    x = ad.take(pts, batch.idx, axis=0)
    sigma = np.sqrt(batch.N0 / 2.0)[:, None]
    if batch.fading is None:
        y = x + sigma * batch.noise
        scale, var = 1.0, batch.N0
        h_hat = np.ones(batch.idx.size, dtype=complex)
    else:
        h, h_hat = batch.fading["h"], batch.fading["h_hat"]
        g = np.conj(h_hat) / (np.abs(h_hat) ** 2 + batch.N0)
        scale = np.abs(h_hat) ** 2 / (np.abs(h_hat) ** 2 + batch.N0)
        y = _cmul(g * h, x) + _cmul(g, sigma * batch.noise)
        var = equalized_noise_variance(scale)
    if demapper is not None:
        yv = ad.value(y)
        feats = demapper_features(yv[:, 0] + 1j * yv[:, 1], h_hat, batch.ebn0_db)
        if isinstance(y, ad.Var):
            feats = ad.concatenate([y, feats[:, 2:]], axis=1)
        return neural_demap(feats, demapper, demapper_params)
    Le = map_demap(y, pts, var, La_shaped, scale)
    return Le + La_shaped


def loss_non_idd(params, batch, S, tape=None, train_p0=True):
    """``BCE - H`` for one batch; returns ``(loss, parts)``.

    With a ``tape`` the parameters are recorded as leaves and ``parts``
    carries them under ``"leaves"`` for the gradient call.
    """
    arrays = params.arrays()
    leaves = [tape.var(a) for a in arrays] if tape is not None else arrays
    raw, logit = leaves[0], leaves[1]
    if not train_p0:
        logit = arrays[1]
    m = params.m
    logp = log_symbol_probs(m, S, logit)
    probs = ad.exp(logp)
    pts = normalize_real(raw, probs)
    mask = _shaped_mask(m, S)
    n = batch.idx.size
    La = ad.mul(np.ones((n, 1)) * mask, -logit)
    dm_params = leaves[2:] if params.demapper is not None else None
    app = _forward_symbols(pts, batch, m, La, dm_params, params.demapper)
    bits = bit_labels(m).astype(float)[batch.idx]
    per_item = ad.sum(bce_bits(app, bits), axis=1)
    if batch.weighting == "prior":
        w = ad.take(probs, batch.idx, axis=0)
        bce = ad.sum(w * per_item) / ad.sum(w)
    else:
        bce = ad.mean(per_item)
    H = -ad.sum(probs * logp) / LN2
    loss = bce - H
    return loss, {"bce": bce, "entropy": H, "leaves": leaves}


# -- IDD unfolding ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FrameBatch:
    """Encoded frames: symbol indices ``(B, n_sym)``, mapper bits, unit noise."""

    idx: np.ndarray
    z: np.ndarray
    noise: np.ndarray  # (B, n_sym, 2)
    N0: np.ndarray     # (B,)
    ebn0_db: np.ndarray


def make_frame_batch(link, size, ebn0_range, rate, rng):
    b = rng.integers(0, 2, (size, link.k))
    _, book = build_frame(link, b)
    ebn0 = np.linspace(ebn0_range[0], ebn0_range[1], size)
    noise = rng.standard_normal((size, link.n_sym, 2))
    return FrameBatch(book["idx"], book["z"].astype(float), noise, ebn0_to_n0(ebn0, rate), ebn0)


def loss_idd(params, link, fb, iterations, tape=None, bp_iters=1, add_static_prior=False):
    """Sum over unfolded IDD iterations of the demapper-output BCE (bits).

    Symbol probabilities are fixed by the shaping code, so only the
    geometry is differentiated. Returns ``(loss, parts)`` with the per
    iteration BCE values in ``parts["per_iteration"]``.
    """
    arrays = params.arrays()
    raw = tape.var(arrays[0]) if tape is not None else arrays[0]
    dist = symbol_distribution(link.m, link.spec) if link.spec else np.full(2 ** link.m, 2.0 ** -link.m)
    pts = normalize_real(raw, dist)
    B = fb.idx.shape[0]
    x = ad.reshape(ad.take(pts, fb.idx.reshape(-1), axis=0), (B, link.n_sym, 2))
    sigma = np.sqrt(fb.N0 / 2.0)[:, None, None]
    y = x + sigma * fb.noise
    nv = np.broadcast_to(fb.N0[:, None], (B, link.n_sym))
    La_z = initial_apriori(link, B)
    La_d = zero_input_apriori(link, B)
    state = bp_init(link.H, (B,))
    total = 0.0
    per_iter = []
    for _ in range(iterations):
        out = idd_iteration(link, y, pts, nv, 1.0, La_z, La_d, state, bp_iters, add_static_prior)
        app = out["Le_z"] + La_z
        bce = ad.sum(bce_bits(app, fb.z)) / (B * link.n_sym)
        per_iter.append(float(ad.value(bce)))
        total = total + bce
        La_z, La_d, state = out["La_z"], out["La_d"], out["state"]
    return total, {"per_iteration": per_iter, "leaves": [raw]}


# -- drivers ---------------------------------------------------------------

INITS = {"apsk32": make_apsk32, "qam32": make_qam32}


def initial_params(init, S, p0_init, relabel_p0, demapper_hidden=None, rng=None):
    """Raw points from a relabeled baseline; p0 logit from ``p0_init``."""
    if init not in INITS:
        raise ConfigError(f"unknown init {init!r}; choose from {sorted(INITS)}")
    c = INITS[init]()
    if S:
        c = relabel_for_shaping(c, ShapingSpec(S, relabel_p0))
    raw = c.as_real()
    logit = math.log(p0_init / (1.0 - p0_init))
    dm = None
    if demapper_hidden:
        dm = NeuralDemapper.glorot(c.m, rng, tuple(demapper_hidden))
    return TrainableParams(raw, logit, dm)


@dataclass
class TrainConfig:
    S: tuple = (0,)
    init: str = "apsk32"
    p0_init: float = 0.5
    relabel_p0: float = 0.8125   # labeling target used when relabeling the init
    iterations: int = 5000
    batch: int = 1000
    ebn0_db: tuple = (5.0, 6.0)
    rate: float = 3.0
    lr: float = 1e-3
    clip_norm: float = 10.0
    train_p0: bool = True
    train_points: bool = True
    demapper_hidden: tuple = ()   # e.g. (64, 64) for a neural demapper
    channel: str = "awgn"         # or "fading"
    n_bf: int = 19
    n_p: int = 3
    k_factor: float = 10.0
    csi: str = "perfect"
    seed: int = 0

    def __post_init__(self):
        self.S = tuple(self.S)
        self.ebn0_db = tuple(self.ebn0_db)
        self.demapper_hidden = tuple(self.demapper_hidden)
        if self.iterations < 0 or self.batch < 1:
            raise ConfigError("iterations must be >= 0 and batch >= 1")
        if not 0 < self.p0_init < 1:
            raise ConfigError("p0_init must lie in (0, 1)")
        if self.channel not in ("awgn", "fading"):
            raise ConfigError(f"channel must be 'awgn' or 'fading', got {self.channel!r}")


@dataclass
class TrainIddConfig:
    code: str = "reg108"
    k_s: int = 2
    n_s: int = 4
    S: tuple = (0,)
    init: str = "apsk32"
    unfold: int = 40
    iterations: int = 5000
    batch: int = 100
    ebn0_db: tuple = None   # None: pick from a short BER scan
    rate: float = None      # Eb/N0 reference in info bits per symbol; None: the link's own rate
    lr: float = 1e-3
    clip_norm: float = 10.0
    bp_iters: int = 1
    add_static_prior: bool = False
    seed1: int = 1
    seed2: int = 2
    seed: int = 0
    init_points: list = None  # optional (M, 2) starting geometry
    relabel: bool = False     # start from the shaping-aware relabeling of ``init``

    def __post_init__(self):
        self.S = tuple(self.S)
        if self.ebn0_db is not None:
            self.ebn0_db = tuple(self.ebn0_db)
        if self.unfold < 1 or self.batch < 1 or self.iterations < 0:
            raise ConfigError("unfold and batch must be >= 1, iterations >= 0")


@dataclass
class TrainState:
    params: TrainableParams
    adam: AdamState
    rng: np.random.Generator
    step: int = 0
    history: list = field(default_factory=list)  # dict rows

    def checkpoint(self, config):
        return {"config": asdict(config), "step": self.step, "params": self.params.to_json(),
                "adam": self.adam.to_json(), "rng": self.rng.bit_generator.state,
                "history": self.history}

    @classmethod
    def from_checkpoint(cls, obj):
        rng = np.random.default_rng()
        rng.bit_generator.state = obj["rng"]
        return cls(TrainableParams.from_json(obj["params"]), AdamState.from_json(obj["adam"]), rng,
                   obj["step"], list(obj["history"]))


def save_checkpoint(state, config, path):
    with open(path, "w") as fh:
        json.dump(state.checkpoint(config), fh)


def load_checkpoint(path):
    with open(path) as fh:
        obj = json.load(fh)
    return TrainState.from_checkpoint(obj), obj["config"]


def _check_finite(step, loss, grads, params):
    bad = [i for i, g in enumerate(grads) if not np.all(np.isfinite(g))]
    if not math.isfinite(loss) or bad:
        raise DivergenceError(
            f"step {step}: loss={loss!r}, non-finite gradients in parameter groups {bad}, "
            f"p0_logit={params.p0_logit!r}, max|raw|={float(np.max(np.abs(params.raw_points))):.4g}")


def _apply(state, grads, mask, clip_norm):
    grads = [g if keep else np.zeros_like(g) for g, keep in zip(grads, mask)]
    grads, norm = clip_by_global_norm(grads, clip_norm)
    new = adam_step(state.adam, state.params.arrays(), grads)
    state.params = state.params.with_arrays(new)
    return norm


def start_non_idd(cfg):
    rng = np.random.default_rng(cfg.seed)
    params = initial_params(cfg.init, cfg.S, cfg.p0_init, cfg.relabel_p0, cfg.demapper_hidden, rng)
    return TrainState(params, AdamState.zeros_like(params.arrays(), cfg.lr), rng)


def train_non_idd(cfg, state=None, steps=None, on_step=None):
    """Run (or continue) non-IDD training; returns the updated TrainState.

    ``steps`` limits how many further steps run (default: up to
    ``cfg.iterations``). ``on_step(state)`` is called after every update.
    """
    from .channel import BlockFadingConfig
    state = state or start_non_idd(cfg)
    fading = None
    if cfg.channel == "fading":
        fading = BlockFadingConfig(cfg.n_bf, cfg.n_p, cfg.k_factor, cfg.csi)
    end = cfg.iterations if steps is None else min(cfg.iterations, state.step + steps)
    M = 2 ** state.params.m
    mask = [cfg.train_points, cfg.train_p0] + [True] * (len(state.params.arrays()) - 2)
    while state.step < end:
        batch = make_batch(M, cfg.batch, cfg.ebn0_db, cfg.rate, state.rng, fading)
        tape = ad.Tape()
        loss, parts = loss_non_idd(state.params, batch, cfg.S, tape, cfg.train_p0)
        grads = tape.gradient(loss, parts["leaves"])
        lv = float(ad.value(loss))
        _check_finite(state.step, lv, grads, state.params)
        norm = _apply(state, grads, mask, cfg.clip_norm)
        state.step += 1
        state.history.append({"step": state.step, "loss": lv, "bce": float(ad.value(parts["bce"])),
                              "entropy": float(ad.value(parts["entropy"])), "p0": state.params.p0,
                              "grad_norm": norm})
        if on_step:
            on_step(state)
    return state


def idd_link(cfg, constellation=None):
    H = load_code(cfg.code)
    code = build_shaping_code(cfg.k_s, cfg.n_s)
    if constellation is None:
        constellation = INITS[cfg.init]()
    return Link(H, constellation, code, cfg.S, cfg.seed1, cfg.seed2)


def start_idd(cfg):
    rng = np.random.default_rng(cfg.seed)
    code = build_shaping_code(cfg.k_s, cfg.n_s)
    if cfg.init_points is not None:
        raw = np.array(cfg.init_points, dtype=float)
    else:
        c = INITS[cfg.init]()
        if cfg.relabel:
            c = relabel_for_shaping(c, ShapingSpec(cfg.S, code.p0))
        raw = c.as_real()
    p0 = code.p0
    params = TrainableParams(raw, math.log(p0 / (1.0 - p0)))
    return TrainState(params, AdamState.zeros_like(params.arrays(), cfg.lr), rng)


def waterfall_range(link, cfg, grid=None, frames=40, seed=12345):
    """Eb/N0 span where the unfolded receiver's frame error rate falls from
    about 0.9 to 0.1, from a short scan; falls back to the grid ends."""
    from .channel import awgn
    from .receiver import Observation, ReceiverConfig, idd_receive
    grid = np.arange(2.0, 10.01, 0.5) if grid is None else np.asarray(grid, dtype=float)
    rcfg = ReceiverConfig(mode="idd", outer_iters=cfg.unfold, bp_iters_per_outer=cfg.bp_iters,
                          add_static_prior=cfg.add_static_prior)
    fer = []
    for i, eb in enumerate(grid):
        rng = np.random.default_rng([seed, i])
        b = rng.integers(0, 2, (frames, link.k))
        x, _ = build_frame(link, b)
        N0 = ebn0_to_n0(eb, cfg.rate or link.rate)
        b_hat, _ = idd_receive(Observation(awgn(x, N0, rng), N0), link, rcfg)
        fer.append(float(np.mean(np.any(b_hat != b, axis=1))))
    fer = np.array(fer)
    lo = grid[np.argmax(fer < 0.9)] if np.any(fer < 0.9) else grid[-1]
    hi = grid[np.argmax(fer < 0.1)] if np.any(fer < 0.1) else grid[-1]
    return float(lo), float(max(hi, lo))


def train_idd(cfg, state=None, steps=None, on_step=None):
    """Deep-unfolded IDD training of the geometry; returns the TrainState."""
    state = state or start_idd(cfg)
    if cfg.rate is None:
        cfg.rate = idd_link(cfg).rate
    if cfg.ebn0_db is None:
        cfg.ebn0_db = waterfall_range(idd_link(cfg, state.params.constellation(cfg.S)), cfg)
    end = cfg.iterations if steps is None else min(cfg.iterations, state.step + steps)
    n_groups = len(state.params.arrays())
    mask = [True] + [False] * (n_groups - 1)
    link = idd_link(cfg)
    while state.step < end:
        fb = make_frame_batch(link, cfg.batch, cfg.ebn0_db, cfg.rate, state.rng)
        tape = ad.Tape()
        loss, parts = loss_idd(state.params, link, fb, cfg.unfold, tape, cfg.bp_iters,
                               cfg.add_static_prior)
        (g_raw,) = tape.gradient(loss, parts["leaves"])
        grads = [g_raw] + [np.zeros_like(a) for a in state.params.arrays()[1:]]
        lv = float(ad.value(loss))
        _check_finite(state.step, lv, grads, state.params)
        norm = _apply(state, grads, mask, cfg.clip_norm)
        state.step += 1
        row = {"step": state.step, "loss": lv, "grad_norm": norm}
        row.update({f"bce_{i + 1}": v for i, v in enumerate(parts["per_iteration"])})
        state.history.append(row)
        if on_step:
            on_step(state)
    return state


def evaluate_idd(params, cfg, batches=20, seed=999):
    """Mean unfolded loss of ``params`` over fixed held-out frame batches."""
    link = idd_link(cfg)
    rate = cfg.rate or link.rate
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(batches):
        fb = make_frame_batch(link, cfg.batch, cfg.ebn0_db, rate, rng)
        loss, _ = loss_idd(params, link, fb, cfg.unfold, None, cfg.bp_iters, cfg.add_static_prior)
        vals.append(float(ad.value(loss)))
    return float(np.mean(vals))


def smoothed(values, window=50):
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=float)
    c = np.cumsum(np.insert(v, 0, 0.0))
    out = np.empty_like(v)
    for i in range(v.size):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def write_history_csv(history, path):
    if not history:
        fields = ["step", "loss"]
    else:
        fields = list(history[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def report(state, S):
    c = state.params.constellation(S)
    dist = symbol_distribution(c.m, ShapingSpec(S, state.params.p0)) if S else None
    return {"steps": state.step, "p0": state.params.p0,
            "entropy_bits": entropy(dist) if dist is not None else float(c.m),
            "mean_energy": c.mean_energy(dist),
            "final_loss": state.history[-1]["loss"] if state.history else None}


__all__ = [
    "TrainableParams", "AdamState", "adam_step", "clip_by_global_norm", "Batch", "make_batch",
    "loss_non_idd", "FrameBatch", "make_frame_batch", "loss_idd", "TrainConfig", "TrainIddConfig",
    "TrainState", "train_non_idd", "train_idd", "save_checkpoint", "load_checkpoint", "smoothed",
    "write_history_csv", "report", "initial_params", "start_non_idd", "start_idd", "evaluate_idd", "idd_link",
    "waterfall_range", "bce_bits",
]
