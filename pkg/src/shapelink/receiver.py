"""Iterative receivers for shaping-encoded BICM frames.

``simplified`` demaps once and then iterates between the shaping decoder and
the LDPC decoder. ``idd`` keeps the demapper in the loop and runs the
shaping decoder in both directions every outer iteration.
"""

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .constants import LLR_CLIP, equalized_noise_variance
from .demap import apriori_init, as_pairs, map_demap
from .errors import ConfigError
from .fec import BpState, bp_decode, bp_init, bp_iterate
from .shaping_code import shape_decode_input, shape_decode_output


@dataclass(frozen=True)
class ReceiverConfig:
    mode: str = "simplified"
    outer_iters: int = 10
    bp_iters_per_outer: int = None  # default: 40 simplified, 1 idd
    llr_clip: float = LLR_CLIP
    warm_start: bool = True         # keep BP messages across IDD iterations
    add_static_prior: bool = False  # add ln((1-p0)/p0) to fed-back shaped a priori
    stop_on_codeword: bool = True   # freeze frames once the syndrome is zero

    def __post_init__(self):
        if self.mode not in ("simplified", "idd"):
            raise ConfigError(f"receiver mode must be 'simplified' or 'idd', got {self.mode!r}")
        if self.outer_iters < 1:
            raise ConfigError("outer_iters must be >= 1")
        if self.bp_iters_per_outer is None:
            object.__setattr__(self, "bp_iters_per_outer", 40 if self.mode == "simplified" else 1)
        if self.bp_iters_per_outer < 1:
            raise ConfigError("bp_iters_per_outer must be >= 1")


@dataclass(frozen=True, eq=False)
class Observation:
    """Received frames ``y`` (F, n_sym) with the model y = scale*x + CN(0, noise_var)."""

    y: np.ndarray
    noise_var: object
    scale: object = 1.0

    @classmethod
    def equalized(cls, eq):
        return cls(eq.y_eq, equalized_noise_variance(eq.rho), eq.rho)

    def subset(self, rows):
        pick = lambda a: a[rows] if np.ndim(a) == 2 else a  # noqa: E731
        return Observation(self.y[rows], pick(np.asarray(self.noise_var)), pick(np.asarray(self.scale)))


def _flat(a, F, n_sym):
    """Per-symbol parameter as a flat (F*n_sym,) array, or a scalar."""
    if isinstance(a, ad.Var) or np.ndim(a):
        return ad.reshape(a, (F * n_sym,)) if np.size(ad.value(a)) == F * n_sym else a
    return a


def demap_frames(link, y, points, noise_var, scale, La_z):
    """MAP demapping of ``(F, n_sym)`` frames; LLRs come back as ``(F, n_sym, m)``."""
    F, n_sym = link_frames(y, link)
    yy = ad.reshape(y, (F * n_sym, 2))
    La = ad.reshape(La_z, (F * n_sym, link.m))
    le = map_demap(yy, points, _flat(noise_var, F, n_sym), La, _flat(scale, F, n_sym))
    return ad.reshape(le, (F, n_sym, link.m))


def link_frames(y, link):
    shape = np.shape(ad.value(y))
    return shape[0], link.n_sym


def _shape_input(link, La_c_flat, La_d):
    F = np.shape(ad.value(La_c_flat))[0]
    La_c = ad.reshape(La_c_flat, (F, link.L, link.shaping.n_s))
    Le_d = shape_decode_input(link.shaping, La_c, La_d)
    return La_c, ad.reshape(Le_d, (F, link.n_d))


def _assemble_u(link, Le_d, L_s):
    La_v = L_s if Le_d is None else ad.concatenate([Le_d, L_s], axis=-1)
    return link.pi1.deinterleave(La_v)


def _feedback_d(link, Le_u):
    Lv = link.pi1.interleave(Le_u)
    F = np.shape(ad.value(Lv))[0]
    La_d = ad.reshape(Lv[:, :link.n_d], (F, link.L, link.shaping.k_s)) if link.shaping else None
    return La_d, Lv[:, link.n_d:]


def initial_apriori(link, F):
    return apriori_init(link.spec, F * link.n_sym, link.m).reshape(F, link.n_sym, link.m)


def zero_input_apriori(link, F):
    if link.shaping is None:
        return None
    return np.zeros((F, link.L, link.shaping.k_s))


def idd_iteration(link, y, points, noise_var, scale, La_z, La_d, state, bp_iters,
                  add_static_prior=False):
    """One demapper -> shaping decoder -> BP -> shaping decoder pass.

    Works on numpy arrays or tape Vars. Returns a dict with the demapper
    output ``Le_z``, the decoder input ``La_u``, the BP posterior ``post``,
    the next a priori values ``La_z``/``La_d`` and the BP ``state``.
    """
    Le_z = demap_frames(link, y, points, noise_var, scale, La_z)
    L_s, L_st = link.split(Le_z)
    if link.shaping is not None:
        La_c_flat = link.pi2.deinterleave(L_st)
        La_c, Le_d = _shape_input(link, La_c_flat, La_d)
    else:
        La_c, Le_d = None, None
    La_u = _assemble_u(link, Le_d, L_s)
    for _ in range(bp_iters):
        state, post = bp_iterate(link.H, state, La_u)
    Le_u = post - La_u
    La_d_next, La_s_next = _feedback_d(link, Le_u)
    if link.shaping is not None:
        F = np.shape(ad.value(Le_u))[0]
        Le_c = ad.reshape(shape_decode_output(link.shaping, La_c, La_d_next), (F, link.n_c))
        La_st = link.pi2.interleave(Le_c)
        if add_static_prior:
            La_st = La_st + np.log((1.0 - link.p0) / link.p0)
    else:
        La_st = None
    La_z_next = ad.clip(link.merge(La_s_next, La_st), -LLR_CLIP, LLR_CLIP)
    return {"Le_z": Le_z, "La_u": La_u, "post": post, "La_z": La_z_next,
            "La_d": La_d_next, "state": state}


def _record(trace, it, post, H, truth, rows, F):
    hard = post > 0
    synd = H.syndrome(hard).sum(axis=-1)
    rec = {"iteration": it, "active_frames": int(rows.size), "mean_abs_llr": float(np.mean(np.abs(post))),
           "syndrome_weight": float(synd.mean())}
    if truth is not None:
        b_hat = hard[:, H.encoder.info_positions]
        rec["ber"] = float(np.mean(b_hat != truth[rows]))
    trace.append(rec)
    return synd


def simplified_receive(obs, link, cfg=ReceiverConfig(), truth=None):
    """Demap once, then iterate shaping decoder <-> BP decoder.

    Returns ``(b_hat, trace)``; ``truth`` (the sent messages) adds per
    iteration bit error rates to the trace.
    """
    y = as_pairs(obs.y)
    F = y.shape[0]
    La_z = initial_apriori(link, F)
    Le_z = demap_frames(link, y, link.constellation, obs.noise_var, obs.scale, La_z)
    L_s, L_st = link.split(Le_z)
    La_c_flat = link.pi2.deinterleave(L_st) if link.shaping is not None else None
    La_d = zero_input_apriori(link, F)
    post_all = np.zeros((F, link.n))
    rows = np.arange(F)
    trace = []
    for it in range(1, cfg.outer_iters + 1):
        if link.shaping is not None:
            _, Le_d = _shape_input(link, La_c_flat[rows], La_d[rows])
        else:
            Le_d = None
        La_u = _assemble_u(link, Le_d, L_s[rows])
        post = bp_decode(link.H, La_u, cfg.bp_iters_per_outer, early_exit=True)
        post_all[rows] = post
        if link.shaping is not None:
            La_d[rows] = _feedback_d(link, post - La_u)[0]
        synd = _record(trace, it, post, link.H, truth, rows, F)
        if cfg.stop_on_codeword:
            rows = rows[synd > 0]
            if rows.size == 0:
                break
    b_hat = (post_all > 0)[:, link.H.encoder.info_positions].astype(np.int8)
    return b_hat, {"mode": "simplified", "pi1_seed": link.pi1.seed, "pi2_seed": link.pi2.seed,
                   "iterations": trace}


def idd_receive(obs, link, cfg=ReceiverConfig(mode="idd", outer_iters=40), truth=None):
    """Iterative detection and decoding with the demapper inside the loop."""
    y = as_pairs(obs.y)
    F = y.shape[0]
    nv = np.asarray(obs.noise_var, dtype=float)
    sc = np.asarray(obs.scale, dtype=float)
    La_z = initial_apriori(link, F)
    La_d = zero_input_apriori(link, F)
    c2v = bp_init(link.H, (F,)).c2v
    post_all = np.zeros((F, link.n))
    rows = np.arange(F)
    trace = []
    pick = lambda a: a[rows] if a.ndim == 2 else a  # noqa: E731
    for it in range(1, cfg.outer_iters + 1):
        state = BpState(c2v[rows] if cfg.warm_start else np.zeros((rows.size, c2v.shape[1])))
        out = idd_iteration(link, y[rows], link.constellation, pick(nv), pick(sc), La_z[rows],
                            None if La_d is None else La_d[rows], state,
                            cfg.bp_iters_per_outer, cfg.add_static_prior)
        c2v[rows] = out["state"].c2v
        La_z[rows] = out["La_z"]
        if La_d is not None:
            La_d[rows] = out["La_d"]
        post_all[rows] = out["post"]
        synd = _record(trace, it, out["post"], link.H, truth, rows, F)
        if cfg.stop_on_codeword:
            rows = rows[synd > 0]
            if rows.size == 0:
                break
    b_hat = (post_all > 0)[:, link.H.encoder.info_positions].astype(np.int8)
    return b_hat, {"mode": "idd", "pi1_seed": link.pi1.seed, "pi2_seed": link.pi2.seed,
                   "iterations": trace}


def receive(obs, link, cfg, truth=None):
    if cfg.mode == "simplified":
        return simplified_receive(obs, link, cfg, truth)
    return idd_receive(obs, link, cfg, truth)


def trace_to_json(trace):
    return json.dumps(trace, indent=1)


def trace_to_csv(trace):
    rows = trace["iterations"]
    buf = io.StringIO()
    fields = list(rows[0].keys()) if rows else ["iteration"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
