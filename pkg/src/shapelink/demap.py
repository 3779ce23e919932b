"""Soft demapping: exact MAP with a priori input, and a small neural demapper."""

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .constants import LLR_CLIP
from .constellation import Constellation, bit_labels
from .errors import ConfigError


def as_pairs(z):
    """Complex array -> ``(..., 2)`` real array.

    Vars and real arrays with ``ndim >= 2`` and a trailing axis of 2 are taken
    as (re, im) pairs already; 1-D real arrays are real-valued samples.
    """
    if isinstance(z, ad.Var):
        return z
    z = np.asarray(z)
    if np.iscomplexobj(z) or z.ndim < 2 or z.shape[-1] != 2:
        z = np.asarray(z, dtype=complex)
        return np.stack([z.real, z.imag], axis=-1)
    return z.astype(float)


def _points(points):
    if isinstance(points, Constellation):
        return points.as_real()
    return as_pairs(points)


_SPLITS = {}


def _label_split(m):
    """Index arrays of points whose bit k is 1 / 0, shape (m, M/2) each."""
    if m not in _SPLITS:
        labels = bit_labels(m)
        ones = np.stack([np.flatnonzero(labels[:, k] == 1) for k in range(m)])
        zeros = np.stack([np.flatnonzero(labels[:, k] == 0) for k in range(m)])
        _SPLITS[m] = (ones, zeros)
    return _SPLITS[m]


def symbol_metrics(y, points, noise_var, La=None, scale=1.0):
    """Log-domain symbol scores ``-|y - a*x|^2/var + sum_n f_n(x) La_n``.

    The ``|y|^2`` term is dropped: it is common to all candidates and cancels
    in every log-ratio built from these scores.
    """
    y = as_pairs(y)
    x = _points(points)
    M = ad.value(x).shape[0]
    m = M.bit_length() - 1
    a = np.asarray(scale, dtype=float) if not isinstance(scale, ad.Var) else scale
    var = noise_var if isinstance(noise_var, ad.Var) else np.asarray(noise_var, dtype=float)
    a_col = a[..., None] if np.ndim(ad.value(a)) else a
    v_col = var[..., None] if np.ndim(ad.value(var)) else var
    corr = ad.matmul(y, ad.transpose(x))                # (N, M)
    energy = ad.sum(ad.square(x), axis=1)               # (M,)
    metric = (2.0 * a_col * corr - a_col * a_col * energy) / v_col
    if La is not None:
        metric = metric + ad.matmul(La, bit_labels(m).T.astype(float))
    return metric, m


def map_demap(y, points, noise_var, La=None, scale=1.0):
    """Extrinsic bit LLRs (ln P(1)/P(0)) of an exact MAP demapper.

    ``y``: received samples, complex ``(N,)`` or real pairs ``(N, 2)``.
    ``points``: Constellation, complex ``(M,)`` or ``(M, 2)`` pairs.
    ``noise_var``/``scale``: scalars or per-sample arrays; the channel model is
    ``y = scale*x + noise`` with complex noise variance ``noise_var``.
    ``La``: a priori LLRs ``(N, m)``; bit ``k`` never sees its own entry.
    """
    if La is not None:
        La = ad.clip(La, -LLR_CLIP, LLR_CLIP)
    metric, m = symbol_metrics(y, points, noise_var, La, scale)
    ones, zeros = _label_split(m)
    l1 = ad.logsumexp(ad.take(metric, ones, axis=-1), axis=-1)
    l0 = ad.logsumexp(ad.take(metric, zeros, axis=-1), axis=-1)
    le = l1 - l0
    if La is not None:
        le = le - La
    return ad.clip(le, -LLR_CLIP, LLR_CLIP)


def map_app(y, points, noise_var, La=None, scale=1.0):
    """A posteriori LLRs: extrinsic output plus the a priori input."""
    le = map_demap(y, points, noise_var, La, scale)
    if La is None:
        return le
    return le + ad.clip(La, -LLR_CLIP, LLR_CLIP)


def apriori_init(spec, n_symbols, m):
    """Initial a priori LLRs: ln((1-p0)/p0) on shaped positions, 0 elsewhere."""
    La = np.zeros((n_symbols, m))
    if spec is not None and spec.S:
        La[:, list(spec.S)] = np.log((1.0 - spec.p0) / spec.p0)
    return La


# -- neural demapper -------------------------------------------------------

N_FEATURES = 5


def demapper_features(y_eq, h_hat, ebn0_db):
    """Per-sample inputs: Re/Im of the equalized sample, Re/Im of the channel
    estimate and Eb/N0 in dB."""
    y_eq = np.asarray(y_eq, dtype=complex).reshape(-1)
    h = np.broadcast_to(np.asarray(h_hat, dtype=complex), y_eq.shape)
    e = np.broadcast_to(np.asarray(ebn0_db, dtype=float), y_eq.shape)
    return np.stack([y_eq.real, y_eq.imag, h.real, h.imag, e], axis=1)


@dataclass
class NeuralDemapper:
    """Dense relu -> dense relu -> dense linear, one LLR per label bit."""

    layers: list  # [(W, b), ...] with W of shape (in, out)

    @classmethod
    def glorot(cls, m, rng, hidden=(64, 64), n_features=N_FEATURES):
        dims = [n_features, *hidden, m]
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            layers.append((rng.uniform(-lim, lim, (fan_in, fan_out)), np.zeros(fan_out)))
        return cls(layers)

    @property
    def m(self):
        return self.layers[-1][0].shape[1]

    @property
    def n_features(self):
        return self.layers[0][0].shape[0]

    def params(self):
        return [p for layer in self.layers for p in layer]

    def with_params(self, flat):
        it = iter(flat)
        return NeuralDemapper([(next(it), next(it)) for _ in self.layers])

    def __call__(self, features, params=None):
        return neural_demap(features, self, params)

    def to_json(self):
        return {"dims": [self.n_features] + [W.shape[1] for W, _ in self.layers],
                "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers]}

    @classmethod
    def from_json(cls, obj):
        layers = [(np.array(L["W"], dtype=float), np.array(L["b"], dtype=float)) for L in obj["layers"]]
        dims = [layers[0][0].shape[0]] + [W.shape[1] for W, _ in layers]
        if dims != list(obj["dims"]):
            raise ConfigError(f"layer shapes {dims} disagree with dims {obj['dims']}")
        return cls(layers)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def neural_demap(features, demapper, params=None):
    """Forward pass; ``params`` (flat list, possibly Vars) overrides the weights."""
    if np.shape(ad.value(features))[-1] != demapper.n_features:
        raise ConfigError(
            f"expected {demapper.n_features} features, got {np.shape(ad.value(features))[-1]}")
    flat = demapper.params() if params is None else params
    h = features
    n_layers = len(flat) // 2
    for i in range(n_layers):
        h = ad.matmul(h, flat[2 * i]) + flat[2 * i + 1]
        if i < n_layers - 1:
            h = ad.relu(h)
    return ad.clip(h, -LLR_CLIP, LLR_CLIP)
