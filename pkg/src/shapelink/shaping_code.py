"""Block shaping encoder and its soft-in/soft-out decoder.

A ``(k_s, n_s)`` shaping code maps each block of ``k_s`` uniform bits onto
one of ``2**k_s`` output words of length ``n_s`` chosen with as few ones as
possible, so the output stream carries an excess of zeros.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .constants import LLR_CLIP
from .constellation import bit_labels
from .errors import ConfigError


@dataclass(frozen=True, eq=False)
class ShapingCode:
    k_s: int
    n_s: int
    codebook: np.ndarray  # (2**k_s, n_s), row i = output word for input value i

    def __post_init__(self):
        cb = np.asarray(self.codebook, dtype=np.int8)
        object.__setattr__(self, "codebook", cb)
        if cb.shape != (2 ** self.k_s, self.n_s):
            raise ConfigError(f"codebook shape {cb.shape} != ({2 ** self.k_s}, {self.n_s})")
        if np.unique(cb, axis=0).shape[0] != cb.shape[0]:
            raise ConfigError("codebook words must be distinct")

    @property
    def rate(self):
        return self.k_s / self.n_s

    @property
    def p0(self):
        """Fraction of zeros over all output words (uniform inputs)."""
        return 1.0 - self.codebook.sum() / self.codebook.size

    @property
    def inputs(self):
        return bit_labels(self.k_s)


def build_shaping_code(k_s, n_s):
    """Lowest-weight-first codebook; ties broken by ascending integer value."""
    if not 1 <= k_s <= n_s:
        raise ConfigError(f"invalid shaping rate: need 1 <= k_s <= n_s, got ({k_s}, {n_s})")
    if n_s > 16:
        raise ConfigError("n_s > 16 not supported")
    words = np.arange(2 ** n_s)
    weight = bit_labels(n_s).sum(axis=1)
    order = np.lexsort((words, weight))
    return ShapingCode(k_s, n_s, bit_labels(n_s)[order[: 2 ** k_s]])


def identity_code():
    return ShapingCode(1, 1, np.array([[0], [1]]))


def shape_encode(code, d):
    """Blockwise codebook lookup along the last axis."""
    d = np.asarray(d)
    if d.shape[-1] % code.k_s:
        raise ConfigError(f"input length {d.shape[-1]} not divisible by k_s={code.k_s}")
    blocks = d.reshape(d.shape[:-1] + (-1, code.k_s))
    index = blocks @ (1 << np.arange(code.k_s - 1, -1, -1))
    return code.codebook[index].reshape(d.shape[:-1] + (-1,))


def _split_llrs(score, columns, own):
    """Per column of a 0/1 matrix: extrinsic log-ratio of the two row sets."""
    cols = []
    for j in range(columns.shape[1]):
        ones = np.flatnonzero(columns[:, j] == 1)
        zeros = np.flatnonzero(columns[:, j] == 0)
        if ones.size == 0:
            cols.append(np.full(score.shape[:-1], -LLR_CLIP))
            continue
        if zeros.size == 0:
            cols.append(np.full(score.shape[:-1], LLR_CLIP))
            continue
        l1 = ad.logsumexp(ad.take(score, ones, axis=-1), axis=-1)
        l0 = ad.logsumexp(ad.take(score, zeros, axis=-1), axis=-1)
        cols.append(l1 - l0 - own[..., j])
    return ad.clip(ad.stack(cols, axis=-1), -LLR_CLIP, LLR_CLIP)


def _scores(code, La_c, La_d):
    La_c = ad.clip(La_c, -LLR_CLIP, LLR_CLIP)
    La_d = ad.clip(La_d, -LLR_CLIP, LLR_CLIP)
    cb = code.codebook.astype(float)
    score = ad.matmul(La_c, cb.T) + ad.matmul(La_d, code.inputs.astype(float).T)
    return score, La_c, La_d


def shape_decode_input(code, La_c, La_d):
    """Extrinsic LLRs on the encoder input bits.

    ``La_c`` has shape ``(..., n_s)`` and ``La_d`` ``(..., k_s)``; each
    candidate input word is scored by the a priori LLRs of its output word
    and of its own input bits, and bit ``j`` excludes its own a priori term.
    """
    score, _, La_d = _scores(code, La_c, La_d)
    return _split_llrs(score, code.inputs, La_d)


def shape_decode_output(code, La_c, La_d):
    """Extrinsic LLRs on the encoder output bits (same scoring, other split)."""
    score, La_c, _ = _scores(code, La_c, La_d)
    return _split_llrs(score, code.codebook, La_c)


def format_code(code):
    lines = [f"{code.k_s} {code.n_s}"]
    lines += ["".join(str(int(b)) for b in row) for row in code.codebook]
    return "\n".join(lines) + "\n"


def parse_code(text):
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ConfigError("empty shaping code text")
    try:
        k_s, n_s = (int(v) for v in lines[0].split())
    except ValueError as exc:
        raise ConfigError(f"bad header {lines[0]!r}") from exc
    rows = lines[1:]
    if len(rows) != 2 ** k_s or any(len(r) != n_s or set(r) - {"0", "1"} for r in rows):
        raise ConfigError("codebook rows do not match header")
    return ShapingCode(k_s, n_s, np.array([[int(ch) for ch in r] for r in rows]))
