"""LDPC codes: alist I/O, systematic encoding and sum-product decoding.

The decoder runs a flooding schedule with the tanh rule. One iteration is
exposed as :func:`bp_iterate`, written with the differentiable primitives so
that unrolled iterations can be trained through.
"""

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

import numpy as np
from scipy import sparse

from . import autodiff as ad
from .constants import LLR_CLIP, TANH_CLIP
from .errors import AlistParseError, ConfigError, EncodingSetupError


@dataclass(frozen=True, eq=False)
class ParityCheckMatrix:
    """Sparse parity-check matrix stored as per-row and per-column index lists."""

    n: int
    rows: tuple  # rows[c] = sorted variable indices of check c
    name: str = field(default="", compare=False)

    def __post_init__(self):
        rows = tuple(np.asarray(sorted(set(int(v) for v in r)), dtype=np.int64) for r in self.rows)
        object.__setattr__(self, "rows", rows)
        for c, r in enumerate(rows):
            if r.size and (r[0] < 0 or r[-1] >= self.n):
                raise ConfigError(f"check {c} references a variable outside 0..{self.n - 1}")
        if np.any(self.col_degrees == 0):
            raise ConfigError("every column of H needs at least one entry")

    @classmethod
    def from_dense(cls, H, name=""):
        H = np.asarray(H)
        return cls(H.shape[1], tuple(np.flatnonzero(row) for row in H), name)

    @property
    def n_checks(self):
        return len(self.rows)

    @cached_property
    def cols(self):
        cols = [[] for _ in range(self.n)]
        for c, r in enumerate(self.rows):
            for v in r:
                cols[v].append(c)
        return tuple(np.asarray(cl, dtype=np.int64) for cl in cols)

    @property
    def col_degrees(self):
        deg = np.zeros(self.n, dtype=np.int64)
        for r in self.rows:
            deg[r] += 1
        return deg

    @property
    def row_degrees(self):
        return np.array([r.size for r in self.rows], dtype=np.int64)

    def dense(self):
        H = np.zeros((self.n_checks, self.n), dtype=np.uint8)
        for c, r in enumerate(self.rows):
            H[c, r] = 1
        return H

    def syndrome(self, bits):
        """Syndrome of hard bits with shape ``(..., n)``."""
        g = self.graph
        bits = np.asarray(bits, dtype=np.int64)
        return np.add.reduceat(bits[..., g.edge_var], g.row_starts, axis=-1) % 2

    @cached_property
    def graph(self):
        return _TannerGraph(self)

    @cached_property
    def encoder(self):
        return SystematicEncoder(self)

    @property
    def k(self):
        return self.encoder.k

    @property
    def rate(self):
        return self.k / self.n


class _TannerGraph:
    """Edge index arrays for vectorized message passing (edges sorted by check)."""

    def __init__(self, H):
        self.n = H.n
        self.n_checks = H.n_checks
        deg = H.row_degrees
        self.dc = int(deg.max())
        self.edge_chk = np.repeat(np.arange(H.n_checks), deg)
        self.edge_var = np.concatenate(H.rows)
        self.E = self.edge_var.size
        self.row_starts = np.concatenate([[0], np.cumsum(deg)[:-1]])
        slot = np.concatenate([np.arange(d) for d in deg])
        self.edge_pos = self.edge_chk * self.dc + slot
        slots = np.full((H.n_checks, self.dc), self.E, dtype=np.int64)
        slots[self.edge_chk, slot] = np.arange(self.E)
        self.check_slots = slots
        # edge -> variable incidence, used to sum messages per variable
        self.var_sum = sparse.csr_matrix(
            (np.ones(self.E), (np.arange(self.E), self.edge_var)), shape=(self.E, self.n))
        # tanh rule under L = ln P(1)/P(0) picks up (-1)**deg per check
        self.edge_sign = ((-1.0) ** deg)[self.edge_chk]


# -- alist -----------------------------------------------------------------

def _ints(line, lineno):
    try:
        return [int(t) for t in line.split()]
    except ValueError:
        raise AlistParseError(f"expected integers, got {line.strip()!r}", lineno) from None


def load_alist(text, name=""):
    """Parse MacKay's alist format (zero padding optional)."""
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines()) if ln.strip()]
    if len(lines) < 4:
        raise AlistParseError("alist needs at least a four-line header", lines[-1][0] if lines else 1)
    (l1, h1), (l2, h2), (l3, h3), (l4, h4) = lines[:4]
    dims = _ints(h1, l1)
    if len(dims) != 2:
        raise AlistParseError("first line must hold 'N M'", l1)
    n, mc = dims
    maxes = _ints(h2, l2)
    col_deg = _ints(h3, l3)
    row_deg = _ints(h4, l4)
    if len(maxes) != 2:
        raise AlistParseError("second line must hold the two maximum degrees", l2)
    if len(col_deg) != n:
        raise AlistParseError(f"expected {n} column degrees, got {len(col_deg)}", l3)
    if len(row_deg) != mc:
        raise AlistParseError(f"expected {mc} row degrees, got {len(row_deg)}", l4)
    body = lines[4:]
    if len(body) < n + mc:
        where = body[-1][0] if body else l4
        raise AlistParseError(f"expected {n + mc} adjacency lines, got {len(body)}", where)
    cols = []
    for j, (ln, txt) in enumerate(body[:n]):
        ids = [v for v in _ints(txt, ln) if v != 0]
        if len(ids) != col_deg[j]:
            raise AlistParseError(f"column {j + 1} lists {len(ids)} entries, degree says {col_deg[j]}", ln)
        if any(v < 1 or v > mc for v in ids):
            raise AlistParseError(f"row index out of range 1..{mc}", ln)
        cols.append(ids)
    rows = []
    for i, (ln, txt) in enumerate(body[n:n + mc]):
        ids = [v for v in _ints(txt, ln) if v != 0]
        if len(ids) != row_deg[i]:
            raise AlistParseError(f"row {i + 1} lists {len(ids)} entries, degree says {row_deg[i]}", ln)
        if any(v < 1 or v > n for v in ids):
            raise AlistParseError(f"column index out of range 1..{n}", ln)
        rows.append(ids)
    from_cols = sorted((r, j + 1) for j, ids in enumerate(cols) for r in ids)
    from_rows = sorted((i + 1, v) for i, ids in enumerate(rows) for v in ids)
    if from_cols != from_rows:
        ln = body[n][0]
        raise AlistParseError("row and column adjacency lists disagree", ln)
    if max(col_deg) != maxes[0] or max(row_deg) != maxes[1]:
        raise AlistParseError("maximum degrees do not match the degree lists", l2)
    return ParityCheckMatrix(n, tuple([v - 1 for v in r] for r in rows), name)


def format_alist(H):
    cdeg, rdeg = H.col_degrees, H.row_degrees
    cmax, rmax = int(cdeg.max()), int(rdeg.max())
    out = [f"{H.n} {H.n_checks}", f"{cmax} {rmax}",
           " ".join(map(str, cdeg)), " ".join(map(str, rdeg))]
    for cl in H.cols:
        ids = list(cl + 1) + [0] * (cmax - cl.size)
        out.append(" ".join(map(str, ids)))
    for r in H.rows:
        ids = list(r + 1) + [0] * (rmax - r.size)
        out.append(" ".join(map(str, ids)))
    return "\n".join(out) + "\n"


def read_alist(path):
    with open(path) as fh:
        return load_alist(fh.read(), name=str(path))


def write_alist(H, path):
    with open(path, "w") as fh:
        fh.write(format_alist(H))


# -- construction ----------------------------------------------------------

def hamming74():
    H = np.array([[1, 0, 1, 0, 1, 0, 1],
                  [0, 1, 1, 0, 0, 1, 1],
                  [0, 0, 0, 1, 1, 1, 1]])
    return ParityCheckMatrix.from_dense(H, "hamming74")


def make_ldpc(n, n_checks, col_weight=3, seed=0, name=""):
    """Column-weight-regular LDPC matrix with near-uniform row degrees.

    Edges are placed variable by variable on the least-loaded checks,
    avoiding length-4 cycles whenever some candidate allows it.
    """
    rng = np.random.default_rng(seed)
    rows = [[] for _ in range(n_checks)]
    var_checks = []
    load = np.zeros(n_checks, dtype=np.int64)
    for v in range(n):
        chosen = []
        near = np.zeros(n_checks, dtype=bool)
        for _ in range(col_weight):
            taken = np.zeros(n_checks, dtype=bool)
            taken[chosen] = True
            free = ~(near | taken)
            ok = free if free.any() else ~taken
            cand = np.flatnonzero(ok & (load == load[ok].min()))
            c = int(rng.choice(cand))
            chosen.append(c)
            for u in rows[c]:
                near[var_checks[u]] = True
            rows[c].append(v)
            load[c] += 1
        var_checks.append(chosen)
    return ParityCheckMatrix(n, tuple(rows), name)


# -- encoding --------------------------------------------------------------

def gf2_rref(A):
    """Reduced row echelon form over GF(2); returns (R, pivot_columns)."""
    R = np.array(A, dtype=bool)
    pivots = []
    row = 0
    for col in range(R.shape[1]):
        if row == R.shape[0]:
            break
        hits = np.flatnonzero(R[row:, col])
        if hits.size == 0:
            continue
        p = row + hits[0]
        if p != row:
            R[[row, p]] = R[[p, row]]
        mask = R[:, col].copy()
        mask[row] = False
        R[mask] ^= R[row]
        pivots.append(col)
        row += 1
    return R[:row].astype(np.uint8), pivots


class SystematicEncoder:
    """Encoder from Gaussian elimination on H.

    Pivot columns carry parity bits, the remaining ``k`` positions carry the
    message in order.
    """

    def __init__(self, H):
        R, pivots = gf2_rref(H.dense())
        if len(pivots) < H.n_checks:
            raise EncodingSetupError(
                f"H has rank {len(pivots)} < {H.n_checks} checks; remove redundant rows first")
        self.n = H.n
        self.parity_positions = np.asarray(pivots)
        self.info_positions = np.setdiff1d(np.arange(H.n), self.parity_positions)
        self.k = self.info_positions.size
        self._P = R[:, self.info_positions].astype(np.int64)

    def encode(self, msg):
        msg = np.asarray(msg, dtype=np.int64)
        if msg.shape[-1] != self.k:
            raise ConfigError(f"message length {msg.shape[-1]} != k={self.k}")
        cw = np.zeros(msg.shape[:-1] + (self.n,), dtype=np.int8)
        cw[..., self.info_positions] = msg
        cw[..., self.parity_positions] = (msg @ self._P.T) % 2
        return cw

    def extract(self, cw):
        return np.asarray(cw)[..., self.info_positions]


def encode(H, msg):
    return H.encoder.encode(msg)


# -- decoding --------------------------------------------------------------

@dataclass
class BpState:
    """Check-to-variable messages (one row per codeword) and iteration count."""

    c2v: object
    iteration: int = 0


def bp_init(H, batch_shape=()):
    return BpState(np.zeros(tuple(batch_shape) + (H.graph.E,)))


def _check_update(g, v2c):
    t = ad.tanh(0.5 * v2c)
    lead = ad.value(t).shape[:-1]
    t = ad.concatenate([t, np.ones(lead + (1,))], axis=-1)
    T = ad.take(t, g.check_slots.T, axis=-1)  # (..., dc, checks)
    cols = [T[..., i, :] for i in range(g.dc)]
    ones = np.ones(lead + (g.n_checks,))
    prefix = [ones]
    for i in range(1, g.dc):
        prefix.append(prefix[-1] * cols[i - 1])
    suffix = [ones]
    for i in range(g.dc - 2, -1, -1):
        suffix.append(suffix[-1] * cols[i + 1])
    suffix.reverse()
    excl = ad.stack([prefix[i] * suffix[i] for i in range(g.dc)], axis=-1)
    excl = ad.reshape(excl, lead + (g.n_checks * g.dc,))
    prod = ad.take(excl, g.edge_pos, axis=-1) * g.edge_sign
    return 2.0 * ad.arctanh(ad.clip(prod, -TANH_CLIP, TANH_CLIP))


def bp_iterate(H, state, La_u):
    """One flooding iteration. Returns the new state and posterior LLRs."""
    g = H.graph
    total = La_u + ad.spmatmul(state.c2v, g.var_sum)
    v2c = ad.clip(ad.take(total, g.edge_var, axis=-1) - state.c2v, -LLR_CLIP, LLR_CLIP)
    c2v = ad.clip(_check_update(g, v2c), -LLR_CLIP, LLR_CLIP)
    post = La_u + ad.spmatmul(c2v, g.var_sum)
    return BpState(c2v, state.iteration + 1), post


def bp_decode(H, La_u, max_iters=40, early_exit=True, return_iterations=False):
    """Sum-product decoding of a batch of LLR rows ``(..., n)``.

    Rows whose hard decision satisfies every check stop updating when
    ``early_exit`` is set.
    """
    La_u = np.asarray(La_u, dtype=float)
    batch = La_u.shape[:-1]
    La = La_u.reshape(-1, H.n)
    c2v = np.zeros((La.shape[0], H.graph.E))
    post = La.copy()
    iters = np.zeros(La.shape[0], dtype=np.int64)
    active = np.arange(La.shape[0])
    for _ in range(max_iters):
        if active.size == 0:
            break
        st, p = bp_iterate(H, BpState(c2v[active]), La[active])
        c2v[active] = st.c2v
        post[active] = p
        iters[active] += 1
        if early_exit:
            active = active[H.syndrome(p > 0).any(axis=-1)]
    post = post.reshape(La_u.shape)
    if return_iterations:
        return post, iters.reshape(batch)
    return post


def extrinsic(L_post, La):
    return ad.sub(L_post, La)


# -- built-in codes --------------------------------------------------------

def builtin_codes():
    """Name -> metadata for the codes shipped with the package."""
    with resources.files("shapelink.codes").joinpath("index.json").open() as fh:
        return json.load(fh)


def builtin_code(name):
    if name == "hamming74":
        return hamming74()
    table = builtin_codes()
    if name not in table:
        raise ConfigError(f"unknown code {name!r}; known: hamming74, {', '.join(table)}")
    text = resources.files("shapelink.codes").joinpath(table[name]["file"]).read_text()
    return load_alist(text, name=name)


def load_code(ref):
    """A built-in code name or a path to an alist file."""
    if ref == "hamming74" or ref in builtin_codes():
        return builtin_code(ref)
    return read_alist(ref)
