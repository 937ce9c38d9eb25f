"""Recurrent cells with per-gate weight representations.

Every gate owns one ``hidden x (input + hidden)`` matrix that multiplies the
concatenated operand ``[x_t; h_{t-1}]``. Each gate matrix can be stored dense,
as a Kronecker pair, as a hybrid (dense rows over a Kronecker block), as a
low-rank pair, or as a pruned CSR matrix. All representations share the same
small surface: ``shape``, ``n_params``, ``params()``, ``with_params()``,
``to_dense()``, ``matvec()``, ``apply()`` (batched, one example per row) and
``backward()``.

Gate order: LSTM ``i, f, g, o``; GRU ``r, z, c`` with the reset gate applied
to ``h`` before the candidate matvec and ``h' = z*h + (1-z)*c``; BiLSTM holds
the forward direction's four gates followed by the backward direction's four.
FastRNN updates ``h' = alpha*tanh(W[x;h] + b) + beta*h`` with raw trainable
``alpha``/``beta``.
"""
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from . import kpcore
from .baselines import LowRankPair, SparseCSR, lmf_rank_for_target, magnitude_prune
from .errors import ShapeError
from .kpcore import HybridMatrix, KronFactorPair

GATE_COUNT = {"rnn": 1, "fastrnn": 1, "lstm": 4, "gru": 3, "bilstm": 8}
GATE_NAMES = {
    "rnn": ("h",),
    "fastrnn": ("h",),
    "lstm": ("i", "f", "g", "o"),
    "gru": ("r", "z", "c"),
    "bilstm": ("fw_i", "fw_f", "fw_g", "fw_o", "bw_i", "bw_f", "bw_g", "bw_o"),
}
FASTRNN_ALPHA = 0.2
FASTRNN_BETA = 0.8


@dataclass(frozen=True, eq=False)
class Dense:
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 2:
            raise ShapeError(f"dense weight must be 2-D, got shape {w.shape}")
        object.__setattr__(self, "w", w)

    @property
    def shape(self):
        return self.w.shape

    @property
    def n_params(self):
        return self.w.size

    def params(self):
        return {"w": self.w}

    def with_params(self, p):
        return Dense(p["w"])

    def to_dense(self):
        return self.w.copy()

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.w.shape[1],):
            raise ShapeError(f"x must have length {self.w.shape[1]}, got shape {x.shape}")
        return self.w @ x

    def apply(self, x):
        return np.asarray(x, dtype=np.float64) @ self.w.T

    def backward(self, x, g):
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.w.shape[1])
        g = np.asarray(g, dtype=np.float64).reshape(-1, self.w.shape[0])
        return {"w": g.T @ x}, g @ self.w


REP_TAGS = {Dense: "dense", KronFactorPair: "kp", HybridMatrix: "hkp", LowRankPair: "lmf", SparseCSR: "sparse"}


def rep_tag(rep):
    return REP_TAGS[type(rep)]


def parse_rep(rep):
    """``"kp"`` / ``"hkp:10"`` / ``("lmf", 24.47)`` -> ``(tag, target or None)``."""
    if isinstance(rep, tuple):
        tag, target = rep
    elif ":" in str(rep):
        tag, target = str(rep).split(":", 1)
        target = float(target)
    else:
        tag, target = str(rep), None
    tag = tag.lower()
    if tag not in ("dense", "kp", "hkp", "lmf", "sparse"):
        raise ValueError(f"unknown representation {rep!r}")
    if tag in ("hkp", "lmf", "sparse") and target is None:
        raise ValueError(f"representation {tag!r} needs a target ratio, e.g. '{tag}:10'")
    return tag, target


def _glorot_var(rows, cols):
    return 2.0 / (rows + cols)


def _uniform_std(rng, std, shape):
    lim = np.sqrt(3.0) * std
    return rng.uniform(-lim, lim, size=shape)


def init_rep(tag, rows, cols, rng, target=None):
    """Seeded random gate matrix in the requested representation.

    Entries of the represented matrix get the Glorot-uniform variance; for
    factored forms each factor is scaled so the product keeps that variance.
    """
    var = _glorot_var(rows, cols)
    if tag == "dense":
        return Dense(_uniform_std(rng, np.sqrt(var), (rows, cols)))
    if tag == "kp":
        plan = kpcore.select_factor_shapes(rows, cols)
        std = var**0.25
        return KronFactorPair(_uniform_std(rng, std, plan.left), _uniform_std(rng, std, plan.right))
    if tag == "hkp":
        choice = kpcore.hkp_rank_rows_for_target(rows, cols, target)
        upper = _uniform_std(rng, np.sqrt(var), (choice.r, cols))
        lower = None
        if choice.plan is not None:
            std = var**0.25
            lower = KronFactorPair(
                _uniform_std(rng, std, choice.plan.left), _uniform_std(rng, std, choice.plan.right)
            )
        return HybridMatrix(upper, lower)
    if tag == "lmf":
        d = lmf_rank_for_target(rows, cols, target)
        std = (var / d) ** 0.25
        return LowRankPair(_uniform_std(rng, std, (rows, d)), _uniform_std(rng, std, (d, cols)))
    if tag == "sparse":
        dense = _uniform_std(rng, np.sqrt(var), (rows, cols))
        return magnitude_prune(dense, 1.0 - 1.0 / target)
    raise ValueError(f"unknown representation {tag!r}")


@dataclass(frozen=True, eq=False)
class CellSpec:
    kind: str
    input_dim: int
    hidden_dim: int
    gates: tuple
    biases: tuple
    alpha: Optional[float] = None
    beta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in GATE_COUNT:
            raise ValueError(f"unknown cell kind {self.kind!r}")
        gates = tuple(self.gates)
        biases = tuple(np.asarray(b, dtype=np.float64) for b in self.biases)
        if len(gates) != GATE_COUNT[self.kind] or len(biases) != len(gates):
            raise ShapeError(f"{self.kind} needs {GATE_COUNT[self.kind]} gates and biases")
        want = (self.hidden_dim, self.hidden_dim + self.input_dim)
        for name, g, b in zip(GATE_NAMES[self.kind], gates, biases):
            if tuple(g.shape) != want:
                raise ShapeError(f"gate {name} has shape {g.shape}, expected {want}")
            if b.shape != (self.hidden_dim,):
                raise ShapeError(f"bias {name} has shape {b.shape}, expected ({self.hidden_dim},)")
        if self.kind == "fastrnn" and (self.alpha is None or self.beta is None):
            raise ValueError("fastrnn cells need alpha and beta")
        object.__setattr__(self, "gates", gates)
        object.__setattr__(self, "biases", biases)

    @property
    def output_dim(self):
        return 2 * self.hidden_dim if self.kind == "bilstm" else self.hidden_dim

    @property
    def n_params(self):
        extra = 2 if self.kind == "fastrnn" else 0
        return sum(g.n_params for g in self.gates) + sum(b.size for b in self.biases) + extra

    def expanded(self):
        """Twin cell with every gate materialized as a dense matrix."""
        return replace(self, gates=tuple(Dense(g.to_dense()) for g in self.gates))


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    cell: CellSpec
    softmax_w: np.ndarray
    softmax_b: np.ndarray
    time_steps: int

    def __post_init__(self):
        w = np.asarray(self.softmax_w, dtype=np.float64)
        b = np.asarray(self.softmax_b, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != self.cell.output_dim or b.shape != (w.shape[0],):
            raise ShapeError(
                f"softmax {w.shape} / bias {b.shape} do not match cell output {self.cell.output_dim}"
            )
        object.__setattr__(self, "softmax_w", w)
        object.__setattr__(self, "softmax_b", b)

    @property
    def classes(self):
        return self.softmax_w.shape[0]

    @property
    def n_params(self):
        return self.cell.n_params + self.softmax_w.size + self.softmax_b.size

    def expanded(self):
        return replace(self, cell=self.cell.expanded())

    # flat parameter view used by the optimizers

    def parameters(self):
        """Ordered ``{name: array}`` of every trainable tensor."""
        out = {}
        for gi, g in enumerate(self.cell.gates):
            for k, v in g.params().items():
                out[f"gate{gi}.{k}"] = v
        for gi, b in enumerate(self.cell.biases):
            out[f"bias{gi}"] = b
        if self.cell.kind == "fastrnn":
            out["alpha"] = np.array(self.cell.alpha, dtype=np.float64)
            out["beta"] = np.array(self.cell.beta, dtype=np.float64)
        out["softmax.w"] = self.softmax_w
        out["softmax.b"] = self.softmax_b
        return out

    def with_parameters(self, p):
        gates = []
        for gi, g in enumerate(self.cell.gates):
            gates.append(g.with_params({k: p[f"gate{gi}.{k}"] for k in g.params()}))
        cell = replace(
            self.cell,
            gates=tuple(gates),
            biases=tuple(p[f"bias{gi}"] for gi in range(len(self.cell.biases))),
        )
        if self.cell.kind == "fastrnn":
            cell = replace(cell, alpha=float(p["alpha"]), beta=float(p["beta"]))
        return replace(self, cell=cell, softmax_w=p["softmax.w"], softmax_b=p["softmax.b"])


def build_compressed_network(kind, input_dim, hidden_dim, classes, rep="dense", seed=0, time_steps=0):
    """Seeded network whose every gate uses the representation ``rep``."""
    if min(input_dim, hidden_dim, classes) < 1:
        raise ValueError("dimensions must be >= 1")
    kind = kind.lower()
    if kind not in GATE_COUNT:
        raise ValueError(f"unknown cell kind {kind!r}")
    tag, target = parse_rep(rep)
    rng = np.random.default_rng(seed)
    rows, cols = hidden_dim, hidden_dim + input_dim
    gates = tuple(init_rep(tag, rows, cols, rng, target) for _ in range(GATE_COUNT[kind]))
    biases = tuple(np.zeros(hidden_dim) for _ in gates)
    extra = {"alpha": FASTRNN_ALPHA, "beta": FASTRNN_BETA} if kind == "fastrnn" else {}
    cell = CellSpec(kind, input_dim, hidden_dim, gates, biases, **extra)
    out = cell.output_dim
    lim = np.sqrt(6.0 / (out + classes))
    return NetworkSpec(cell, rng.uniform(-lim, lim, (classes, out)), np.zeros(classes), time_steps)


# -- cell arithmetic ----------------------------------------------------------
#
# Step functions work on batches (one example per row) and return the next
# state plus a cache consumed by the backward pass in ``kpk.train``.


def sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _mv(rep, z):
    if z.shape[0] == 1:
        return rep.matvec(z[0])[None, :]
    return rep.apply(z)


def rnn_step(cell, x, h):
    z = np.concatenate([x, h], axis=1)
    hn = np.tanh(_mv(cell.gates[0], z) + cell.biases[0])
    return hn, (z, hn)


def fastrnn_step(cell, x, h):
    z = np.concatenate([x, h], axis=1)
    t = np.tanh(_mv(cell.gates[0], z) + cell.biases[0])
    return cell.alpha * t + cell.beta * h, (z, t, h)


def lstm_step(cell, x, h, c, offset=0):
    z = np.concatenate([x, h], axis=1)
    gates, biases = cell.gates[offset : offset + 4], cell.biases[offset : offset + 4]
    i, f, g, o = (_mv(w, z) + b for w, b in zip(gates, biases))
    i, f, g, o = sigmoid(i), sigmoid(f), np.tanh(g), sigmoid(o)
    cn = f * c + i * g
    tc = np.tanh(cn)
    return o * tc, cn, (z, i, f, g, o, c, tc)


def gru_step(cell, x, h):
    z = np.concatenate([x, h], axis=1)
    r = sigmoid(_mv(cell.gates[0], z) + cell.biases[0])
    u = sigmoid(_mv(cell.gates[1], z) + cell.biases[1])
    zc = np.concatenate([x, r * h], axis=1)
    cand = np.tanh(_mv(cell.gates[2], zc) + cell.biases[2])
    return u * h + (1.0 - u) * cand, (z, r, u, zc, cand, h)


class LSTMState(NamedTuple):
    h: np.ndarray
    c: np.ndarray


def _as_row(v, width, what):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (width,):
        raise ShapeError(f"{what} must have length {width}, got shape {v.shape}")
    return v[None, :]


def cell_step(cell, x_t, state, direction="forward"):
    """Advance one time step for a single example.

    ``state`` is ``h`` for RNN/FastRNN/GRU and ``(h, c)`` for LSTM and for
    each BiLSTM direction (``direction`` picks which four gates to use).
    """
    x = _as_row(x_t, cell.input_dim, "x_t")
    if cell.kind in ("lstm", "bilstm"):
        h, c = state
        offset = 4 if (cell.kind == "bilstm" and direction == "backward") else 0
        hn, cn, _ = lstm_step(cell, x, _as_row(h, cell.hidden_dim, "h"), _as_row(c, cell.hidden_dim, "c"), offset)
        return LSTMState(hn[0], cn[0])
    h = _as_row(state, cell.hidden_dim, "h")
    step = {"rnn": rnn_step, "fastrnn": fastrnn_step, "gru": gru_step}[cell.kind]
    return step(cell, x, h)[0][0]


def run_cell(cell, xs, keep_cache=False):
    """Run a cell over a batch of sequences ``xs`` of shape ``(batch, T, n)``.

    Returns the final cell output ``(batch, output_dim)`` and, when asked, the
    per-step caches (a list, or a ``(forward, backward)`` pair for BiLSTM).
    """
    bsz, T, _ = xs.shape
    m = cell.hidden_dim
    if cell.kind in ("lstm", "bilstm"):
        outs, caches = [], []
        dirs = [(0, range(T))] + ([(4, range(T - 1, -1, -1))] if cell.kind == "bilstm" else [])
        for offset, order in dirs:
            h, c = np.zeros((bsz, m)), np.zeros((bsz, m))
            cache = []
            for t in order:
                h, c, cc = lstm_step(cell, xs[:, t, :], h, c, offset)
                if keep_cache:
                    cache.append(cc)
            outs.append(h)
            caches.append(cache)
        out = np.concatenate(outs, axis=1)
        return out, (caches if cell.kind == "bilstm" else caches[0])
    step = {"rnn": rnn_step, "fastrnn": fastrnn_step, "gru": gru_step}[cell.kind]
    h = np.zeros((bsz, m))
    cache = []
    for t in range(T):
        h, cc = step(cell, xs[:, t, :], h)
        if keep_cache:
            cache.append(cc)
    return h, cache


def _as_batch(net, inputs):
    xs = np.asarray(inputs, dtype=np.float64)
    n = net.cell.input_dim
    single = xs.ndim < 3
    if xs.ndim == 1 and xs.size == 0:
        xs = xs.reshape(0, n)
    if single:
        xs = xs[None]
    if xs.ndim != 3 or xs.shape[2] != n:
        raise ShapeError(f"inputs must be (T, {n}) or (batch, T, {n}), got shape {np.shape(inputs)}")
    if net.time_steps and xs.shape[1] not in (0, net.time_steps):
        raise ShapeError(f"expected {net.time_steps} time steps, got {xs.shape[1]}")
    return xs, single


def sequence_forward(net, inputs):
    """Logits for one sequence ``(T, n)`` or a batch ``(batch, T, n)``.

    The state starts at zero; logits are the affine softmax-layer output
    (unnormalized). ``T == 0`` yields the softmax bias.
    """
    xs, single = _as_batch(net, inputs)
    h, _ = run_cell(net.cell, xs)
    logits = h @ net.softmax_w.T + net.softmax_b
    return logits[0] if single else logits


# -- accounting ---------------------------------------------------------------


class ParamCount(NamedTuple):
    total_params: int
    rnn_layer_params: int
    compression_factor: float
    size_kb_32bit: float


def dense_layer_params(kind, input_dim, hidden_dim):
    gates = GATE_COUNT[kind]
    extra = 2 if kind == "fastrnn" else 0
    return gates * hidden_dim * (hidden_dim + input_dim) + gates * hidden_dim + extra


def parameter_count(net, baseline=None):
    """Layer/total parameter counts, layer compression factor and 32-bit size.

    The compression factor divides the baseline's recurrent-layer parameters by
    this network's; the baseline defaults to the dense twin of the same shape.
    """
    layer = net.cell.n_params
    if baseline is None:
        ref = dense_layer_params(net.cell.kind, net.cell.input_dim, net.cell.hidden_dim)
    else:
        ref = baseline.cell.n_params
    total = net.n_params
    return ParamCount(total, layer, ref / layer, total * 4 / 1024)
