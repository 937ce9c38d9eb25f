"""Desk-scale training: BPTT through every weight representation, optimizers,
learning-rate schedules, a synthetic sequence task and a factor-drift probe.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cells import run_cell
from .errors import NumericError
from .kpcore import MultiKronChain, multi_kron_expand

log = logging.getLogger(__name__)


# -- loss and gradients ------------------------------------------------------


def softmax_xent(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. ``logits``."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    bsz = logits.shape[0]
    loss = float(np.mean(lse - shifted[np.arange(bsz), labels]))
    p = np.exp(shifted - lse[:, None])
    p[np.arange(bsz), labels] -= 1.0
    return loss, p / bsz


def _accumulate(acc, key, value):
    if key in acc:
        acc[key] = acc[key] + value
    else:
        acc[key] = value


def _gate_backward(cell, grads, gi, x, da):
    gg, dx = cell.gates[gi].backward(x, da)
    for k, v in gg.items():
        _accumulate(grads, f"gate{gi}.{k}", v)
    _accumulate(grads, f"bias{gi}", da.sum(axis=0))
    return dx


def _lstm_backward(cell, cache, dh, grads, n, offset):
    dc = np.zeros_like(dh)
    for z, i, f, g, o, c, tc in reversed(cache):
        do = dh * tc
        dct = dc + dh * o * (1.0 - tc * tc)
        das = (dct * g * i * (1.0 - i), dct * c * f * (1.0 - f), dct * i * (1.0 - g * g), do * o * (1.0 - o))
        dc = dct * f
        dz = sum(_gate_backward(cell, grads, offset + k, z, da) for k, da in enumerate(das))
        dh = dz[:, n:]


def _cell_backward(cell, caches, dout):
    n = cell.input_dim
    grads = {}
    if cell.kind == "lstm":
        _lstm_backward(cell, caches, dout, grads, n, 0)
    elif cell.kind == "bilstm":
        m = cell.hidden_dim
        _lstm_backward(cell, caches[0], dout[:, :m], grads, n, 0)
        _lstm_backward(cell, caches[1], dout[:, m:], grads, n, 4)
    elif cell.kind == "rnn":
        dh = dout
        for z, hn in reversed(caches):
            dh = _gate_backward(cell, grads, 0, z, dh * (1.0 - hn * hn))[:, n:]
    elif cell.kind == "fastrnn":
        dh = dout
        dalpha = dbeta = 0.0
        for z, t, h in reversed(caches):
            dalpha += float(np.sum(dh * t))
            dbeta += float(np.sum(dh * h))
            dz = _gate_backward(cell, grads, 0, z, cell.alpha * dh * (1.0 - t * t))
            dh = cell.beta * dh + dz[:, n:]
        grads["alpha"] = np.array(dalpha)
        grads["beta"] = np.array(dbeta)
    elif cell.kind == "gru":
        dh = dout
        for z, r, u, zc, cand, h in reversed(caches):
            dcand = dh * (1.0 - u)
            dhp = dh * u
            dzc = _gate_backward(cell, grads, 2, zc, dcand * (1.0 - cand * cand))
            drh = dzc[:, n:]
            dhp = dhp + drh * r
            dz0 = _gate_backward(cell, grads, 0, z, drh * h * r * (1.0 - r))
            dz1 = _gate_backward(cell, grads, 1, z, dh * (h - cand) * u * (1.0 - u))
            dh = dhp + dz0[:, n:] + dz1[:, n:]
    return grads


def _first_nonfinite_step(cell, caches):
    series = caches[0] + caches[1] if cell.kind == "bilstm" else caches
    for t, cache in enumerate(series):
        if not all(np.all(np.isfinite(a)) for a in cache):
            return t
    return None


def bptt_grads(net, xs, labels):
    """Mean softmax cross-entropy over a batch and the gradient of every parameter.

    ``xs`` is ``(batch, T, n)``; the returned dict is keyed like
    ``net.parameters()``.
    """
    xs = np.asarray(xs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if xs.ndim != 3 or xs.shape[0] == 0 or xs.shape[0] != labels.shape[0]:
        raise ValueError(f"need a non-empty (batch, T, n) array with matching labels, got {xs.shape}")
    cell = net.cell
    out, caches = run_cell(cell, xs, keep_cache=True)
    logits = out @ net.softmax_w.T + net.softmax_b
    loss, dlogits = softmax_xent(logits, labels)
    if not math.isfinite(loss):
        step = _first_nonfinite_step(cell, caches)
        raise NumericError(f"non-finite loss (first non-finite state at step {step})", step=step)
    grads = _cell_backward(cell, caches, dlogits @ net.softmax_w)
    grads["softmax.w"] = dlogits.T @ out
    grads["softmax.b"] = dlogits.sum(axis=0)
    params = net.parameters()
    return loss, {k: grads.get(k, np.zeros_like(v)) for k, v in params.items()}


# -- optimization -------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.01
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # ("none",) | ("step", every, divisor) | ("exp", rate, decay_steps)
    lr_decay: tuple = ("none",)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_decay[0] not in ("none", "step", "exp"):
            raise ValueError(f"unknown lr decay {self.lr_decay!r}")


def learning_rate(config, step):
    """Learning rate at schedule index ``step``.

    ``step`` decay divides by ``divisor`` after every ``every`` indices;
    ``exp`` decay multiplies by ``rate ** (step / decay_steps)``.
    """
    kind = config.lr_decay[0]
    lr = config.learning_rate
    if kind == "step":
        _, every, divisor = config.lr_decay
        return lr / divisor ** (step // every)
    if kind == "exp":
        _, rate, decay_steps = config.lr_decay
        return lr * rate ** (step / decay_steps)
    return lr


@dataclass
class OptimizerState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params, grads, config, step_index, state=None, lr=None):
    """One update. Returns ``(new_params, state)``; inputs are not modified."""
    state = OptimizerState() if state is None else state
    lr = learning_rate(config, step_index) if lr is None else lr
    if config.optimizer == "sgd":
        return {k: p - lr * grads[k] for k, p in params.items()}, state
    t = state.t + 1
    m, v, out = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m[k] = config.beta1 * state.m.get(k, 0.0) + (1 - config.beta1) * g
        v[k] = config.beta2 * state.v.get(k, 0.0) + (1 - config.beta2) * g * g
        mhat = m[k] / (1 - config.beta1**t)
        vhat = v[k] / (1 - config.beta2**t)
        out[k] = p - lr * mhat / (np.sqrt(vhat) + config.eps)
    return out, OptimizerState(t, m, v)


# -- synthetic task -------------------------------------------------------------


@dataclass(frozen=True)
class SynthTask:
    xs: np.ndarray
    labels: np.ndarray
    teacher: np.ndarray
    decay: float

    def scores(self, xs=None):
        xs = self.xs if xs is None else xs
        T = xs.shape[1]
        weights = self.decay ** np.arange(T - 1, -1, -1)
        return np.einsum("btn,n,t->b", xs, self.teacher, weights)


def synth_task_generate(seed, count, T=16, n=16, decay=0.9):
    """Balanced binary sequence task labelled by a hidden linear teacher.

    Inputs are standard normal; the label is ``1`` when
    ``sum_t <w, x_t> * decay**age`` is positive, where ``age`` counts steps
    back from the last input. Samples are drawn until each class holds half
    of ``count``.
    """
    rng = np.random.default_rng(seed)
    teacher = rng.standard_normal(n)
    teacher /= np.linalg.norm(teacher)
    quota = [count - count // 2, count // 2]
    probe = SynthTask(np.zeros((0, T, n)), np.zeros(0, dtype=np.int64), teacher, decay)
    xs, labels = [], []
    while quota[0] or quota[1]:
        chunk = rng.standard_normal((max(count, 16), T, n))
        for x, s in zip(chunk, probe.scores(chunk)):
            y = int(s > 0)
            if quota[y]:
                quota[y] -= 1
                xs.append(x)
                labels.append(y)
    return SynthTask(np.array(xs).reshape(count, T, n), np.array(labels, dtype=np.int64), teacher, decay)


# -- training loop ----------------------------------------------------------------


def evaluate(net, xs, labels, batch=512):
    """Mean cross-entropy and accuracy over a dataset."""
    losses, correct = 0.0, 0
    for lo in range(0, len(labels), batch):
        out, _ = run_cell(net.cell, xs[lo : lo + batch])
        logits = out @ net.softmax_w.T + net.softmax_b
        loss, _ = softmax_xent(logits, labels[lo : lo + batch])
        losses += loss * len(logits)
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[lo : lo + batch]))
    return losses / len(labels), correct / len(labels)


@dataclass
class TrainResult:
    net: object
    metrics: list
    optimizer_state: OptimizerState


def train_loop(config, net_builder, data, on_epoch=None, val=None):
    """Mini-batch training; returns the trained net and per-epoch metrics.

    ``net_builder(seed)`` creates the initial network, ``data`` is
    ``(xs, labels)``. Metrics after each epoch are full-dataset loss and
    accuracy plus the learning rate used, and ``val_loss``/``val_acc`` when a
    held-out ``val`` pair is given.
    """
    xs, labels = data
    net = net_builder(config.seed)
    params = net.parameters()
    state = OptimizerState()
    rng = np.random.default_rng(config.seed)
    metrics = []
    step = 0
    for epoch in range(config.epochs):
        lr = learning_rate(config, epoch)
        order = rng.permutation(len(labels))
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            try:
                _, grads = bptt_grads(net, xs[idx], labels[idx])
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch}, step {step}: {exc}", step=step) from exc
            params, state = optimizer_step(params, grads, config, step, state, lr=lr)
            net = net.with_parameters(params)
            step += 1
        loss, acc = evaluate(net, xs, labels)
        if not math.isfinite(loss):
            raise NumericError(f"training diverged at epoch {epoch}: loss {loss}", step=step)
        row = {"epoch": epoch + 1, "loss": loss, "train_acc": acc, "lr": lr}
        if val is not None:
            row["val_loss"], row["val_acc"] = evaluate(net, *val)
        metrics.append(row)
        log.debug("epoch %d loss %.5f acc %.4f", epoch + 1, loss, acc)
        if on_epoch is not None:
            on_epoch(row)
    return TrainResult(net, metrics, state)


# -- factor drift ------------------------------------------------------------------


def chain_factor_grads(chain, g):
    """Gradient of ``<g, expand(chain)>`` w.r.t. every factor of the chain."""
    out = []
    fs = chain.factors
    for i, f in enumerate(fs):
        left = multi_kron_expand(MultiKronChain(fs[:i])) if i >= 2 else (fs[0] if i == 1 else np.ones((1, 1)))
        rest = fs[i + 1 :]
        right = multi_kron_expand(MultiKronChain(rest)) if len(rest) >= 2 else (rest[0] if rest else np.ones((1, 1)))
        a, b = left.shape
        p, q = f.shape
        c, d = right.shape
        gr = g.reshape(a, p, c, b, q, d)
        out.append(np.einsum("apcbqd,ab,cd->pq", gr, left, right))
    return out


def factor_update_diagnostic(trace):
    """Relative Frobenius drift of each factor from its initial value.

    ``trace`` is a sequence of factor tuples, one per epoch, starting with the
    initial factors. Returns an ``(epochs, factors)`` array.
    """
    init = trace[0]
    return np.array(
        [[np.linalg.norm(f - f0) / np.linalg.norm(f0) for f, f0 in zip(snap, init)] for snap in trace]
    )


def train_kron_chain(factors, epochs=20, lr=0.05, samples=256, seed=0):
    """Fit a Kronecker chain to a random dense teacher by least squares.

    Returns the per-epoch factor trace (initial factors first) for
    :func:`factor_update_diagnostic`.
    """
    chain = MultiKronChain(tuple(np.array(f, dtype=np.float64) for f in factors))
    m, n = chain.shape
    rng = np.random.default_rng(seed)
    teacher = rng.standard_normal((m, n)) / np.sqrt(n)
    x = rng.standard_normal((samples, n))
    y = x @ teacher.T
    trace = [chain.factors]
    for _ in range(epochs):
        w = multi_kron_expand(chain)
        g = (x @ w.T - y).T @ x / samples
        grads = chain_factor_grads(chain, g)
        chain = MultiKronChain(tuple(f - lr * df for f, df in zip(chain.factors, grads)))
        trace.append(chain.factors)
    return trace
