"""Benchmark dimensions and per-preset parameter accounting."""
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

from . import kpcore
from .baselines import lmf_rank_for_target
from .cells import GATE_COUNT, dense_layer_params


@dataclass(frozen=True)
class Preset:
    name: str
    kind: str
    input_dim: int
    hidden_dim: int
    classes: int
    time_steps: int
    # hidden size of the Kronecker variant when it differs from the baseline
    kp_hidden: Optional[int] = None
    # kernel-only presets override the per-gate matrix shape
    gate_shape: Optional[tuple] = None
    note: str = ""

    @property
    def kp_hidden_dim(self):
        return self.kp_hidden or self.hidden_dim

    def gate(self, hidden=None):
        if self.gate_shape is not None:
            return self.gate_shape
        h = hidden or self.hidden_dim
        return (h, h + self.input_dim)

    @property
    def has_network(self):
        return self.gate_shape is None


PRESETS = {
    p.name: p
    for p in [
        Preset("mnist-lstm", "lstm", 28, 40, 10, 28),
        Preset(
            "usps-fastrnn",
            "fastrnn",
            16,
            32,
            10,
            16,
            note="a 16x factor is often quoted for this model; per-gate accounting of the combined matrix gives the value shown",
        ),
        Preset("kws-lstm", "lstm", 10, 118, 12, 25),
        Preset("kws-gru", "gru", 10, 154, 12, 25),
        Preset("har1-bilstm", "bilstm", 77, 179, 18, 81, kp_hidden=178),
        Preset("square-256", "gru", 256, 256, 12, 1, gate_shape=(256, 256)),
    ]
}
NETWORK_PRESETS = ("mnist-lstm", "usps-fastrnn", "kws-lstm", "kws-gru", "har1-bilstm")


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


class SizeRow(NamedTuple):
    variant: str
    hidden: int
    layer_params: int
    total_params: int
    compression: float
    size_kb: float
    size_kb_csr: Optional[float] = None
    detail: str = ""


def _softmax_params(p, hidden):
    out = 2 * hidden if p.kind == "bilstm" else hidden
    return p.classes * out + p.classes


def _row(p, variant, hidden, layer, base_layer, detail="", csr_bytes=None):
    total = layer + _softmax_params(p, hidden)
    csr_kb = None
    if csr_bytes is not None:
        csr_kb = (csr_bytes + 4 * (total - layer + _layer_bias(p, hidden))) / 1024
    return SizeRow(variant, hidden, layer, total, base_layer / layer, total * 4 / 1024, csr_kb, detail)


def _layer_bias(p, hidden):
    return GATE_COUNT[p.kind] * hidden + (2 if p.kind == "fastrnn" else 0)


def kp_layer_params(p, hidden=None):
    hidden = hidden or p.kp_hidden_dim
    plan = kpcore.select_factor_shapes(*p.gate(hidden))
    return GATE_COUNT[p.kind] * plan.params_compressed + _layer_bias(p, hidden), plan


def size_table(p):
    """Baseline, small baseline, Kronecker, low-rank and pruned accounting for a preset."""
    if not p.has_network:
        raise ValueError(f"preset {p.name} is kernel-only")
    gates = GATE_COUNT[p.kind]
    base_layer = dense_layer_params(p.kind, p.input_dim, p.hidden_dim)
    rows = [_row(p, "baseline", p.hidden_dim, base_layer, base_layer)]

    kp_layer, plan = kp_layer_params(p)
    target = base_layer / kp_layer

    small = p.hidden_dim
    while small > 1 and dense_layer_params(p.kind, p.input_dim, small) > kp_layer:
        small -= 1
    rows.append(_row(p, "small-baseline", small, dense_layer_params(p.kind, p.input_dim, small), base_layer))

    rows.append(
        _row(p, "kp", p.kp_hidden_dim, kp_layer, base_layer, detail=f"B {plan.left[0]}x{plan.left[1]} kron C {plan.right[0]}x{plan.right[1]}")
    )

    m, n = p.gate()
    d = lmf_rank_for_target(m, n, target)
    lmf_layer = gates * d * (m + n) + _layer_bias(p, p.hidden_dim)
    rows.append(_row(p, "lmf", p.hidden_dim, lmf_layer, base_layer, detail=f"rank {d}"))

    sparsity = 1.0 - 1.0 / target
    nnz = m * n - math.floor(sparsity * m * n)
    pruned_layer = gates * nnz + _layer_bias(p, p.hidden_dim)
    csr_bytes = gates * (nnz * 8 + (m + 1) * 4)
    rows.append(
        _row(p, "pruned", p.hidden_dim, pruned_layer, base_layer, detail=f"sparsity {sparsity:.4f}, nnz/gate {nnz}", csr_bytes=csr_bytes)
    )
    return rows
