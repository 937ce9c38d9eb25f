"""8-bit weight quantization: symmetric int8 with a per-tensor scale, and the
e4m3 1-4-3 minifloat (bias 7, max 448, no infinities, NaN at ``S.1111.111``).
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .cells import sequence_forward
from .errors import DataError

SCHEMES = ("int8_symmetric", "float8_e4m3")
E4M3_MAX = 448.0


def _e4m3_table():
    codes = np.arange(256, dtype=np.uint8)
    sign = np.where(codes & 0x80, -1.0, 1.0)
    exp = (codes >> 3) & 0x0F
    man = (codes & 0x07).astype(np.float64)
    val = np.where(exp == 0, man / 8.0 * 2.0**-6, (1.0 + man / 8.0) * 2.0 ** (exp.astype(np.float64) - 7))
    val = sign * val
    val[(codes & 0x7F) == 0x7F] = np.nan
    return val


E4M3_VALUES = _e4m3_table()
# codes 0x00..0x7E are the non-negative finite values in increasing order
_E4M3_POS = E4M3_VALUES[:0x7F]


def e4m3_encode(a):
    """Round to nearest e4m3 value, ties to even mantissa, saturating at +-448."""
    a = np.asarray(a, dtype=np.float64)
    mag = np.minimum(np.abs(a), E4M3_MAX)
    hi = np.clip(np.searchsorted(_E4M3_POS, mag, side="left"), 0, 0x7E)
    lo = np.maximum(hi - 1, 0)
    d_hi = _E4M3_POS[hi] - mag
    d_lo = mag - _E4M3_POS[lo]
    pick_lo = (d_lo < d_hi) | ((d_lo == d_hi) & (lo % 2 == 0))
    code = np.where(pick_lo, lo, hi).astype(np.uint8)
    neg = np.signbit(a) & (code != 0)
    return np.where(neg, code | 0x80, code).astype(np.uint8)


def e4m3_decode(codes):
    return E4M3_VALUES[np.asarray(codes, dtype=np.uint8)]


def e4m3_half_ulp(v):
    """Half the spacing of the e4m3 binade containing ``|v|``."""
    mag = np.abs(np.asarray(v, dtype=np.float64))
    e = np.floor(np.log2(np.maximum(mag, 2.0**-6)))
    return 0.5 * 2.0 ** (np.minimum(e, 8) - 3)


@dataclass(frozen=True, eq=False)
class QuantTensor:
    scheme: str
    payload: np.ndarray
    scale: float
    shape: tuple

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        payload = np.asarray(self.payload)
        if payload.size != int(np.prod(self.shape)):
            raise ValueError("payload length does not match shape")
        if self.scheme == "int8_symmetric" and not self.scale > 0:
            raise ValueError("int8 scale must be positive")
        object.__setattr__(self, "payload", payload)
        object.__setattr__(self, "shape", tuple(self.shape))

    @property
    def nbytes(self):
        return self.payload.size


def quantize8(a, scheme="int8_symmetric", scale=None):
    """Quantize ``a``; int8 uses ``max|a| / 127`` unless ``scale`` is given."""
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise DataError("cannot quantize non-finite values")
    if scheme == "int8_symmetric":
        if scale is None:
            amax = float(np.max(np.abs(a))) if a.size else 0.0
            scale = amax / 127.0 if amax > 0 else 1.0
        codes = np.clip(np.rint(a / scale), -127, 127).astype(np.int8)
        return QuantTensor(scheme, codes.ravel(), scale, a.shape)
    if scheme == "float8_e4m3":
        return QuantTensor(scheme, e4m3_encode(a).ravel(), 1.0, a.shape)
    raise ValueError(f"unknown scheme {scheme!r}")


def dequantize8(q):
    if q.scheme == "int8_symmetric":
        out = q.payload.astype(np.float64) * q.scale
    else:
        out = e4m3_decode(q.payload)
    return out.reshape(q.shape)


# -- whole networks ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuantizedNetwork:
    """A network whose parameter tensors are stored as :class:`QuantTensor`.

    ``tensors`` maps ``net.parameters()`` keys to quantized tensors; keys left
    out stay in full precision inside ``template``.
    """

    template: object
    tensors: dict

    def dequantized(self):
        params = dict(self.template.parameters())
        for k, q in self.tensors.items():
            params[k] = dequantize8(q)
        return self.template.with_parameters(params)


def _is_weight(key):
    return key.startswith("gate")


def quantize_network(net, scheme="int8_symmetric", select="all"):
    """Quantize ``net``'s tensors.

    ``select`` is ``"all"``, ``"gates"`` (gate weights only) or a predicate on
    the parameter name. FastRNN's scalar ``alpha``/``beta`` stay in full
    precision.
    """
    if select == "all":
        pick = lambda k: k not in ("alpha", "beta")  # noqa: E731
    elif select == "gates":
        pick = _is_weight
    else:
        pick = select
    tensors = {k: quantize8(v, scheme) for k, v in net.parameters().items() if pick(k)}
    return QuantizedNetwork(net, tensors)


def quantized_network_forward(qnet, inputs):
    """Logits with every quantized tensor decoded at call time."""
    return sequence_forward(qnet.dequantized(), inputs)


class SizeLine(NamedTuple):
    component: str
    params: int
    bytes_32bit: int
    bytes_8bit: int


def quantized_size_report(qnet):
    """Itemized bytes per component at 32-bit and at the quantized precision.

    Components: gate weights, biases, softmax, and the 4-byte scales carried by
    int8 tensors. A tensor not selected for quantization counts 4 bytes per
    element in both columns.
    """
    return size_lines(qnet.template.parameters(), qnet.tensors)


def size_lines(params, tensors):
    """:func:`quantized_size_report` over a raw ``{name: array}`` mapping."""
    groups = {"gate_weights": [], "biases": [], "softmax": [], "scalars": []}
    for k in params:
        if _is_weight(k):
            groups["gate_weights"].append(k)
        elif k.startswith("bias"):
            groups["biases"].append(k)
        elif k.startswith("softmax"):
            groups["softmax"].append(k)
        else:
            groups["scalars"].append(k)
    lines = []
    scale_count = 0
    for name, keys in groups.items():
        n = sum(int(np.size(params[k])) for k in keys)
        q8 = 0
        for k in keys:
            if k in tensors:
                q8 += tensors[k].nbytes
                scale_count += tensors[k].scheme == "int8_symmetric"
            else:
                q8 += 4 * int(np.size(params[k]))
        if n:
            lines.append(SizeLine(name, n, 4 * n, q8))
    if scale_count:
        lines.append(SizeLine("scales", 0, 0, 4 * scale_count))
    total = SizeLine("total", sum(l.params for l in lines), sum(l.bytes_32bit for l in lines), sum(l.bytes_8bit for l in lines))
    return lines + [total]
