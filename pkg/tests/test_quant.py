import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpk import quant
from kpk.cells import build_compressed_network, sequence_forward
from kpk.errors import DataError
from kpk.kpcore import kron_expand


def e4m3_bits(code):
    """Decode one byte from its bit fields."""
    s, e, f = code >> 7, (code >> 3) & 0xF, code & 0x7
    if e == 0xF and f == 0x7:
        return float("nan")
    mag = (f / 8) * 2.0**-6 if e == 0 else (1 + f / 8) * 2.0 ** (e - 7)
    return -mag if s else mag


def test_e4m3_table_matches_bit_fields():
    for code in range(256):
        want = e4m3_bits(code)
        got = quant.E4M3_VALUES[code]
        assert (np.isnan(want) and np.isnan(got)) or got == want


def test_e4m3_known_codes():
    assert quant.e4m3_encode(1.5) == 0x3C
    assert quant.e4m3_decode(0x3C) == 1.5
    assert quant.e4m3_decode(0x7E) == 448.0
    assert quant.e4m3_decode(0x01) == 2.0**-9
    assert quant.e4m3_encode(1000.0) == 0x7E
    assert quant.e4m3_encode(-1000.0) == 0xFE


def test_e4m3_ties_to_even():
    assert quant.e4m3_encode(1.0625) == 0x38
    assert quant.e4m3_encode(1.1875) == 0x3A
    assert quant.e4m3_encode(2.0**-10) == 0x00


def test_e4m3_exhaustive_round_trip():
    for code in range(256):
        v = quant.e4m3_decode(np.uint8(code))
        if np.isnan(v):
            continue
        assert quant.e4m3_decode(quant.e4m3_encode(v)) == v


@given(st.floats(-448, 448, allow_nan=False))
def test_e4m3_rounding_bound(v):
    err = abs(quant.e4m3_decode(quant.e4m3_encode(v)) - v)
    assert err <= quant.e4m3_half_ulp(v)


def test_int8_zero_tensor():
    q = quant.quantize8(np.zeros((3, 4)))
    assert q.scale == 1.0 and not np.any(q.payload)
    assert np.array_equal(quant.dequantize8(q), np.zeros((3, 4)))


def test_int8_grid_is_exact():
    s = 0.25
    a = np.arange(-127, 128) * s
    q = quant.quantize8(a)
    assert q.scale == s
    assert np.array_equal(quant.dequantize8(q), a)


def test_int8_exhaustive_codes():
    s = 0.013
    for code in range(-128, 128):
        v = quant.dequantize8(quant.QuantTensor("int8_symmetric", np.array([code], dtype=np.int8), s, (1,)))[0]
        assert v == code * s
        assert quant.quantize8(np.array([v]), scale=s).payload[0] == max(code, -127)


def test_int8_random_error_bound(rng):
    a = rng.uniform(-1, 1, (64, 64))
    q = quant.quantize8(a)
    assert np.max(np.abs(quant.dequantize8(q) - a)) <= (1 / 127) / 2 + 1e-12


def test_dequantize_examples(rng):
    q = quant.QuantTensor("int8_symmetric", np.array([127], dtype=np.int8), 0.5, (1,))
    assert quant.dequantize8(q)[0] == 63.5
    a = rng.standard_normal((5, 5))
    for scheme in quant.SCHEMES:
        once = quant.dequantize8(quant.quantize8(a, scheme))
        twice = quant.dequantize8(quant.quantize8(once, scheme))
        assert np.array_equal(once, twice)


def test_quantize_guards():
    with pytest.raises(DataError):
        quant.quantize8(np.array([1.0, np.inf]))
    with pytest.raises(ValueError):
        quant.quantize8(np.ones(2), "int4")
    with pytest.raises(ValueError):
        quant.QuantTensor("int8_symmetric", np.zeros(3, dtype=np.int8), 1.0, (2, 2))


def test_network_zero_weights_unchanged(rng):
    net = build_compressed_network("lstm", 3, 4, 2, "kp")
    zero = net.with_parameters({k: np.zeros_like(v) for k, v in net.parameters().items()})
    xs = rng.standard_normal((5, 3))
    q = quant.quantize_network(zero)
    assert np.array_equal(quant.quantized_network_forward(q, xs), sequence_forward(zero, xs))


def test_network_ahead_vs_on_the_fly(rng):
    net = build_compressed_network("gru", 4, 6, 3, "kp", seed=2)
    q = quant.quantize_network(net, "float8_e4m3")
    xs = rng.standard_normal((2, 5, 4))
    assert np.array_equal(quant.quantized_network_forward(q, xs), sequence_forward(q.dequantized(), xs))


def test_kp_structure_commutes_with_dequantization():
    net = build_compressed_network("lstm", 10, 118, 12, "kp")
    q = quant.quantize_network(net, select="gates")
    deq = q.dequantized()
    g = deq.cell.gates[0]
    b = quant.dequantize8(q.tensors["gate0.b"])
    c = quant.dequantize8(q.tensors["gate0.c"])
    assert np.array_equal(kron_expand(g), np.kron(b, c))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_quantized_agreement_on_toy_net(seed):
    net = build_compressed_network("lstm", 8, 16, 4, "kp", seed=seed % 1000)
    q = quant.quantize_network(net)
    xs = np.random.default_rng(seed).standard_normal((200, 6, 8))
    agree = np.mean(np.argmax(sequence_forward(net, xs), 1) == np.argmax(quant.quantized_network_forward(q, xs), 1))
    assert agree >= 0.9


def test_size_report_dense_mnist():
    net = build_compressed_network("lstm", 28, 40, 10)
    lines = {l.component: l for l in quant.quantized_size_report(quant.quantize_network(net))}
    assert lines["total"].params == 11450
    assert lines["total"].bytes_32bit == 4 * 11450
    assert lines["scales"].bytes_8bit == 4 * 10
    assert lines["total"].bytes_8bit == 11450 + 40


def test_size_report_empty():
    lines = quant.size_lines({}, {})
    assert [tuple(l) for l in lines] == [("total", 0, 0, 0)]


def test_size_report_kp_gates_only():
    net = build_compressed_network("lstm", 10, 118, 12, "kp")
    lines = {l.component: l for l in quant.quantized_size_report(quant.quantize_network(net, select="gates"))}
    assert lines["gate_weights"].bytes_8bit == 2016
    assert lines["biases"].bytes_8bit == lines["biases"].bytes_32bit == 4 * 472
