import struct

import numpy as np
import pytest

from kpk import io, quant, train
from kpk.cells import build_compressed_network, sequence_forward
from kpk.errors import FormatError


def test_kpm1_round_trip_bit_exact(tmp_path, rng):
    a = rng.standard_normal((7, 5))
    a[0, 0] = -0.0
    a[1, 1] = 5e-324
    path = tmp_path / "a.kpm"
    io.save_matrix(path, a)
    data = path.read_bytes()
    assert data[:4] == b"KPM1" and struct.unpack("<III", data[4:16]) == (7, 5, 0)
    assert len(data) == 16 + 8 * 35
    b = io.load_matrix(path)
    assert b.tobytes() == a.tobytes()


def test_kpm1_errors(tmp_path, rng):
    data = io.encode_matrix(rng.standard_normal((3, 3)))
    with pytest.raises(FormatError) as err:
        io.decode_matrix(data[:40])
    assert err.value.offset == 40 and "offset 40" in str(err.value)
    with pytest.raises(FormatError) as err:
        io.decode_matrix(b"NOPE" + data[4:])
    assert err.value.offset == 0
    with pytest.raises(FormatError):
        io.decode_matrix(data[:10])
    with pytest.raises(ValueError):
        io.encode_matrix(np.zeros((2, 2, 2)))


def test_csv_round_trip(tmp_path, rng):
    a = rng.standard_normal((4, 3))
    io.save_matrix(tmp_path / "a.csv", a)
    assert np.array_equal(io.load_matrix(tmp_path / "a.csv"), a)


def idx_bytes(images):
    n, r, c = images.shape
    return bytes([0, 0, 0x08, 3]) + struct.pack(">III", n, r, c) + images.astype(np.uint8).tobytes()


def test_idx_fixture(tmp_path, rng):
    images = rng.integers(0, 256, (4, 28, 28))
    path = tmp_path / "img.idx"
    path.write_bytes(idx_bytes(images))
    got = io.load_idx(path)
    assert got.shape == (4, 28, 28) and np.array_equal(got, images)


def test_idx_round_trip(tmp_path, rng):
    for a in (rng.integers(0, 10, 12).astype(np.uint8), rng.standard_normal((2, 3)).astype(np.float32)):
        io.save_idx(tmp_path / "x.idx", a)
        assert np.array_equal(io.load_idx(tmp_path / "x.idx"), a)


@pytest.mark.parametrize(
    "mutate,offset",
    [
        (lambda d: d[:3], 3),
        (lambda d: b"\x01" + d[1:], 0),
        (lambda d: d[:2] + b"\x07" + d[3:], 2),
        (lambda d: d[:10], 10),
        (lambda d: d[:-1], None),
    ],
)
def test_idx_errors(tmp_path, mutate, offset):
    data = idx_bytes(np.zeros((4, 28, 28)))
    path = tmp_path / "bad.idx"
    path.write_bytes(mutate(data))
    with pytest.raises(FormatError) as err:
        io.load_idx(path)
    if offset is not None:
        assert err.value.offset == offset


@pytest.mark.parametrize("kind", ["fastrnn", "lstm", "gru", "bilstm"])
@pytest.mark.parametrize("rep", ["dense", "kp", "hkp:1.5", "lmf:2", "sparse:3"])
def test_network_container_round_trip(tmp_path, kind, rep, rng):
    net = build_compressed_network(kind, 3, 6, 4, rep, seed=3, time_steps=5)
    path = tmp_path / "net.kpz"
    io.save_network(path, net)
    back = io.load_network(path)
    xs = rng.standard_normal((5, 3))
    assert np.array_equal(sequence_forward(back, xs), sequence_forward(net, xs))
    for k, v in net.parameters().items():
        assert np.array_equal(back.parameters()[k], v)
    assert io.load_quantized(path) is None and io.load_optimizer_state(path) is None


def test_hybrid_without_lower_block(tmp_path):
    net = build_compressed_network("rnn", 2, 3, 2, "hkp:1.0")
    io.save_network(tmp_path / "n.kpz", net)
    back = io.load_network(tmp_path / "n.kpz")
    assert np.array_equal(back.cell.gates[0].to_dense(), net.cell.gates[0].to_dense())


def test_container_with_quant_and_optimizer(tmp_path):
    task = train.synth_task_generate(0, 32, T=3, n=3)
    res = train.train_loop(
        train.TrainConfig(epochs=1, batch_size=16),
        lambda s: build_compressed_network("lstm", 3, 4, 2, "kp", s),
        (task.xs, task.labels),
    )
    for scheme in quant.SCHEMES:
        q = quant.quantize_network(res.net, scheme)
        path = tmp_path / f"{scheme}.kpz"
        io.save_network(path, res.net, quantized=q, optimizer_state=res.optimizer_state)
        back = io.load_quantized(path)
        for k, t in q.tensors.items():
            assert np.array_equal(back.tensors[k].payload, t.payload) and back.tensors[k].scale == t.scale
        st = io.load_optimizer_state(path)
        assert st.t == res.optimizer_state.t
        for k in st.m:
            assert np.array_equal(st.m[k], res.optimizer_state.m[k])
            assert np.array_equal(st.v[k], res.optimizer_state.v[k])


def test_container_is_deterministic(tmp_path):
    net = build_compressed_network("gru", 3, 4, 2, "kp", seed=1)
    io.save_network(tmp_path / "a.kpz", net)
    io.save_network(tmp_path / "b.kpz", net)
    assert (tmp_path / "a.kpz").read_bytes() == (tmp_path / "b.kpz").read_bytes()


def test_container_errors(tmp_path):
    (tmp_path / "junk.kpz").write_bytes(b"not a zip")
    with pytest.raises(FormatError):
        io.load_network(tmp_path / "junk.kpz")
    import zipfile

    with zipfile.ZipFile(tmp_path / "empty.kpz", "w") as zf:
        zf.writestr("x.txt", "hi")
    with pytest.raises(FormatError):
        io.load_network(tmp_path / "empty.kpz")
    with zipfile.ZipFile(tmp_path / "wrong.kpz", "w") as zf:
        zf.writestr("manifest.json", '{"format": "other/9"}')
    with pytest.raises(FormatError):
        io.load_network(tmp_path / "wrong.kpz")


def test_metrics_csv():
    text = io.metrics_csv([{"epoch": 1, "loss": 0.1, "train_acc": 0.5, "lr": 0.01}])
    lines = text.splitlines()
    assert lines[0] == "epoch,loss,train_acc,val_loss,val_acc,lr"
    assert lines[1] == "1,0.1,0.5,,,0.01"
