"""Binary and text formats.

KPM1 matrix file (little-endian)::

    offset  size  field
    0       4     magic b"KPM1"
    4       4     u32 rows
    8       4     u32 cols
    12      4     reserved, zero
    16      8*r*c float64 entries, row-major

KPI1 is the same layout with u32 entries (CSR row pointers and column
indices) and KPQ1 with one byte per entry (8-bit quantized payloads).

A network container is a zip archive holding ``manifest.json`` plus one blob
per tensor, referenced from the manifest by relative path.
"""
import csv
import io as _io
import json
import struct
import zipfile
from pathlib import Path

import numpy as np

from .baselines import LowRankPair, SparseCSR
from .cells import GATE_NAMES, CellSpec, Dense, NetworkSpec, rep_tag
from .errors import FormatError
from .kpcore import HybridMatrix, KronFactorPair
from .quant import QuantizedNetwork, QuantTensor

_HEADER = struct.Struct("<4sIII")
_KINDS = {b"KPM1": np.dtype("<f8"), b"KPI1": np.dtype("<u4"), b"KPQ1": np.dtype("u1")}
CSV_MAX_ELEMENTS = 10**6
CONTAINER_FORMAT = "kpk-network/1"


def encode_matrix(a, magic=b"KPM1"):
    dtype = _KINDS[magic]
    a = np.asarray(a)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"only matrices can be stored, got shape {a.shape}")
    return _HEADER.pack(magic, a.shape[0], a.shape[1], 0) + np.ascontiguousarray(a, dtype=dtype).tobytes()


def decode_matrix(data, magic=b"KPM1"):
    if len(data) < _HEADER.size:
        raise FormatError(f"truncated header: {len(data)} bytes", offset=len(data))
    got, rows, cols, _ = _HEADER.unpack_from(data)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", offset=0)
    dtype = _KINDS[magic]
    need = _HEADER.size + rows * cols * dtype.itemsize
    if len(data) < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {len(data)}", offset=len(data))
    return np.frombuffer(data, dtype=dtype, count=rows * cols, offset=_HEADER.size).reshape(rows, cols).copy()


def save_matrix(path, a):
    """Write ``a`` as KPM1, or as CSV when ``path`` ends in ``.csv``."""
    path = Path(path)
    a = np.asarray(a, dtype=np.float64)
    if path.suffix.lower() == ".csv":
        if a.size > CSV_MAX_ELEMENTS:
            raise ValueError(f"CSV export is limited to {CSV_MAX_ELEMENTS} elements")
        np.savetxt(path, np.atleast_2d(a), delimiter=",", fmt="%.17g")
    else:
        path.write_bytes(encode_matrix(a))


def load_matrix(path):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        a = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
        if a.size > CSV_MAX_ELEMENTS:
            raise ValueError(f"CSV import is limited to {CSV_MAX_ELEMENTS} elements")
        return a
    return decode_matrix(path.read_bytes())


# -- IDX ----------------------------------------------------------------------

_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def load_idx(path):
    """Read an IDX file (the MNIST distribution format) into an array."""
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise FormatError("truncated IDX magic", offset=len(data))
    if data[0] != 0 or data[1] != 0:
        raise FormatError("IDX magic must start with two zero bytes", offset=0)
    if data[2] not in _IDX_TYPES:
        raise FormatError(f"unknown IDX type code 0x{data[2]:02x}", offset=2)
    ndim = data[3]
    if ndim == 0:
        raise FormatError("IDX file declares zero dimensions", offset=3)
    if len(data) < 4 + 4 * ndim:
        raise FormatError("truncated IDX dimension list", offset=len(data))
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    dtype = np.dtype(_IDX_TYPES[data[2]])
    start = 4 + 4 * ndim
    need = start + int(np.prod(dims)) * dtype.itemsize
    if len(data) < need:
        raise FormatError(f"truncated IDX payload: need {need} bytes, have {len(data)}", offset=len(data))
    return np.frombuffer(data, dtype=dtype, count=int(np.prod(dims)), offset=start).reshape(dims).copy()


def save_idx(path, a):
    a = np.asarray(a)
    native = a.dtype.newbyteorder("=")
    codes = [c for c, s in _IDX_TYPES.items() if np.dtype(s).newbyteorder("=") == native]
    if not codes:
        raise ValueError(f"dtype {a.dtype} has no IDX type code")
    code = codes[0]
    header = bytes([0, 0, code, a.ndim]) + struct.pack(f">{a.ndim}I", *a.shape)
    Path(path).write_bytes(header + a.astype(np.dtype(_IDX_TYPES[code])).tobytes())


# -- network container ------------------------------------------------------------


class _Writer:
    def __init__(self, zf):
        self.zf = zf

    def put(self, name, a, magic=b"KPM1"):
        ext = {b"KPM1": "kpm", b"KPI1": "kpi", b"KPQ1": "kpq"}[magic]
        path = f"{name}.{ext}"
        self.zf.writestr(_entry(path), encode_matrix(np.atleast_2d(a), magic))
        return path


def _entry(name):
    # fixed timestamp keeps containers byte-identical across runs
    return zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))


def _rep_entry(w, rep, prefix):
    tag = rep_tag(rep)
    entry = {"rep": tag, "shape": list(rep.shape)}
    if tag == "sparse":
        entry["tensors"] = {
            "row_ptr": w.put(f"{prefix}/row_ptr", rep.row_ptr, b"KPI1"),
            "col_idx": w.put(f"{prefix}/col_idx", rep.col_idx, b"KPI1"),
            "values": w.put(f"{prefix}/values", rep.values),
        }
    else:
        entry["tensors"] = {k: w.put(f"{prefix}/{k}", v) for k, v in rep.params().items()}
    if tag == "hkp":
        entry["r"] = rep.r
    return entry


def _read_rep(entry, get):
    t = entry["tensors"]
    tag = entry["rep"]
    rows, cols = entry["shape"]
    if tag == "dense":
        return Dense(get(t["w"]))
    if tag == "kp":
        return KronFactorPair(get(t["b"]), get(t["c"]))
    if tag == "hkp":
        upper = get(t["upper"]) if entry["r"] else np.zeros((0, cols))
        lower = KronFactorPair(get(t["b"]), get(t["c"])) if "b" in t else None
        return HybridMatrix(upper.reshape(entry["r"], cols), lower)
    if tag == "lmf":
        return LowRankPair(get(t["u"]), get(t["v"]))
    if tag == "sparse":
        return SparseCSR(
            rows,
            cols,
            get(t["row_ptr"], b"KPI1").ravel().astype(np.int64),
            get(t["col_idx"], b"KPI1").ravel().astype(np.int32),
            get(t["values"]).ravel(),
        )
    raise FormatError(f"unknown representation tag {tag!r}")


def save_network(path, net, quantized=None, optimizer_state=None):
    """Write ``net`` (optionally with quantized tensors and optimizer moments)."""
    cell = net.cell
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        w = _Writer(zf)
        manifest = {
            "format": CONTAINER_FORMAT,
            "kind": cell.kind,
            "input_dim": cell.input_dim,
            "hidden_dim": cell.hidden_dim,
            "classes": net.classes,
            "time_steps": net.time_steps,
            "gate_order": list(GATE_NAMES[cell.kind]),
            "alpha": cell.alpha,
            "beta": cell.beta,
            "gates": [_rep_entry(w, g, f"gates/{i}") for i, g in enumerate(cell.gates)],
            "biases": [w.put(f"biases/{i}", b) for i, b in enumerate(cell.biases)],
            "softmax": {"w": w.put("softmax/w", net.softmax_w), "b": w.put("softmax/b", net.softmax_b)},
        }
        if quantized is not None:
            manifest["quant"] = {
                k: {
                    "scheme": q.scheme,
                    "scale": q.scale,
                    "shape": list(q.shape),
                    "payload": w.put(f"quant/{k}", q.payload.view(np.uint8), b"KPQ1"),
                }
                for k, q in quantized.tensors.items()
            }
        if optimizer_state is not None:
            manifest["optimizer"] = {
                "t": optimizer_state.t,
                "m": {k: w.put(f"optimizer/m/{k}", v) for k, v in optimizer_state.m.items()},
                "v": {k: w.put(f"optimizer/v/{k}", v) for k, v in optimizer_state.v.items()},
            }
        zf.writestr(_entry("manifest.json"), json.dumps(manifest, indent=2, sort_keys=True))


def _open(path):
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise FormatError(f"{path} is not a network container: {exc}") from exc
    try:
        manifest = json.loads(zf.read("manifest.json"))
    except KeyError as exc:
        zf.close()
        raise FormatError(f"{path} has no manifest.json") from exc
    if manifest.get("format") != CONTAINER_FORMAT:
        zf.close()
        raise FormatError(f"unsupported container format {manifest.get('format')!r}")
    return zf, manifest


def load_network(path):
    """Read a container written by :func:`save_network`; returns the network."""
    zf, man = _open(path)
    with zf:
        get = lambda name, magic=b"KPM1": decode_matrix(zf.read(name), magic)  # noqa: E731
        gates = tuple(_read_rep(e, get) for e in man["gates"])
        biases = tuple(get(p).ravel() for p in man["biases"])
        cell = CellSpec(
            man["kind"], man["input_dim"], man["hidden_dim"], gates, biases, alpha=man["alpha"], beta=man["beta"]
        )
        return NetworkSpec(cell, get(man["softmax"]["w"]), get(man["softmax"]["b"]).ravel(), man["time_steps"])


def load_quantized(path):
    """Quantized view stored alongside the network, or ``None``."""
    net = load_network(path)
    zf, man = _open(path)
    with zf:
        if "quant" not in man:
            return None
        tensors = {}
        for k, e in man["quant"].items():
            raw = decode_matrix(zf.read(e["payload"]), b"KPQ1").ravel()
            payload = raw.view(np.int8) if e["scheme"] == "int8_symmetric" else raw
            tensors[k] = QuantTensor(e["scheme"], payload, e["scale"], tuple(e["shape"]))
    return QuantizedNetwork(net, tensors)


def load_optimizer_state(path):
    from .train import OptimizerState

    net = load_network(path)
    params = net.parameters()
    zf, man = _open(path)
    with zf:
        if "optimizer" not in man:
            return None
        o = man["optimizer"]
        read = lambda k, p: decode_matrix(zf.read(p)).reshape(np.shape(params[k]))  # noqa: E731
        return OptimizerState(
            o["t"], {k: read(k, p) for k, p in o["m"].items()}, {k: read(k, p) for k, p in o["v"].items()}
        )


# -- metrics CSV ------------------------------------------------------------------

METRIC_FIELDS = ("epoch", "loss", "train_acc", "val_loss", "val_acc", "lr")


def metrics_csv(rows, fields=METRIC_FIELDS):
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
