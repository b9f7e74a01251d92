"""Self-describing binary container for matrices and fitted models.

Layout (little-endian throughout):

    bytes 0..3      magic b"KPC1"
    bytes 4..7      uint32 header length H
    bytes 8..8+H    UTF-8 JSON header:
                      {"kind": str,
                       "meta": {...},
                       "fields": [{"name": str, "dtype": "f8"|"i8", "shape": [...]}]}
    remainder       field payloads, C-order (row-major), concatenated in order

All floats are 64-bit; round trips are bit-exact.  The same container backs
snapshot datasets, fitted operators, dictionaries and training checkpoints.
"""

from __future__ import annotations

import json
import struct
from typing import Any, Dict, Tuple

import numpy as np

from . import dual_data, koopman, observables
from .errors import InvalidInputError

MAGIC = b"KPC1"
_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


def save_container(path, kind: str, fields: Dict[str, np.ndarray], meta: dict | None = None):
    """Write named arrays plus JSON metadata to a container file."""
    entries = []
    payloads = []
    for name, arr in fields.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.kind == "f":
            code = "f8"
        elif arr.dtype.kind in "iu b":
            code = "i8"
        else:
            raise InvalidInputError(f"unsupported dtype {arr.dtype} for field {name!r}")
        arr = arr.astype(_DTYPES[code], copy=False)
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape)})
        payloads.append(arr.tobytes(order="C"))
    header = json.dumps(
        {"kind": kind, "meta": meta or {}, "fields": entries}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for payload in payloads:
            fh.write(payload)


def load_container(path) -> Tuple[str, Dict[str, np.ndarray], dict]:
    """Read a container file back as (kind, fields, meta)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise InvalidInputError(f"{path}: not a container file (magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        fields = {}
        for entry in header["fields"]:
            dtype = _DTYPES[entry["dtype"]]
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * dtype.itemsize)
            fields[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return header["kind"], fields, header["meta"]


# ---------------------------------------------------------------------------
# Typed wrappers
# ---------------------------------------------------------------------------

def save_snapshots(path, ds: koopman.SnapshotDataset):
    save_container(path, "snapshots", {"X": ds.X, "Xp": ds.Xp, "U": ds.U}, {"dt": ds.dt})


def load_snapshots(path) -> koopman.SnapshotDataset:
    kind, f, meta = load_container(path)
    _expect(kind, "snapshots", path)
    return koopman.SnapshotDataset(f["X"], f["Xp"], f["U"], meta["dt"])


def save_operator(path, op: koopman.LiftedOperator):
    save_container(
        path,
        "operator",
        {"Gamma": op.Gamma, "Delta": op.Delta, "Pi": op.Pi},
        {
            "dict_id": op.dict_id,
            "dt": op.dt,
            "rank_deficient": op.rank_deficient,
            "version": op.version,
        },
    )


def load_operator(path) -> koopman.LiftedOperator:
    kind, f, meta = load_container(path)
    _expect(kind, "operator", path)
    return koopman.LiftedOperator(
        f["Gamma"], f["Delta"], f["Pi"],
        dict_id=meta["dict_id"], dt=meta["dt"],
        rank_deficient=meta["rank_deficient"], version=meta["version"],
    )


def _encoder_fields(enc: observables.EncoderParams, prefix: str) -> Dict[str, np.ndarray]:
    out = {}
    for i, (W, b) in enumerate(enc.layers):
        out[f"{prefix}W{i}"] = W
        out[f"{prefix}b{i}"] = b
    return out


def _encoder_from_fields(fields, prefix: str, n_layers: int) -> observables.EncoderParams:
    layers = tuple(
        (fields[f"{prefix}W{i}"], fields[f"{prefix}b{i}"]) for i in range(n_layers)
    )
    return observables.EncoderParams(layers)


def _dictionary_payload(d: observables.Dictionary, prefix: str = ""):
    meta: Dict[str, Any] = {
        "kind": d.kind,
        "in_dim": d.in_dim,
        "out_dim": d.out_dim,
        "leading_block": d.leading_block,
        "degree": d.degree,
        "width": d.width,
        "harmonics": d.harmonics,
        "constant": d.constant,
        "split": d.split,
    }
    fields: Dict[str, np.ndarray] = {}
    if d.centers is not None:
        fields[prefix + "centers"] = d.centers
    if d.frequencies is not None:
        fields[prefix + "frequencies"] = d.frequencies
        fields[prefix + "offsets"] = d.offsets
    if d.encoder is not None:
        meta["n_layers"] = len(d.encoder.layers)
        fields.update(_encoder_fields(d.encoder, prefix + "enc."))
    if d.parts is not None:
        m0, f0 = _dictionary_payload(d.parts[0], prefix + "p0.")
        m1, f1 = _dictionary_payload(d.parts[1], prefix + "p1.")
        meta["parts"] = [m0, m1]
        fields.update(f0)
        fields.update(f1)
    return meta, fields


def _dictionary_from_payload(meta, fields, prefix: str = "") -> observables.Dictionary:
    parts = None
    if meta.get("parts"):
        parts = (
            _dictionary_from_payload(meta["parts"][0], fields, prefix + "p0."),
            _dictionary_from_payload(meta["parts"][1], fields, prefix + "p1."),
        )
    encoder = None
    if "n_layers" in meta:
        encoder = _encoder_from_fields(fields, prefix + "enc.", meta["n_layers"])
    return observables.Dictionary(
        kind=meta["kind"],
        in_dim=meta["in_dim"],
        out_dim=meta["out_dim"],
        leading_block=meta["leading_block"],
        degree=meta["degree"],
        centers=fields.get(prefix + "centers"),
        width=meta["width"],
        frequencies=fields.get(prefix + "frequencies"),
        offsets=fields.get(prefix + "offsets"),
        harmonics=meta["harmonics"],
        constant=meta["constant"],
        encoder=encoder,
        parts=parts,
        split=meta["split"],
    )


def save_dictionary(path, d: observables.Dictionary):
    meta, fields = _dictionary_payload(d)
    save_container(path, "dictionary", fields, meta)


def load_dictionary(path) -> observables.Dictionary:
    kind, fields, meta = load_container(path)
    _expect(kind, "dictionary", path)
    return _dictionary_from_payload(meta, fields)


def save_generator(path, gen: dual_data.GeneratorOperator):
    save_container(
        path, "generator",
        {"L": gen.L, "half_step": gen.half_step},
        {"dtau": gen.dtau, "rank_deficient": gen.rank_deficient},
    )


def load_generator(path) -> dual_data.GeneratorOperator:
    kind, f, meta = load_container(path)
    _expect(kind, "generator", path)
    return dual_data.GeneratorOperator(
        f["L"], f["half_step"], meta["dtau"], meta["rank_deficient"]
    )


def save_residual(path, res: dual_data.ResidualOperator):
    save_container(path, "residual", {"H": res.H}, {"dtau": res.dtau})


def load_residual(path) -> dual_data.ResidualOperator:
    kind, f, meta = load_container(path)
    _expect(kind, "residual", path)
    return dual_data.ResidualOperator(f["H"], meta["dtau"])


def save_checkpoint(path, enc: observables.EncoderParams, op: koopman.LiftedOperator,
                    dic: observables.Dictionary, config: dict, seed: int):
    """Bundle encoder + operator + dictionary + training config into one file."""
    dmeta, dfields = _dictionary_payload(dic, "dict.")
    fields = {
        "op.Gamma": op.Gamma, "op.Delta": op.Delta, "op.Pi": op.Pi,
        **_encoder_fields(enc, "enc."),
        **dfields,
    }
    meta = {
        "config": config,
        "seed": seed,
        "n_layers": len(enc.layers),
        "dict": dmeta,
        "op": {
            "dict_id": op.dict_id, "dt": op.dt,
            "rank_deficient": op.rank_deficient, "version": op.version,
        },
    }
    save_container(path, "checkpoint", fields, meta)


def load_checkpoint(path):
    kind, f, meta = load_container(path)
    _expect(kind, "checkpoint", path)
    enc = _encoder_from_fields(f, "enc.", meta["n_layers"])
    om = meta["op"]
    op = koopman.LiftedOperator(
        f["op.Gamma"], f["op.Delta"], f["op.Pi"],
        dict_id=om["dict_id"], dt=om["dt"],
        rank_deficient=om["rank_deficient"], version=om["version"],
    )
    dic = _dictionary_from_payload(meta["dict"], f, "dict.")
    return enc, op, dic, meta["config"], meta["seed"]


def _expect(kind: str, want: str, path):
    if kind != want:
        raise InvalidInputError(f"{path}: container holds {kind!r}, expected {want!r}")
