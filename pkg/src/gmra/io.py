"""Model and coefficient files.

Model container: two files side by side.

``<stem>.bin``
    bytes 0..7 magic ``b"GMRAMD01"``, then every array as little-endian
    float64, row-major, concatenated in the order listed in the sidecar.
``<stem>.json``
    format version, variant (``"gmra"`` or ``"ortho"``), policy, flags,
    precision, the partition tree, and for each array its node, name, shape
    and float offset into the payload.

Coefficient dump: CSV with header ``point_id,j,k,block_index,value`` or a
binary file: magic ``b"GMRACF01"``, uint64 record count, then packed records
``<u8 point_id, <i4 j, <i4 k, <i4 block_index, <f8 value``. Each point starts
with a marker record naming its leaf (block_index -1, value 0), since
zero-dimensional blocks leave no rows of their own.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ModelMismatch, ParseError
from .model import DimensionPolicy, GmraModel, GmraNode
from .ortho import OrthoGmraModel, OrthoNode
from .transforms import GwtCoefficients
from .tree import PartitionTree, key_str, parse_key

MODEL_MAGIC = b"GMRAMD01"
COEFF_MAGIC = b"GMRACF01"
FORMAT_VERSION = 1
COEFF_RECORD = np.dtype([("point", "<u8"), ("j", "<i4"), ("k", "<i4"),
                         ("index", "<i4"), ("value", "<f8")])

_GMRA_ARRAYS = ("center", "basis", "spectrum", "wavelet", "translation", "psi_phi",
                "parent_phi", "parent_shift", "shared_wavelet", "specific_wavelet")
_ORTHO_ARRAYS = ("center", "new_basis", "translation")


def _paths(stem) -> tuple[Path, Path]:
    stem = Path(stem)
    if stem.suffix in (".bin", ".json"):
        stem = stem.with_suffix("")
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def save_model(model, stem) -> tuple[Path, Path]:
    """Write ``stem.bin`` and ``stem.json``; returns both paths."""
    bin_path, json_path = _paths(stem)
    if isinstance(model, OrthoGmraModel):
        variant, names = "ortho", _ORTHO_ARRAYS
        meta = {"precision": model.precision, "norm": model.norm,
                "cum_dim": {key_str(k): n.cum_dim for k, n in model.nodes.items()},
                "residual": {key_str(k): n.residual for k, n in model.nodes.items()}}
    else:
        variant, names = "gmra", _GMRA_ARRAYS
        meta = {"precision": model.precision,
                "tangential_corrections": model.tangential_corrections,
                "split_shared_wavelets": model.split_shared_wavelets}
    arrays, chunks, offset = [], [], 0
    for key, node in model.nodes.items():
        for name in names:
            value = getattr(node, name)
            if value is None:
                continue
            value = np.ascontiguousarray(value, dtype="<f8")
            arrays.append({"node": key_str(key), "name": name, "shape": list(value.shape),
                           "offset": offset})
            chunks.append(value.tobytes())
            offset += value.size
    sidecar = {
        "format": "gmra-model", "version": FORMAT_VERSION, "variant": variant,
        "model_id": model.model_id, "policy": model.policy.describe(),
        "meta": meta, "tree": model.tree.to_dict(), "arrays": arrays,
        "sizes": {key_str(k): int(n.size) for k, n in model.nodes.items()},
    }
    with open(bin_path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        for c in chunks:
            fh.write(c)
    with open(json_path, "w") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return bin_path, json_path


def load_model(stem):
    """Read a model written by :func:`save_model` (bit-exact arrays)."""
    bin_path, json_path = _paths(stem)
    with open(json_path) as fh:
        sidecar = json.load(fh)
    if sidecar.get("format") != "gmra-model":
        raise ParseError(f"{json_path} is not a model sidecar")
    if sidecar["version"] > FORMAT_VERSION:
        raise ParseError(f"model format version {sidecar['version']} is newer than supported")
    raw = Path(bin_path).read_bytes()
    if raw[:8] != MODEL_MAGIC:
        raise ParseError(f"bad magic in {bin_path}")
    payload = np.frombuffer(raw[8:], dtype="<f8")
    fields: dict = {}
    for rec in sidecar["arrays"]:
        size = int(np.prod(rec["shape"], dtype=np.int64))
        value = payload[rec["offset"]:rec["offset"] + size].astype(float).reshape(rec["shape"])
        fields.setdefault(parse_key(rec["node"]), {})[rec["name"]] = value
    tree = PartitionTree.from_dict(sidecar["tree"])
    policy = DimensionPolicy.from_description(sidecar["policy"])
    meta = sidecar["meta"]
    sizes = {parse_key(k): v for k, v in sidecar["sizes"].items()}
    nodes = {}
    if sidecar["variant"] == "ortho":
        for key, f in sorted(fields.items()):
            nodes[key] = OrthoNode(key, f["center"], f["new_basis"], f["translation"],
                                   meta["cum_dim"][key_str(key)], sizes[key],
                                   meta["residual"][key_str(key)])
        model = OrthoGmraModel(tree, nodes, policy, meta["precision"], meta["norm"],
                               sidecar["model_id"])
    else:
        for key, f in sorted(fields.items()):
            node = GmraNode(key, f["center"], f["basis"], f["spectrum"], sizes[key])
            for name in _GMRA_ARRAYS[3:]:
                setattr(node, name, f.get(name))
            nodes[key] = node
        model = GmraModel(tree, nodes, policy, meta["tangential_corrections"],
                          meta["split_shared_wavelets"], meta["precision"], sidecar["model_id"])
    return model


def _coefficient_records(coeffs) -> np.ndarray:
    n = sum(sum(b.size for b in c.blocks) + 1 for c in coeffs)
    rec = np.empty(n, dtype=COEFF_RECORD)
    pos = 0
    for pid, c in enumerate(coeffs):
        rec[pos] = (pid, c.leaf[0], c.leaf[1], -1, 0.0)
        pos += 1
        for j, key in enumerate(c.path):
            b = c.block_at(j)
            sl = slice(pos, pos + b.size)
            rec["point"][sl] = pid
            rec["j"][sl] = key[0]
            rec["k"][sl] = key[1]
            rec["index"][sl] = np.arange(b.size)
            rec["value"][sl] = b
            pos += b.size
    return rec


def save_coefficients(coeffs, path, fmt: str = "csv"):
    """Dump coefficient blocks root-first per point."""
    rec = _coefficient_records(coeffs)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point_id", "j", "k", "block_index", "value"])
            for r in rec:
                w.writerow([int(r["point"]), int(r["j"]), int(r["k"]), int(r["index"]),
                            repr(float(r["value"]))])
    elif fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(COEFF_MAGIC)
            fh.write(struct.pack("<Q", rec.size))
            fh.write(rec.tobytes())
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _block_dim(model, key, is_root: bool) -> int:
    node = model.nodes[key]
    if isinstance(model, OrthoGmraModel):
        return node.dim
    return node.dim if is_root else node.wavelet_dim


def load_coefficients(path, model: GmraModel, fmt: str | None = None) -> list[GwtCoefficients]:
    """Rebuild GwtCoefficients for `model` from a dump written by :func:`save_coefficients`."""
    if fmt is None:
        with open(path, "rb") as fh:
            fmt = "binary" if fh.read(8) == COEFF_MAGIC else "csv"
    if fmt == "binary":
        raw = Path(path).read_bytes()
        if len(raw) < 16:
            raise ParseError(f"{path} is too short for a coefficient header")
        (count,) = struct.unpack("<Q", raw[8:16])
        if len(raw) - 16 != count * COEFF_RECORD.itemsize:
            raise ParseError(f"expected {count} records, found {len(raw) - 16} payload bytes")
        rec = np.frombuffer(raw[16:], dtype=COEFF_RECORD)
    else:
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for lineno, row in enumerate(reader, start=2):
                try:
                    rows.append((int(row[0]), int(row[1]), int(row[2]), int(row[3]), float(row[4])))
                except (ValueError, IndexError):
                    raise ParseError("malformed coefficient row", lineno) from None
        rec = np.array(rows, dtype=COEFF_RECORD)
    points: dict = {}
    leaves: dict = {}
    for r in rec:
        pid, key = int(r["point"]), (int(r["j"]), int(r["k"]))
        blocks = points.setdefault(pid, {})
        if int(r["index"]) < 0:
            leaves[pid] = key
        else:
            blocks.setdefault(key, []).append((int(r["index"]), float(r["value"])))
    out = []
    for pid in sorted(points):
        blocks = points[pid]
        leaf = leaves.get(pid) or max(blocks)
        if leaf not in model.nodes:
            raise ModelMismatch(f"coefficients reference unknown node {leaf}")
        path = model.path(leaf)
        vals = []
        for key in reversed(path):
            entries = sorted(blocks.get(key, []))
            block = np.array([v for _, v in entries])
            if block.size != _block_dim(model, key, key == path[0]):
                raise ModelMismatch(f"point {pid}: block at {key} has {block.size} entries, "
                                    f"model expects {_block_dim(model, key, key == path[0])}")
            vals.append(block)
        out.append(GwtCoefficients(path, vals, model.ambient_dim, model.model_id))
    return out
