"""Bit-exact binary serialization of models and tv embeddings.

Container layout (all integers little-endian):
    magic "RGEM" | version u32 | meta_len u32 | metadata bytes
    | n_tensors u32 | per tensor: name_len u32, name bytes,
      rows u64, cols u64, row-major float32 data.
Metadata is UTF-8 ``key=value`` lines; structured values are canonical JSON
(sorted keys, compact separators), which makes save -> load -> save
byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import conv as conv_mod
from . import lstm as lstm_mod
from . import model as model_mod
from . import tvembed as tv_mod
from .corpus import Vocabulary
from .errors import DataError
from .numkernel import real_dtype

MAGIC = b"RGEM"
VERSION = 1


def _canon_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def save_tensors(path, metadata: dict, tensors) -> None:
    """Write the container; 1-d arrays are stored as a single row."""
    meta_text = "".join(f"{k}={v}\n" for k, v in metadata.items())
    meta_bytes = meta_text.encode("utf-8")
    tensors = list(tensors)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            arr = np.asarray(arr)
            if arr.ndim == 1:
                arr = arr.reshape(1, -1)
            if arr.ndim != 2:
                raise ValueError(f"tensor {name!r} must be 1-d or 2-d")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_tensors(path):
    """Read the container; data is promoted to the active precision."""
    with open(path, "rb") as fh:
        raw = fh.read()
    view = memoryview(raw)
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a {MAGIC.decode()} file")
    try:
        (version,) = struct.unpack_from("<I", raw, 4)
        if version != VERSION:
            raise DataError(f"{path}: unsupported format version {version}")
        (meta_len,) = struct.unpack_from("<I", raw, 8)
        pos = 12
        meta_text = bytes(view[pos:pos + meta_len]).decode("utf-8")
        pos += meta_len
        metadata = {}
        for line in meta_text.splitlines():
            key, _, value = line.partition("=")
            metadata[key] = value
        (n_tensors,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        tensors = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = bytes(view[pos:pos + name_len]).decode("utf-8")
            pos += name_len
            rows, cols = struct.unpack_from("<QQ", raw, pos)
            pos += 16
            count = rows * cols
            data = np.frombuffer(raw, dtype="<f4", count=count, offset=pos)
            pos += 4 * count
            tensors[name] = data.reshape(rows, cols).astype(real_dtype())
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: corrupt container ({exc})") from None
    return metadata, tensors


def _vec(tensors, name):
    return tensors[name].ravel()


def _tv_config(emb: tv_mod.TvEmbedding) -> dict:
    cfg = {
        "kind": emb.kind,
        "dim": emb.dim,
        "name": emb.name,
        "direction": emb.direction,
        "region_size": emb.region_size,
        "align_offset": emb.align_offset,
        "target_vocab_hash": emb.target_vocab_hash,
        "source_vocab_hash": emb.source_vocab_hash,
    }
    if emb.kind == "lstm":
        cfg["vocab_size"] = emb.lstm_params.input_dim
    else:
        cfg["vocab_size"] = emb.conv_params.vocab_size
        cfg["input_kind"] = emb.conv_params.input_kind
    return cfg


def _tv_from_config(cfg: dict, tensors: dict, prefix: str = "") -> tv_mod.TvEmbedding:
    if cfg["kind"] == "lstm":
        gates = lstm_mod.GATES["full"]
        params = lstm_mod.LstmParams(
            "full", cfg["dim"], cfg["vocab_size"], "one-hot",
            {g: tensors[f"{prefix}wx.{g}"] for g in gates},
            {g: tensors[f"{prefix}wh.{g}"] for g in gates},
            {g: _vec(tensors, f"{prefix}bias.{g}") for g in gates},
        )
        emb = tv_mod.TvEmbedding(
            kind="lstm", dim=cfg["dim"], name=cfg["name"], lstm_params=params,
            direction=cfg["direction"], align_offset=cfg["align_offset"],
            target_vocab_hash=cfg["target_vocab_hash"],
            source_vocab_hash=cfg["source_vocab_hash"],
        )
    else:
        params = conv_mod.ConvParams(
            cfg["dim"], cfg["region_size"], cfg["input_kind"], cfg["vocab_size"],
            tensors[f"{prefix}w"], _vec(tensors, f"{prefix}b"),
        )
        emb = tv_mod.TvEmbedding(
            kind="cnn", dim=cfg["dim"], name=cfg["name"], conv_params=params,
            region_size=cfg["region_size"], align_offset=cfg["align_offset"],
            target_vocab_hash=cfg["target_vocab_hash"],
            source_vocab_hash=cfg["source_vocab_hash"],
        )
    return emb.freeze()


def save_tv(path, emb: tv_mod.TvEmbedding) -> None:
    metadata = {"format": "tv", "config": _canon_json(_tv_config(emb))}
    save_tensors(path, metadata, emb.tensors())


def load_tv(path) -> tv_mod.TvEmbedding:
    metadata, tensors = load_tensors(path)
    if metadata.get("format") != "tv":
        raise DataError(f"{path}: not a tv-embedding file")
    return _tv_from_config(json.loads(metadata["config"]), tensors)


def _model_config(spec: model_mod.ModelSpec) -> dict:
    branches = []
    for branch in spec.branches:
        pooling = {"kind": branch.pooling.kind, "regions": branch.pooling.regions}
        if isinstance(branch, model_mod.LstmBranch):
            parts = {}
            for tag, params, _ in branch.parts():
                parts[tag] = {
                    "variant": params.variant,
                    "units": params.units,
                    "input_dim": params.input_dim,
                    "side": [sp.tv_id for sp in params.side],
                }
            branches.append({
                "type": "lstm",
                "direction": branch.direction,
                "pooling": pooling,
                "parts": parts,
                "embedding_dim": None if branch.embedding is None
                else branch.embedding.shape[0],
                "train_embedding": branch.train_embedding,
            })
        else:
            branches.append({
                "type": "conv",
                "pooling": pooling,
                "maps": branch.params.maps,
                "region_size": branch.params.region_size,
                "input_kind": branch.params.input_kind,
                "side": [sp.tv_id for sp in branch.params.side],
            })
    return {
        "n_classes": spec.n_classes,
        "vocab_size": spec.vocab_size,
        "class_names": spec.class_names,
        "target_encoding": spec.target_encoding,
        "dropout_rate": spec.top.dropout_rate,
        "branches": branches,
        "tv": {tv_id: _tv_config(emb) for tv_id, emb in spec.tv_table.items()},
        "vocab": spec.vocab.words if spec.vocab is not None else None,
    }


def save_model(path, spec: model_mod.ModelSpec) -> None:
    metadata = {"format": "model", "config": _canon_json(_model_config(spec))}
    save_tensors(path, metadata, model_mod.iter_tensors(spec))


def _lstm_part_from(cfg_part, tensors, prefix, input_kind, tv_table):
    gates = lstm_mod.GATES[cfg_part["variant"]]
    side = []
    for tv_id in cfg_part["side"]:
        emb = tv_table[tv_id]
        side.append(lstm_mod.SideInputParams(
            tv_id, emb.dim,
            {g: tensors[f"{prefix}.side.{tv_id}.{g}"] for g in gates},
        ))
    return lstm_mod.LstmParams(
        cfg_part["variant"], cfg_part["units"], cfg_part["input_dim"], input_kind,
        {g: tensors[f"{prefix}.wx.{g}"] for g in gates},
        {g: tensors[f"{prefix}.wh.{g}"] for g in gates},
        {g: _vec(tensors, f"{prefix}.bias.{g}") for g in gates},
        side,
    )


def load_model(path) -> model_mod.ModelSpec:
    metadata, tensors = load_tensors(path)
    if metadata.get("format") != "model":
        raise DataError(f"{path}: not a model file")
    cfg = json.loads(metadata["config"])
    tv_table = {}
    for tv_id in sorted(cfg["tv"]):
        sub = {name[len(f"tv.{tv_id}."):]: arr for name, arr in tensors.items()
               if name.startswith(f"tv.{tv_id}.")}
        tv_table[tv_id] = _tv_from_config(cfg["tv"][tv_id], sub)
    branches = []
    for bi, bc in enumerate(cfg["branches"]):
        pooling = model_mod.PoolingSpec(bc["pooling"]["kind"], bc["pooling"]["regions"])
        if bc["type"] == "lstm":
            embedding = tensors.get(f"br{bi}.emb")
            input_kind = "dense" if embedding is not None else "one-hot"
            fwd = bwd = None
            if "fwd" in bc["parts"]:
                fwd = _lstm_part_from(bc["parts"]["fwd"], tensors, f"br{bi}.fwd",
                                      input_kind, tv_table)
            if "bwd" in bc["parts"]:
                bwd = _lstm_part_from(bc["parts"]["bwd"], tensors, f"br{bi}.bwd",
                                      input_kind, tv_table)
            branches.append(model_mod.LstmBranch(
                bc["direction"], pooling, fwd, bwd, embedding,
                bc["train_embedding"],
            ))
        else:
            side = []
            for tv_id in bc["side"]:
                emb = tv_table[tv_id]
                side.append(lstm_mod.SideInputParams(
                    tv_id, emb.dim,
                    {conv_mod.CONV_GATE:
                     tensors[f"br{bi}.side.{tv_id}.{conv_mod.CONV_GATE}"]},
                ))
            params = conv_mod.ConvParams(
                bc["maps"], bc["region_size"], bc["input_kind"], cfg["vocab_size"],
                tensors[f"br{bi}.w"], _vec(tensors, f"br{bi}.b"), side,
            )
            branches.append(model_mod.ConvBranch(pooling, params))
    top = model_mod.TopLayerParams(tensors["top.w"], _vec(tensors, "top.b"),
                                   cfg["dropout_rate"])
    vocab = Vocabulary(cfg["vocab"]) if cfg["vocab"] is not None else None
    return model_mod.ModelSpec(
        branches, top, cfg["n_classes"], cfg["vocab_size"], cfg["class_names"],
        cfg["target_encoding"], tv_table, vocab,
    )
