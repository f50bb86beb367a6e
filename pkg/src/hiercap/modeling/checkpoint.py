"""RCKPT1 checkpoint container.

Layout: magic ``RCKPT1``, little-endian u64 header length, JSON header, then
raw little-endian array bytes back to back.  The header carries the model
config, tokenizer table, freeze mask, training-stage provenance, and the
offset/shape/dtype of every named parameter.  Writing is deterministic:
arrays are ordered by sorted name.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..textproc import Tokenizer
from .backbone import BidirectionalEncoder, CausalLM
from .bundle import ModelBundle, ModelConfig

MAGIC = b"RCKPT1"


class CheckpointError(ValueError):
    pass


def save_bundle(bundle: ModelBundle, path: str | Path,
                extra: dict | None = None) -> None:
    state = bundle.state_dict()
    names = sorted(state.keys())
    arrays = []
    entries = []
    offset = 0
    for name in names:
        arr = state[name].detach().cpu().numpy()
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "offset": offset,
            "nbytes": len(raw),
        })
        arrays.append(raw)
        offset += len(raw)
    header = {
        "format": "RCKPT1",
        "config": bundle.cfg.to_dict(),
        "tokenizer": bundle.tokenizer.to_dict(),
        "freeze_mask": bundle.freeze_mask(),
        "provenance": list(bundle.provenance),
        "arrays": entries,
        "backbone": {
            "decoder_layers": len(bundle.decoder.blocks),
            "alignment_layers": len(bundle.encoder.blocks),
            "max_pos": bundle.decoder.max_pos,
        },
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in arrays:
            fh.write(raw)


def load_bundle(path: str | Path) -> ModelBundle:
    path = Path(path)
    data = path.read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path.name}: bad magic, expected {MAGIC!r}")
    (hlen,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(data[start : start + hlen].decode("utf-8"))
    body = data[start + hlen:]

    cfg = ModelConfig.from_dict(header["config"])
    tokenizer = Tokenizer.from_dict(header["tokenizer"])
    bb = header["backbone"]
    decoder = CausalLM(tokenizer.vocab_size, cfg.d_model, bb["decoder_layers"],
                       cfg.heads, bb["max_pos"])
    encoder = BidirectionalEncoder(tokenizer.vocab_size, cfg.d_model,
                                   bb["alignment_layers"], cfg.heads, bb["max_pos"])
    bundle = ModelBundle(cfg, tokenizer, decoder, encoder)
    bundle.provenance = list(header["provenance"])

    state = {}
    for entry in header["arrays"]:
        raw = body[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path.name}: truncated array {entry['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    missing = set(bundle.state_dict()) - set(state)
    if missing:
        raise CheckpointError(f"{path.name}: missing arrays {sorted(missing)[:5]}")
    bundle.load_state_dict(state)
    for name, frozen in header["freeze_mask"].items():
        if frozen:
            bundle.get_parameter(name).requires_grad_(False)
    bundle.decoder.eval()
    bundle.encoder.eval()
    return bundle


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(hlen).decode("utf-8"))
