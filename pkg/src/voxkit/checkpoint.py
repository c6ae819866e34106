"""Model checkpoints: a human-readable manifest next to a float32 blob.

The manifest carries the format version, encoder variant, the architecture
hash of the config that built the model, and one record per parameter:
name, dtype, shape, byte offset into the blob. Offsets must tile the blob
exactly; loading into a model whose parameters or config hash differ is
refused rather than silently misassigning weights.
"""

import numpy as np

from .errors import CheckpointError

MAGIC = "voxkit-checkpoint"
FORMAT_VERSION = 1
BLOB_DTYPE = "<f4"


def blob_path(manifest_path):
    return str(manifest_path) + ".blob"


def _shape_text(shape):
    return ",".join(str(d) for d in shape) if shape else "-"


def _parse_shape(text):
    if text == "-":
        return ()
    try:
        return tuple(int(d) for d in text.split(","))
    except ValueError:
        raise CheckpointError(f"bad shape field {text!r}") from None


def save_checkpoint(path, params, variant, config_hash):
    lines = [f"{MAGIC} {FORMAT_VERSION}",
             f"variant {variant}",
             f"config {config_hash}",
             f"params {len(params)}"]
    chunks = []
    offset = 0
    for p in params:
        if any(ch.isspace() for ch in p.name):
            raise CheckpointError(f"parameter name {p.name!r} contains whitespace")
        arr = np.ascontiguousarray(p.value, dtype=BLOB_DTYPE)
        lines.append(f"{p.name} f4 {_shape_text(p.value.shape)} {offset}")
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(blob_path(path), "wb") as fh:
        fh.write(b"".join(chunks))


def read_manifest(path):
    """Returns (variant, config_hash, records); records are
    (name, dtype, shape, offset) tuples in manifest order."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines:
        raise CheckpointError(f"empty checkpoint manifest: {path}")
    head = lines[0].split()
    if len(head) != 2 or head[0] != MAGIC:
        raise CheckpointError(f"not a checkpoint manifest: {path}")
    if int(head[1]) != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {head[1]} (expected {FORMAT_VERSION})")
    meta = {}
    for i, key in ((1, "variant"), (2, "config"), (3, "params")):
        if i >= len(lines) or not lines[i].startswith(key + " "):
            raise CheckpointError(f"manifest missing {key!r} line")
        meta[key] = lines[i].split(" ", 1)[1]
    n = int(meta["params"])
    records = []
    body = [ln for ln in lines[4:] if ln.strip()]
    if len(body) != n:
        raise CheckpointError(f"manifest declares {n} params but lists {len(body)}")
    for ln in body:
        fields = ln.split()
        if len(fields) != 4:
            raise CheckpointError(f"bad record line: {ln!r}")
        name, dtype, shape_text, offset = fields
        if dtype != "f4":
            raise CheckpointError(f"unsupported record dtype {dtype!r}")
        records.append((name, dtype, _parse_shape(shape_text), int(offset)))
    return meta["variant"], meta["config"], records


def load_checkpoint(path, params, config_hash=None, variant=None):
    """Restore parameter values in place; refuses any structural mismatch."""
    found_variant, found_hash, records = read_manifest(path)
    if config_hash is not None and found_hash != config_hash:
        raise CheckpointError(
            f"config hash mismatch: checkpoint {found_hash[:12]}.. vs model {config_hash[:12]}..")
    if variant is not None and found_variant != variant:
        raise CheckpointError(
            f"variant mismatch: checkpoint is {found_variant!r}, model is {variant!r}")

    names = params.names()
    record_names = [r[0] for r in records]
    if record_names != names:
        missing = [n for n in names if n not in set(record_names)]
        extra = [n for n in record_names if n not in set(names)]
        raise CheckpointError(
            f"parameter set mismatch: missing {missing[:3]}, unexpected {extra[:3]}")

    with open(blob_path(path), "rb") as fh:
        blob = fh.read()
    expected = 0
    for name, _, shape, offset in records:
        if offset != expected:
            raise CheckpointError(
                f"record {name!r} at offset {offset}, expected {expected}")
        expected += int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
    if len(blob) != expected:
        raise CheckpointError(
            f"blob is {len(blob)} bytes, manifest describes {expected}")

    for name, _, shape, offset in records:
        p = params[name]
        if tuple(shape) != p.value.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {shape}, model {p.value.shape}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(blob, dtype=BLOB_DTYPE, count=count, offset=offset)
        p.value[...] = arr.reshape(shape).astype(np.float64)
    return found_variant, found_hash
