"""Checkpoint persistence and cross-modal weight transfer.

Binary layout (all integers little-endian):

    magic  b"TIRD"
    u32    format version (= 1)
    u32    entry count
    per entry:
        u16   name length, then UTF-8 dotted parameter name
        u8    rank, then rank x u32 dims
        raw   little-endian float64 values, row-major
    u32    metadata byte length, then UTF-8 "key=value" lines

The transfer initializer copies a single-stream source's `backbone.*`
weights into BOTH the TIR and depth branches of a dual-stream net; fusion
and head weights follow when shapes match (scope="full"). Adapters always
keep their fresh random initialization.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointCorruptError, CheckpointFormatError, TransferError, UsageError

MAGIC = b"TIRD"
FORMAT_VERSION = 1

# target-prefix -> source-prefix rewrites tried in order; adapters are
# deliberately absent (they never transfer)
_TRANSFER_MAP_FULL = (
    ("tir_backbone.", "backbone."),
    ("depth_backbone.", "backbone."),
    ("fusion.", "fusion."),
    ("head.", "head."),
)
_TRANSFER_MAP_BACKBONE = _TRANSFER_MAP_FULL[:2]


@dataclass
class Checkpoint:
    format_version: int = FORMAT_VERSION
    entries: dict = field(default_factory=dict)  # name -> float64 ndarray
    metadata: dict = field(default_factory=dict)  # str -> str

    @classmethod
    def from_net(cls, net, metadata: dict | None = None) -> "Checkpoint":
        entries = {name: p.data.copy() for name, p in net.params.items()}
        return cls(entries=entries, metadata=dict(metadata or {}))


def save_checkpoint(net, path, metadata: dict | None = None) -> Checkpoint:
    ck = Checkpoint.from_net(net, metadata)
    write_checkpoint(ck, path)
    return ck


def write_checkpoint(ck: Checkpoint, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", ck.format_version, len(ck.entries)))
            for name, arr in ck.entries.items():
                nb = name.encode("utf-8")
                a = np.asarray(arr, dtype=np.float64)
                fh.write(struct.pack("<H", len(nb)))
                fh.write(nb)
                fh.write(struct.pack("<B", a.ndim))
                fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
                fh.write(a.astype("<f8").tobytes())
            meta = "\n".join(f"{k}={v}" for k, v in ck.metadata.items()).encode("utf-8")
            fh.write(struct.pack("<I", len(meta)))
            fh.write(meta)
    except OSError as exc:
        raise UsageError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointCorruptError(f"{self.path}: truncated while reading {what}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic (not a TIRD checkpoint)")
    version, count = r.unpack("<II", "header")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {version}")
    entries = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H", "entry name length")
        name = r.take(nlen, "entry name").decode("utf-8")
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}I", f"dims of {name}") if rank else ()
        n_values = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = r.take(8 * n_values, f"values of {name}")
        entries[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
    (mlen,) = r.unpack("<I", "metadata length")
    meta_blob = r.take(mlen, "metadata").decode("utf-8")
    metadata = {}
    for line in meta_blob.splitlines():
        if line:
            key, _, value = line.partition("=")
            metadata[key] = value
    return Checkpoint(format_version=version, entries=entries, metadata=metadata)


@dataclass
class InitReport:
    """Exact partition of the target's parameter names after transfer."""

    transferred: list
    fresh: list
    ignored_source: list
    scope: str

    def summary(self) -> str:
        lines = [f"transfer scope: {self.scope}",
                 f"transferred ({len(self.transferred)}):"]
        lines += [f"  {n}" for n in self.transferred]
        lines.append(f"fresh ({len(self.fresh)}):")
        lines += [f"  {n}" for n in self.fresh]
        if self.ignored_source:
            lines.append(f"ignored source entries ({len(self.ignored_source)}):")
            lines += [f"  {n}" for n in self.ignored_source]
        return "\n".join(lines)


def cross_modal_init(target, source: Checkpoint, scope: str = "full") -> InitReport:
    """Copy source weights into a dual-stream net; backbone entries load
    into both branches. Raises TransferError when nothing backbone-shaped
    can be copied (wrong source domain or architecture)."""
    if scope not in ("full", "backbone"):
        raise UsageError(f"transfer scope must be 'full' or 'backbone', got {scope!r}")
    rules = _TRANSFER_MAP_FULL if scope == "full" else _TRANSFER_MAP_BACKBONE
    transferred, fresh = [], []
    consumed = set()
    backbone_hits = 0
    for name, param in target.params.items():
        src_name = None
        for dst_prefix, src_prefix in rules:
            if name.startswith(dst_prefix):
                src_name = src_prefix + name[len(dst_prefix):]
                break
        src = source.entries.get(src_name) if src_name else None
        if src is not None and src.shape == param.data.shape:
            param.data = src.copy()
            transferred.append(name)
            consumed.add(src_name)
            if name.startswith(("tir_backbone.", "depth_backbone.")):
                backbone_hits += 1
        else:
            fresh.append(name)
    if backbone_hits == 0:
        raise TransferError(
            "no backbone entries transferred: source checkpoint has no shape-compatible "
            "backbone.* weights (wrong source domain or architecture)")
    ignored = sorted(set(source.entries) - consumed)
    return InitReport(transferred, fresh, ignored, scope)
