"""Attention dump container: a small binary format holding the cross/self
attention tensors and gradients for one (sample, passage) pair, together with
the tokenization metadata needed to interpret them.

File layout (little-endian throughout):
    bytes 0..8    ASCII magic "MASVQA01"
    bytes 8..16   uint64 header length N
    bytes 16..16+N  UTF-8 JSON header {"meta": {...}, "tensors": [...]}
    remainder     concatenated raw float32 tensor payloads, row-major,
                  byte offsets relative to the start of the payload region
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Sequence

import numpy as np

MAGIC = b"MASVQA01"
TENSOR_NAMES = ("cross_attn", "cross_grad", "self_attn", "self_grad")


class DumpError(Exception):
    """Base class for container format errors."""


class BadMagic(DumpError):
    pass


class HeaderCorrupt(DumpError):
    pass


class ShapeMismatch(DumpError):
    pass


class NonFiniteTensor(DumpError):
    pass


class EmptyGroup(DumpError):
    """A token group (knowledge or question) has no tokens."""


@dataclass(frozen=True)
class DumpMeta:
    heads: int
    seq_len: int
    patches: int
    grid: int
    block: int
    sep_positions: tuple[int, int]
    offset_mapping: tuple[tuple[int, int], ...]
    knowledge_text: str
    question_text: str
    truncated: bool = False
    effective_knowledge_len: int | None = None

    def effective_len(self) -> int:
        if self.effective_knowledge_len is not None:
            return self.effective_knowledge_len
        return len(self.knowledge_text)

    def validate(self) -> None:
        if self.patches != self.grid * self.grid:
            raise ShapeMismatch(
                f"patches={self.patches} but grid={self.grid} implies {self.grid ** 2}"
            )
        s0, s1 = self.sep_positions
        if not (0 < s0 < s1 < self.seq_len):
            raise ShapeMismatch(f"bad separator positions {self.sep_positions} for L={self.seq_len}")
        if len(self.offset_mapping) != self.seq_len:
            raise ShapeMismatch(
                f"offset_mapping has {len(self.offset_mapping)} entries, expected L={self.seq_len}"
            )
        last_start = 0
        for idx in range(1, s0):
            a, b = self.offset_mapping[idx]
            if not (0 <= a <= b <= len(self.knowledge_text)):
                raise ShapeMismatch(f"offset ({a},{b}) out of bounds at token {idx}")
            if (a, b) != (0, 0):
                if a < last_start:
                    raise ShapeMismatch(f"offset starts decrease at token {idx}")
                last_start = a


@dataclass(frozen=True)
class SequenceLayout:
    """Token index ranges for the knowledge and question segments of the
    concatenated [CLS] knowledge [SEP] question [SEP] sequence."""

    idx_knowledge: range
    idx_question: range
    offset_mapping: tuple[tuple[int, int], ...]
    knowledge_text: str
    truncated: bool = False
    effective_knowledge_len: int | None = None

    def effective_len(self) -> int:
        if self.effective_knowledge_len is not None:
            return self.effective_knowledge_len
        return len(self.knowledge_text)


@dataclass
class AttentionDump:
    meta: DumpMeta
    cross_attn: np.ndarray  # [H, L, P] float32
    cross_grad: np.ndarray  # [H, L, P] float32
    self_attn: np.ndarray  # [H, L, L] float32
    self_grad: np.ndarray  # [H, L, L] float32

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "cross_attn": self.cross_attn,
            "cross_grad": self.cross_grad,
            "self_attn": self.self_attn,
            "self_grad": self.self_grad,
        }

    def validate(self) -> None:
        validate_dump(self)


def validate_dump(dump: AttentionDump) -> None:
    """Check shape, finiteness, and sign invariants; raise DumpError on failure."""
    meta = dump.meta
    meta.validate()
    h, l, p = meta.heads, meta.seq_len, meta.patches
    expected = {
        "cross_attn": (h, l, p),
        "cross_grad": (h, l, p),
        "self_attn": (h, l, l),
        "self_grad": (h, l, l),
    }
    for name, arr in dump.tensors().items():
        if tuple(arr.shape) != expected[name]:
            raise ShapeMismatch(f"{name} has shape {tuple(arr.shape)}, expected {expected[name]}")
        if arr.dtype != np.float32:
            raise ShapeMismatch(f"{name} has dtype {arr.dtype}, expected float32")
        if not np.isfinite(arr).all():
            raise NonFiniteTensor(f"{name} contains non-finite entries")
    for name in ("cross_attn", "self_attn"):
        if (dump.tensors()[name] < 0).any():
            raise NonFiniteTensor(f"{name} contains negative attention entries")


def _meta_to_json(meta: DumpMeta) -> dict:
    return {
        "heads": meta.heads,
        "seq_len": meta.seq_len,
        "patches": meta.patches,
        "grid": meta.grid,
        "block": meta.block,
        "sep_positions": list(meta.sep_positions),
        "offset_mapping": [list(pair) for pair in meta.offset_mapping],
        "knowledge_text": meta.knowledge_text,
        "question_text": meta.question_text,
        "truncated": meta.truncated,
        "effective_knowledge_len": meta.effective_knowledge_len,
    }


def _meta_from_json(obj: dict) -> DumpMeta:
    try:
        return DumpMeta(
            heads=int(obj["heads"]),
            seq_len=int(obj["seq_len"]),
            patches=int(obj["patches"]),
            grid=int(obj["grid"]),
            block=int(obj["block"]),
            sep_positions=(int(obj["sep_positions"][0]), int(obj["sep_positions"][1])),
            offset_mapping=tuple((int(a), int(b)) for a, b in obj["offset_mapping"]),
            knowledge_text=obj["knowledge_text"],
            question_text=obj["question_text"],
            truncated=bool(obj.get("truncated", False)),
            effective_knowledge_len=obj.get("effective_knowledge_len"),
        )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise HeaderCorrupt(f"malformed meta: {exc}") from exc


def write_dump(dump: AttentionDump, sink: BinaryIO) -> None:
    """Serialize a validated dump to the container format."""
    validate_dump(dump)
    entries = []
    payloads = []
    offset = 0
    for name in TENSOR_NAMES:
        arr = np.ascontiguousarray(dump.tensors()[name], dtype="<f4")
        raw = arr.tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": "f32",
                "byte_offset": offset,
                "byte_len": len(raw),
            }
        )
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": _meta_to_json(dump.meta), "tensors": entries}).encode("utf-8")
    sink.write(MAGIC)
    sink.write(struct.pack("<Q", len(header)))
    sink.write(header)
    for raw in payloads:
        sink.write(raw)


def read_dump(source: BinaryIO) -> AttentionDump:
    """Parse and validate a container file."""
    magic = source.read(8)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    raw_len = source.read(8)
    if len(raw_len) != 8:
        raise HeaderCorrupt("truncated header length field")
    (header_len,) = struct.unpack("<Q", raw_len)
    header_bytes = source.read(header_len)
    if len(header_bytes) != header_len:
        raise HeaderCorrupt("header length exceeds file size")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderCorrupt(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or "meta" not in header or "tensors" not in header:
        raise HeaderCorrupt("header missing meta/tensors")
    meta = _meta_from_json(header["meta"])
    payload = source.read()
    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        try:
            name = entry["name"]
            shape = tuple(int(d) for d in entry["shape"])
            off = int(entry["byte_offset"])
            nbytes = int(entry["byte_len"])
            dtype = entry["dtype"]
        except (KeyError, TypeError, ValueError) as exc:
            raise HeaderCorrupt(f"malformed tensor entry: {exc}") from exc
        if dtype != "f32":
            raise HeaderCorrupt(f"unsupported dtype {dtype!r}")
        if off < 0 or off + nbytes > len(payload):
            raise HeaderCorrupt(f"tensor {name} payload out of bounds")
        count = int(np.prod(shape)) if shape else 1
        if count * 4 != nbytes:
            raise HeaderCorrupt(f"tensor {name} byte_len inconsistent with shape")
        arrays[name] = np.frombuffer(payload[off : off + nbytes], dtype="<f4").reshape(shape)
    missing = [n for n in TENSOR_NAMES if n not in arrays]
    if missing:
        raise HeaderCorrupt(f"missing tensors: {missing}")
    dump = AttentionDump(
        meta=meta,
        cross_attn=arrays["cross_attn"],
        cross_grad=arrays["cross_grad"],
        self_attn=arrays["self_attn"],
        self_grad=arrays["self_grad"],
    )
    validate_dump(dump)
    return dump


def read_dump_file(path) -> AttentionDump:
    with open(path, "rb") as fh:
        return read_dump(fh)


def write_dump_file(dump: AttentionDump, path) -> None:
    with open(path, "wb") as fh:
        write_dump(dump, fh)


def layout_of(meta: DumpMeta) -> SequenceLayout:
    """Derive the knowledge/question token index ranges from the separator
    positions: I_K = [1, sep0) and I_Q = [sep0+1, sep1), both half-open."""
    meta.validate()
    s0, s1 = meta.sep_positions
    idx_k = range(1, s0)
    idx_q = range(s0 + 1, s1)
    if len(idx_k) == 0:
        raise EmptyGroup("knowledge token range is empty")
    if len(idx_q) == 0:
        raise EmptyGroup("question token range is empty")
    return SequenceLayout(
        idx_knowledge=idx_k,
        idx_question=idx_q,
        offset_mapping=meta.offset_mapping,
        knowledge_text=meta.knowledge_text,
        truncated=meta.truncated,
        effective_knowledge_len=meta.effective_knowledge_len,
    )


def synth_dump(
    seed: int,
    heads: int,
    seq_len: int,
    grid: int,
    sep_positions: tuple[int, int] | None = None,
) -> AttentionDump:
    """Deterministic synthetic dump for tests and demos.

    Generator algorithm (fixed): a PCG64 generator seeded with `seed` draws,
    in order, cross_attn ~ U[0,1), cross_grad ~ N(0,1), self_attn ~ U[0,1),
    self_grad ~ N(0,1), all sampled as float32. Knowledge/question texts are
    synthetic space-separated words, one word per token.
    """
    if heads < 1 or grid < 1:
        raise ValueError("heads and grid must be >= 1")
    if seq_len < 4:
        raise ValueError("seq_len must be >= 4 (CLS, one knowledge token, SEP, SEP)")
    if sep_positions is None:
        # split remaining tokens roughly evenly between knowledge and question
        s0 = max(2, (seq_len - 1) // 2)
        sep_positions = (s0, seq_len - 1)
    s0, s1 = sep_positions
    if not (0 < s0 < s1 < seq_len):
        raise ValueError(f"bad separator positions {sep_positions} for L={seq_len}")
    patches = grid * grid

    rng = np.random.default_rng(seed)
    cross_attn = rng.random((heads, seq_len, patches), dtype=np.float32)
    cross_grad = rng.standard_normal((heads, seq_len, patches), dtype=np.float32)
    self_attn = rng.random((heads, seq_len, seq_len), dtype=np.float32)
    self_grad = rng.standard_normal((heads, seq_len, seq_len), dtype=np.float32)

    n_know = s0 - 1
    n_ques = s1 - s0 - 1
    know_words = [f"kw{j:03d}" for j in range(n_know)]
    knowledge_text = " ".join(know_words)
    question_text = " ".join(f"qw{j:03d}" for j in range(n_ques))

    offsets: list[tuple[int, int]] = [(0, 0)]  # CLS
    pos = 0
    for word in know_words:
        offsets.append((pos, pos + len(word)))
        pos += len(word) + 1
    offsets.append((0, 0))  # first SEP
    offsets.extend((0, 0) for _ in range(n_ques))  # question tokens
    offsets.extend((0, 0) for _ in range(seq_len - s1))  # second SEP + padding

    meta = DumpMeta(
        heads=heads,
        seq_len=seq_len,
        patches=patches,
        grid=grid,
        block=7,
        sep_positions=(s0, s1),
        offset_mapping=tuple(offsets),
        knowledge_text=knowledge_text,
        question_text=question_text,
    )
    dump = AttentionDump(meta, cross_attn, cross_grad, self_attn, self_grad)
    validate_dump(dump)
    return dump
