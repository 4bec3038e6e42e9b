"""Mask-and-Select engine for knowledge-based VQA."""

from .container import (
    AttentionDump,
    DumpMeta,
    SequenceLayout,
    layout_of,
    read_dump,
    read_dump_file,
    synth_dump,
    validate_dump,
    write_dump,
    write_dump_file,
)
from .mask import PatchMask, build_mask
from .phrases import KeywordSet, select_phrases
from .pipeline import PipelineConfig, run_dataset

__all__ = [
    "AttentionDump",
    "DumpMeta",
    "SequenceLayout",
    "layout_of",
    "read_dump",
    "read_dump_file",
    "synth_dump",
    "validate_dump",
    "write_dump",
    "write_dump_file",
    "PatchMask",
    "build_mask",
    "KeywordSet",
    "select_phrases",
    "PipelineConfig",
    "run_dataset",
]

__version__ = "0.1.0"
