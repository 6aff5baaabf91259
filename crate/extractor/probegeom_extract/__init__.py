"""Thin client that turns causal language models into probegeom dumps."""

from .formats import (
    DumpRecord,
    ValidationError,
    read_bundle,
    write_baselines,
    write_dump,
    write_outcome,
)
from .paraphrase import TEMPLATES, paraphrase_rows

__all__ = [
    "DumpRecord",
    "ValidationError",
    "TEMPLATES",
    "paraphrase_rows",
    "read_bundle",
    "write_baselines",
    "write_dump",
    "write_outcome",
]
