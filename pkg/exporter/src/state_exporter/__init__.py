"""Hidden-state exporter: run a transformer schema-linking model under
constrained decoding and write linkguard-format trace files with
teacher-forcing branch labels."""

__version__ = "0.1.0"

from .catalog import Catalog, read_catalog_file, write_catalog_file
from .export import ExportJob, UnsupportedModelError, export_traces
from .model import TinyCausalLM

__all__ = [
    "Catalog",
    "ExportJob",
    "TinyCausalLM",
    "UnsupportedModelError",
    "export_traces",
    "read_catalog_file",
    "write_catalog_file",
]
