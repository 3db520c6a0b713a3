"""embexport: dump per-layer encoder embeddings and prompt prototypes to EMB1."""

from .emb1 import read_emb1, write_emb1
from .export import ExportJob, export_layers, export_prototypes

__all__ = ["ExportJob", "export_layers", "export_prototypes", "read_emb1", "write_emb1"]
__version__ = "0.1.0"
