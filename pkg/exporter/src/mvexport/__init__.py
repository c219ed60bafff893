from .export import ExportError, ExportJob, export, fnv1a64

__version__ = "0.1.0"
