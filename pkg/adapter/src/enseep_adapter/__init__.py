"""Bridge from user model outputs to the enseep bundle format.

This package talks to the core scoring engine only through its public
file formats (sample-index JSON, label-raster binaries, the bundle
directory) and its command line. It never imports the core.
"""

__version__ = "0.1.0"

from .export import (
    AdapterError,
    ExportJob,
    ExportSource,
    export_bundle,
    read_index_list,
    read_raster,
)
