"""Convert trained U-Net generator checkpoints into UNPR containers.

The engine (``unetprune``) defines the container format and the canonical
tensor conventions; this package maps torch checkpoint files onto them:
parameter renaming, layout conversion (checkpoint concat order to engine
concat order), structural validation, and per-tensor round-trip checking.
"""

from .export import (
    CheckpointReadError,
    RoundtripReport,
    build_store,
    export,
    load_state_dict,
    roundtrip_check,
    to_canonical,
)
from .namemap import (
    ExportError,
    NameMap,
    check_coverage,
    name_map_for,
    pix2pix_name_map,
    wav2lip_name_map,
)
from .reference import ReferencePix2Pix, ReferenceWav2Lip, build_reference, seeded_state_dict

__all__ = [
    "CheckpointReadError",
    "ExportError",
    "NameMap",
    "ReferencePix2Pix",
    "ReferenceWav2Lip",
    "RoundtripReport",
    "build_reference",
    "build_store",
    "check_coverage",
    "export",
    "load_state_dict",
    "name_map_for",
    "pix2pix_name_map",
    "roundtrip_check",
    "seeded_state_dict",
    "to_canonical",
    "wav2lip_name_map",
]

__version__ = "0.1.0"
