"""Persistence: NIfTI-1 label volumes, POI JSON documents, Slicer markups,
and label dictionaries."""

from ..labels import (
    LabelDictionary,
    default_dictionary,
    read_label_dictionary,
    write_label_dictionary,
)
from .nifti import read_label_volume, write_label_volume, compose_instance_volume
from .poi_json import read_poi_json, write_poi_json, poi_document, truth_document
from .slicer import export_slicer, read_slicer_points

__all__ = [
    "LabelDictionary",
    "default_dictionary",
    "read_label_dictionary",
    "write_label_dictionary",
    "read_label_volume",
    "write_label_volume",
    "compose_instance_volume",
    "read_poi_json",
    "write_poi_json",
    "poi_document",
    "truth_document",
    "export_slicer",
    "read_slicer_points",
]
