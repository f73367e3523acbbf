"""Bridge pretrained vision-language encoders to the TFB embedding format."""

from .encoders import EncoderError, HFClipEncoder, ToyEncoder, make_encoder
from .extract import DEFAULT_TEMPLATE, ExtractionJob, assign_split, extract
from .tfb import read_tfb, write_class_names, write_manifest, write_tfb

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_TEMPLATE",
    "EncoderError",
    "ExtractionJob",
    "HFClipEncoder",
    "ToyEncoder",
    "assign_split",
    "extract",
    "make_encoder",
    "read_tfb",
    "write_class_names",
    "write_manifest",
    "write_tfb",
]
