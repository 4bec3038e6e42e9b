"""Extraction sidecar: runs a pretrained image-text matching encoder over
(image, passage, question) triples and writes one attention dump per passage
in the masvqa container format."""

from extraction_sidecar.encoder import EncoderError, ItmEncoder
from extraction_sidecar.extract import ExtractionJob, ExtractionResult, extract

__all__ = [
    "EncoderError",
    "ItmEncoder",
    "ExtractionJob",
    "ExtractionResult",
    "extract",
]

__version__ = "0.1.0"
