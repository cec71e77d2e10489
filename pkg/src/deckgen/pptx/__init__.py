"""In-memory PPTX deck model with clone-and-patch serialization.

Untouched archive entries round-trip byte-identically; only slide parts
actually mutated are reserialized.
"""

from deckgen.pptx.model import (
    Element,
    ElementKind,
    MediaEntry,
    Paragraph,
    Presentation,
    Slide,
    Span,
    UnknownSlide,
    structural_equal,
)
from deckgen.pptx.package import (
    MalformedXml,
    MissingPresentationPart,
    NotAZip,
    SerializationFailure,
    load_presentation,
    save_presentation,
)

__all__ = [
    "Element",
    "ElementKind",
    "MalformedXml",
    "MediaEntry",
    "MissingPresentationPart",
    "NotAZip",
    "Paragraph",
    "Presentation",
    "SerializationFailure",
    "Slide",
    "Span",
    "UnknownSlide",
    "load_presentation",
    "save_presentation",
    "structural_equal",
]
