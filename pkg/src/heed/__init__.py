"""Hypertext-feature webpage entity extraction."""
from .core import (
    FEATURE_CATEGORIES, FEATURE_VOCAB_SIZES, TASKS, EntitySpan, PageRecord,
    RawTokenFeatures, Task, quantize_features, read_records, validate_record, write_records,
)

__version__ = "0.1.0"

__all__ = [
    "FEATURE_CATEGORIES", "FEATURE_VOCAB_SIZES", "TASKS", "EntitySpan", "PageRecord",
    "RawTokenFeatures", "Task", "quantize_features", "read_records", "validate_record",
    "write_records",
]
