"""facecurate: self-training curation of identity-labeled embedding corpora
plus a time-budgeted 1:1 verification benchmark harness."""

__version__ = "0.1.0"
