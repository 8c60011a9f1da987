"""On-device vector search: a disk-partitioned graph index with a RAM-resident
centroid layer, plus the retrieval pipeline built on top of it."""

__version__ = "0.1.0"
