"""In-simulation content-addressed blob store.

Stands in for the off-chain storage layer that holds datasets, model weights
and proof packages. Blobs are keyed by their SHA-256 digest; transfer latency
is modeled separately by the simulator's stage latencies, not here.
"""

from __future__ import annotations

from .hashing import sha256


class MissingBlobError(KeyError):
    """Requested blob is not present in the store."""


class ContentStore:
    def __init__(self):
        self._blobs: dict[bytes, bytes] = {}

    def put(self, data: bytes) -> bytes:
        key = sha256(data)
        self._blobs[key] = data
        return key

    def get(self, key: bytes) -> bytes:
        try:
            return self._blobs[key]
        except KeyError:
            raise MissingBlobError(key.hex()) from None

    def __contains__(self, key: bytes) -> bool:
        return key in self._blobs

    def __len__(self) -> int:
        return len(self._blobs)
