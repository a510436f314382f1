"""Append-only journal of committed mutation batches.

File layout: a 4-byte magic ``DBN1``, then newline-delimited records. Each
record line is ``<decimal payload length> <json payload>``; the length covers
the JSON bytes only, so a truncated tail line is detected and ignored on
replay.
"""

from __future__ import annotations

import json
import os
from typing import Iterator

MAGIC = b"DBN1"


class JournalCorrupt(Exception):
    pass


class Journal:
    def __init__(self, path: str):
        self.path = path
        fresh = not os.path.exists(path) or os.path.getsize(path) == 0
        self._fh = open(path, "ab")
        if fresh:
            self._fh.write(MAGIC + b"\n")
            self._fh.flush()

    def append(self, record: dict) -> None:
        payload = json.dumps(record, sort_keys=True, separators=(",", ":")).encode()
        self._fh.write(b"%d %s\n" % (len(payload), payload))
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()


def read_records(path: str) -> Iterator[dict]:
    with open(path, "rb") as fh:
        header = fh.readline().rstrip(b"\n")
        if header != MAGIC:
            raise JournalCorrupt(f"bad journal magic in {path}")
        for line in fh:
            line = line.rstrip(b"\n")
            if not line:
                continue
            length_s, _, payload = line.partition(b" ")
            try:
                length = int(length_s)
            except ValueError as exc:
                raise JournalCorrupt(f"bad length prefix in {path}") from exc
            if len(payload) != length:
                # torn tail write; everything before it already replayed
                break
            yield json.loads(payload)
