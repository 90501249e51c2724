"""Persistent commit cache.

Each repository gets ``<root>/<repo_fingerprint>/log.bin``: an append-only
sequence of frames ``magic | length | crc32 | json payload``. The index
(commit id -> frame offset) lives in memory and is rebuilt by scanning the
log on open. A torn tail left by a crash is truncated away; frames whose
checksum does not match are ignored, so a damaged entry reads as a miss and
never as wrong data.
"""

import json
import logging
import struct
import threading
import zlib
from dataclasses import dataclass
from pathlib import Path

from .repominer import CommitRecord

logger = logging.getLogger(__name__)

MAGIC = b"FFC1"
HEADER = struct.Struct(">4sII")


class StorageFailure(Exception):
    pass


class CorruptEntry(StorageFailure):
    pass


@dataclass(frozen=True)
class CacheKey:
    repo_fingerprint: str
    commit_id: str


def encode(record: CommitRecord) -> bytes:
    payload = json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True).encode("utf-8")
    return HEADER.pack(MAGIC, len(payload), zlib.crc32(payload)) + payload


def decode(frame_payload: bytes, crc: int) -> CommitRecord:
    if zlib.crc32(frame_payload) != crc:
        raise CorruptEntry("checksum mismatch")
    try:
        return CommitRecord.from_dict(json.loads(frame_payload.decode("utf-8")))
    except (ValueError, TypeError, KeyError) as exc:
        raise CorruptEntry(str(exc)) from exc


class _Log:
    def __init__(self, path: Path):
        self.path = path
        self.index: dict[str, tuple[int, int, int]] = {}
        self.lock = threading.Lock()
        path.parent.mkdir(parents=True, exist_ok=True)
        path.touch(exist_ok=True)
        self._scan()

    def _scan(self):
        data = self.path.read_bytes()
        pos = 0
        while pos + HEADER.size <= len(data):
            magic, length, crc = HEADER.unpack_from(data, pos)
            end = pos + HEADER.size + length
            if magic != MAGIC or end > len(data):
                # resync on the next frame marker; nothing after it means a torn tail
                nxt = data.find(MAGIC, pos + 1)
                if nxt == -1:
                    break
                logger.warning("%s: skipping unreadable bytes at offset %d", self.path, pos)
                pos = nxt
                continue
            payload = data[pos + HEADER.size:end]
            try:
                record = decode(payload, crc)
            except CorruptEntry as exc:
                logger.warning("%s: skipping damaged entry at offset %d (%s)", self.path, pos, exc)
            else:
                self.index[record.id] = (pos + HEADER.size, length, crc)
            pos = end
        if pos < len(data):
            logger.warning("%s: truncating %d trailing bytes", self.path, len(data) - pos)
            with open(self.path, "r+b") as fh:
                fh.truncate(pos)

    def append(self, record: CommitRecord):
        frame = encode(record)
        with self.lock, open(self.path, "ab") as fh:
            start = fh.tell()
            fh.write(frame)
            fh.flush()
            _, length, crc = HEADER.unpack_from(frame)
            self.index[record.id] = (start + HEADER.size, length, crc)

    def read(self, commit_id: str):
        entry = self.index.get(commit_id)
        if entry is None:
            return None
        offset, length, crc = entry
        with open(self.path, "rb") as fh:
            fh.seek(offset)
            payload = fh.read(length)
        return decode(payload, crc)


class CommitStore:
    """Cache of :class:`CommitRecord` values keyed by repository and commit id."""

    def __init__(self, root):
        self.root = Path(root)
        self._logs: dict[str, _Log] = {}
        self.hits = 0
        self.misses = 0

    def _log(self, fingerprint: str) -> _Log:
        log = self._logs.get(fingerprint)
        if log is None:
            try:
                log = _Log(self.root / fingerprint / "log.bin")
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
            self._logs[fingerprint] = log
        return log

    def _read(self, key: CacheKey):
        try:
            return self._log(key.repo_fingerprint).read(key.commit_id)
        except CorruptEntry as exc:
            logger.warning("corrupt cache entry for %s: %s", key.commit_id, exc)
            return None
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc

    def put(self, key: CacheKey, record: CommitRecord) -> None:
        if record.id != key.commit_id:
            raise ValueError(f"record id {record.id} does not match key {key.commit_id}")
        if self._read(key) == record:
            return
        try:
            self._log(key.repo_fingerprint).append(record)
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc

    def get(self, key: CacheKey):
        record = self._read(key)
        if record is None:
            self.misses += 1
        else:
            self.hits += 1
        return record

    def contains(self, key: CacheKey) -> bool:
        return self._read(key) is not None

    def __len__(self):
        if self.root.is_dir():
            for log_file in self.root.glob("*/log.bin"):
                self._log(log_file.parent.name)
        return sum(len(log.index) for log in self._logs.values())
