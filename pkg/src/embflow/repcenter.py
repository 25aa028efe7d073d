"""Versioned, quantizable, two-tier keyed embedding store.

The memory tier is a 4-slot-bucket cuckoo hash (lookups touch at most two
buckets); the disk tier holds sorted segment files for keys demoted by
long-tail pruning. Writers stage records and publish them atomically with
flush(); readers always see a complete, flushed state. Snapshot plus delta
replay reconstructs the exact table state, bit for bit.

Concurrency: many readers, one writer. A single lock guards tier mutation
and reads; ingestion staging never blocks on readers.
"""

from __future__ import annotations

import hashlib
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from queue import Empty, Full, Queue
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (ConfigError, ContractViolation, SnapshotIntegrityError,
                     StaleDeltaError)
from .numerics import Embedding, _round_half_away

SNAPSHOT_MAGIC = b"MOONEMB1"
DELTA_MAGIC = b"MOONDLT1"
SEGMENT_MAGIC = b"MOONSEG1"

DTYPE_F32 = "f32"
DTYPE_I8 = "i8"
_DTYPE_CODES = {DTYPE_F32: 0, DTYPE_I8: 1}
_DTYPE_NAMES = {v: k for k, v in _DTYPE_CODES.items()}

_MASK64 = (1 << 64) - 1


def _mix64(key: int, salt: int) -> int:
    """splitmix64 finalizer; deterministic across processes."""
    z = (key + salt) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def shard_for_key(key: int, shard_count: int) -> int:
    """Pure key -> shard routing rule: hash then modulo."""
    if shard_count < 1:
        raise ConfigError("shard_count must be >= 1")
    return _mix64(key, 0x5A17) % shard_count


class CuckooIndex:
    """Cuckoo hash map with two hash functions and 4-slot buckets.

    insert() either succeeds or gives up after `max_kicks` displacements and
    returns the homeless entry as a resize signal; no key is ever dropped.
    Lookups probe at most two buckets.
    """

    SLOTS_PER_BUCKET = 4
    MAX_KICKS = 500

    def __init__(self, n_buckets: int = 8, salt1: int = 0x9E3779B9, salt2: int = 0xC2B2AE35):
        if n_buckets < 1 or n_buckets & (n_buckets - 1):
            raise ConfigError("n_buckets must be a positive power of two")
        self.n_buckets = n_buckets
        self._salt1 = salt1
        self._salt2 = salt2
        self._buckets: list[list[list]] = [[] for _ in range(n_buckets)]
        self.count = 0
        self._kick_state = 0x853C49E6748FEA9B
        # lookup instrumentation
        self.lookups = 0
        self.buckets_probed = 0
        self.max_probes_single_lookup = 0

    def _bucket_pair(self, key: int) -> tuple[int, int]:
        mask = self.n_buckets - 1
        return _mix64(key, self._salt1) & mask, _mix64(key, self._salt2) & mask

    @property
    def occupancy(self) -> float:
        return self.count / (self.n_buckets * self.SLOTS_PER_BUCKET)

    def get(self, key: int):
        """Return the stored value or None; probes at most 2 buckets."""
        b1, b2 = self._bucket_pair(key)
        self.lookups += 1
        probes = 1
        for slot in self._buckets[b1]:
            if slot[0] == key:
                self.buckets_probed += probes
                self.max_probes_single_lookup = max(self.max_probes_single_lookup, probes)
                return slot[1]
        if b2 != b1:
            probes = 2
            for slot in self._buckets[b2]:
                if slot[0] == key:
                    self.buckets_probed += probes
                    self.max_probes_single_lookup = max(self.max_probes_single_lookup, probes)
                    return slot[1]
        self.buckets_probed += probes
        self.max_probes_single_lookup = max(self.max_probes_single_lookup, probes)
        return None

    def contains(self, key: int) -> bool:
        return self.get(key) is not None

    def insert(self, key: int, value) -> tuple[int, object] | None:
        """Insert or replace. Returns None on success, or the displaced
        (key, value) entry after max_kicks as the resize signal."""
        b1, b2 = self._bucket_pair(key)
        for b in {b1, b2}:
            for slot in self._buckets[b]:
                if slot[0] == key:
                    slot[1] = value
                    return None
        for b in (b1, b2):
            if len(self._buckets[b]) < self.SLOTS_PER_BUCKET:
                self._buckets[b].append([key, value])
                self.count += 1
                return None
        entry = [key, value]
        bucket = b1
        for _ in range(self.MAX_KICKS):
            # deterministic victim choice from an LCG stream
            self._kick_state = (self._kick_state * 6364136223846793005 + 1442695040888963407) & _MASK64
            victim_idx = self._kick_state % self.SLOTS_PER_BUCKET
            victim = self._buckets[bucket][victim_idx]
            self._buckets[bucket][victim_idx] = entry
            entry = victim
            vb1, vb2 = self._bucket_pair(entry[0])
            bucket = vb2 if bucket == vb1 else vb1
            if len(self._buckets[bucket]) < self.SLOTS_PER_BUCKET:
                self._buckets[bucket].append(entry)
                self.count += 1
                return None
        # homeless entry is handed back so the caller can resize and retry
        return entry[0], entry[1]

    def remove(self, key: int) -> bool:
        b1, b2 = self._bucket_pair(key)
        for b in {b1, b2}:
            bucket = self._buckets[b]
            for i, slot in enumerate(bucket):
                if slot[0] == key:
                    bucket.pop(i)
                    self.count -= 1
                    return True
        return False

    def items(self) -> Iterator[tuple[int, object]]:
        for bucket in self._buckets:
            for key, value in bucket:
                yield key, value

    def grown(self, extra: Sequence[tuple[int, object]] = ()) -> "CuckooIndex":
        """Double the bucket array and reinsert everything (plus `extra`),
        growing again if the rebuild itself overflows."""
        items = list(self.items()) + list(extra)
        n_buckets = self.n_buckets * 2
        while True:
            fresh = CuckooIndex(n_buckets, self._salt1, self._salt2)
            pending = None
            for key, value in items:
                pending = fresh.insert(key, value)
                if pending is not None:
                    break
            if pending is None:
                return fresh
            n_buckets *= 2


# ---------------------------------------------------------------------------
# payload codecs

@dataclass(frozen=True)
class StoredRecord:
    record_version: int
    payload: tuple  # ("f32", f32-array) or ("i8", scale_f32, int8-codes)


def _encode_payload(values: np.ndarray, dim: int, dtype: str) -> tuple:
    vals = np.asarray(values, dtype=np.float64)
    if vals.shape != (dim,):
        raise ContractViolation(f"expected dim {dim}, got shape {vals.shape}")
    if not np.all(np.isfinite(vals)):
        raise ContractViolation("non-finite embedding")
    if dtype == DTYPE_F32:
        return (DTYPE_F32, vals.astype("<f4"))
    peak = float(np.max(np.abs(vals))) if dim else 0.0
    if peak == 0.0:
        scale = np.float32(1.0)
        codes = np.zeros(dim, dtype=np.int8)
    else:
        # quantize against the storage-width scale so the error bound is
        # exactly scale/2 on what get() returns
        scale = np.float32(peak / 127.0)
        codes = np.clip(_round_half_away(vals / float(scale)), -127, 127).astype(np.int8)
    return (DTYPE_I8, scale, codes)


def _decode_payload(payload: tuple) -> np.ndarray:
    if payload[0] == DTYPE_F32:
        return payload[1].astype(np.float64)
    _, scale, codes = payload
    return codes.astype(np.float64) * float(scale)


def _payload_bytes(payload: tuple) -> bytes:
    if payload[0] == DTYPE_F32:
        return np.ascontiguousarray(payload[1], dtype="<f4").tobytes()
    _, scale, codes = payload
    return struct.pack("<f", float(scale)) + codes.astype("<i1").tobytes()


def _payload_size(dim: int, dtype: str) -> int:
    return 4 * dim if dtype == DTYPE_F32 else 4 + dim


def _payload_from_bytes(raw: bytes, dim: int, dtype: str) -> tuple:
    if dtype == DTYPE_F32:
        return (DTYPE_F32, np.frombuffer(raw, dtype="<f4", count=dim).copy())
    scale = np.float32(struct.unpack_from("<f", raw, 0)[0])
    codes = np.frombuffer(raw, dtype="<i1", count=dim, offset=4).copy()
    return (DTYPE_I8, scale, codes)


# ---------------------------------------------------------------------------
# delta logs

@dataclass
class DeltaLog:
    """Ordered upsert/delete operations on top of one base table version."""

    base_version: int
    dim: int
    dtype: str
    ops: list[tuple] = field(default_factory=list)  # ("upsert", key, rv, payload) | ("delete", key, rv)

    def record_upsert(self, key: int, record_version: int, values: np.ndarray) -> None:
        self.ops.append(("upsert", key, record_version, _encode_payload(values, self.dim, self.dtype)))

    def record_delete(self, key: int, record_version: int) -> None:
        self.ops.append(("delete", key, record_version))

    def save(self, path: str | Path) -> None:
        chunks = [DELTA_MAGIC, struct.pack("<Q", self.base_version)]
        for op in self.ops:
            if op[0] == "upsert":
                _, key, rv, payload = op
                chunks.append(struct.pack("<BQQ", 0, key, rv))
                chunks.append(_payload_bytes(payload))
            else:
                _, key, rv = op
                chunks.append(struct.pack("<BQQ", 1, key, rv))
        Path(path).write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path: str | Path, dim: int, dtype: str) -> "DeltaLog":
        raw = Path(path).read_bytes()
        if len(raw) < 16 or raw[:8] != DELTA_MAGIC:
            raise SnapshotIntegrityError(f"{path}: not a delta file")
        base_version = struct.unpack_from("<Q", raw, 8)[0]
        log = cls(base_version=base_version, dim=dim, dtype=dtype)
        offset = 16
        psize = _payload_size(dim, dtype)
        while offset < len(raw):
            if offset + 17 > len(raw):
                raise SnapshotIntegrityError(f"{path}: truncated op header")
            opcode, key, rv = struct.unpack_from("<BQQ", raw, offset)
            offset += 17
            if opcode == 0:
                if offset + psize > len(raw):
                    raise SnapshotIntegrityError(f"{path}: truncated payload")
                payload = _payload_from_bytes(raw[offset:offset + psize], dim, dtype)
                offset += psize
                log.ops.append(("upsert", key, rv, payload))
            elif opcode == 1:
                log.ops.append(("delete", key, rv))
            else:
                raise SnapshotIntegrityError(f"{path}: unknown opcode {opcode}")
        return log


# ---------------------------------------------------------------------------
# the table

class VersionedTable:
    """Keyed embedding store with staged writes and atomic flush publication."""

    def __init__(self, dim: int, dtype: str = DTYPE_F32, disk_dir: str | Path | None = None,
                 shard_count: int = 1):
        if dtype not in _DTYPE_CODES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPE_CODES)}")
        if dim < 1:
            raise ConfigError("dim must be positive")
        self.dim = dim
        self.dtype = dtype
        self.shard_count = shard_count
        self.table_version = 0
        self._record_counter = 0
        self._memory = CuckooIndex()
        self._disk_dir = Path(disk_dir) if disk_dir is not None else None
        self._disk_index: dict[int, tuple[Path, int, int]] = {}  # key -> (segment, offset, rv)
        self._segment_seq = 0
        self._staged: list[tuple] = []
        self._lock = threading.Lock()
        self.stats = {"memory_hits": 0, "disk_hits": 0, "misses": 0}

    # -- write path ---------------------------------------------------------

    def upsert(self, key: int, values: Embedding | np.ndarray) -> int:
        """Stage a write; it becomes readable once flush() publishes it."""
        vals = values.values if isinstance(values, Embedding) else np.asarray(values, np.float64)
        payload = _encode_payload(vals, self.dim, self.dtype)
        with self._lock:
            self._record_counter += 1
            rv = self._record_counter
            self._staged.append(("upsert", key, rv, payload))
        return rv

    def delete(self, key: int) -> int:
        with self._lock:
            self._record_counter += 1
            rv = self._record_counter
            self._staged.append(("delete", key, rv))
        return rv

    def pending_as_delta(self) -> DeltaLog:
        """Snapshot the staged-but-unflushed ops as a replayable delta."""
        with self._lock:
            log = DeltaLog(base_version=self.table_version, dim=self.dim, dtype=self.dtype,
                           ops=list(self._staged))
        return log

    def flush(self) -> int:
        """Publish staged records atomically; bumps the table version when
        anything was staged. Returns the (possibly new) table version."""
        with self._lock:
            if not self._staged:
                return self.table_version
            self._apply_ops_locked(self._staged)
            self._staged = []
            self.table_version += 1
            return self.table_version

    def _apply_ops_locked(self, ops: Iterable[tuple]) -> None:
        for op in ops:
            if op[0] == "upsert":
                _, key, rv, payload = op
                self._disk_index.pop(key, None)
                self._mem_insert_locked(key, StoredRecord(record_version=rv, payload=payload))
            else:
                _, key, _rv = op
                self._memory.remove(key)
                self._disk_index.pop(key, None)

    def _mem_insert_locked(self, key: int, record: StoredRecord) -> None:
        homeless = self._memory.insert(key, record)
        if homeless is not None:
            self._memory = self._memory.grown(extra=[homeless])

    # -- read path -----------------------------------------------------------

    def get(self, key: int) -> Embedding | None:
        """Memory tier first (at most two cuckoo buckets), then disk; absent
        keys return None, never an error."""
        with self._lock:
            record = self._memory.get(key)
            if record is not None:
                self.stats["memory_hits"] += 1
                return Embedding(dim=self.dim, values=_decode_payload(record.payload))
            loc = self._disk_index.get(key)
            if loc is not None:
                self.stats["disk_hits"] += 1
                payload = self._read_disk_payload(loc)
                return Embedding(dim=self.dim, values=_decode_payload(payload))
            self.stats["misses"] += 1
            return None

    def get_record_version(self, key: int) -> int | None:
        with self._lock:
            record = self._memory.get(key)
            if record is not None:
                return record.record_version
            loc = self._disk_index.get(key)
            return loc[2] if loc is not None else None

    def _read_disk_payload(self, loc: tuple[Path, int, int]) -> tuple:
        path, offset, _rv = loc
        psize = _payload_size(self.dim, self.dtype)
        with open(path, "rb") as fh:
            fh.seek(offset)
            raw = fh.read(psize)
        if len(raw) != psize:
            raise SnapshotIntegrityError(f"{path}: truncated segment payload")
        return _payload_from_bytes(raw, self.dim, self.dtype)

    def scan(self) -> list[tuple[int, int, tuple]]:
        """All (key, record_version, payload) across both tiers, sorted by key."""
        with self._lock:
            rows = [(key, rec.record_version, rec.payload) for key, rec in self._memory.items()]
            for key, loc in self._disk_index.items():
                rows.append((key, loc[2], self._read_disk_payload(loc)))
        rows.sort(key=lambda r: r[0])
        return rows

    def __len__(self) -> int:
        with self._lock:
            return self._memory.count + len(self._disk_index)

    def memory_key_count(self) -> int:
        with self._lock:
            return self._memory.count

    def state_hash(self) -> str:
        """Order-independent digest of the full logical state (tier-agnostic)."""
        h = hashlib.sha256()
        h.update(struct.pack("<IIB", self.table_version, self.dim, _DTYPE_CODES[self.dtype]))
        for key, rv, payload in self.scan():
            h.update(struct.pack("<QQ", key, rv))
            h.update(_payload_bytes(payload))
        return h.hexdigest()

    # -- persistence ----------------------------------------------------------

    def snapshot(self, path: str | Path) -> None:
        """Write the full flushed state; refuses if writes are still staged."""
        with self._lock:
            if self._staged:
                raise ContractViolation("flush before snapshotting")
        rows = self.scan()
        chunks = [SNAPSHOT_MAGIC,
                  struct.pack("<IIBQ", self.table_version, self.dim,
                              _DTYPE_CODES[self.dtype], len(rows))]
        for key, rv, payload in rows:
            chunks.append(struct.pack("<QQ", key, rv))
            chunks.append(_payload_bytes(payload))
        Path(path).write_bytes(b"".join(chunks))

    @classmethod
    def load_snapshot(cls, path: str | Path, disk_dir: str | Path | None = None) -> "VersionedTable":
        raw = Path(path).read_bytes()
        header_size = 8 + 17
        if len(raw) < header_size or raw[:8] != SNAPSHOT_MAGIC:
            raise SnapshotIntegrityError(f"{path}: not a table snapshot")
        table_version, dim, dtype_code, count = struct.unpack_from("<IIBQ", raw, 8)
        if dtype_code not in _DTYPE_NAMES:
            raise SnapshotIntegrityError(f"{path}: unknown dtype code {dtype_code}")
        dtype = _DTYPE_NAMES[dtype_code]
        psize = _payload_size(dim, dtype)
        expect = header_size + count * (16 + psize)
        if len(raw) != expect:
            raise SnapshotIntegrityError(f"{path}: expected {expect} bytes, found {len(raw)}")
        table = cls(dim=dim, dtype=dtype, disk_dir=disk_dir)
        table.table_version = table_version
        offset = header_size
        max_rv = 0
        for _ in range(count):
            key, rv = struct.unpack_from("<QQ", raw, offset)
            offset += 16
            payload = _payload_from_bytes(raw[offset:offset + psize], dim, dtype)
            offset += psize
            table._mem_insert_locked(key, StoredRecord(record_version=rv, payload=payload))
            max_rv = max(max_rv, rv)
        table._record_counter = max_rv
        return table

    def apply_delta(self, delta: DeltaLog) -> int:
        """Replay a delta recorded against exactly this table version."""
        if delta.base_version != self.table_version:
            raise StaleDeltaError(
                f"delta base {delta.base_version} != table version {self.table_version}; "
                "load a newer snapshot first")
        if delta.dim != self.dim or delta.dtype != self.dtype:
            raise ContractViolation("delta dim/dtype does not match the table")
        with self._lock:
            if self._staged:
                raise ContractViolation("flush staged writes before applying a delta")
            self._apply_ops_locked(delta.ops)
            for op in delta.ops:
                self._record_counter = max(self._record_counter, op[2])
            self.table_version += 1
            return self.table_version

    # -- tiering ---------------------------------------------------------------

    def prune_long_tail(self, min_frequency: float, frequencies: Mapping[int, float]) -> int:
        """Demote keys with frequency < min_frequency from memory to a new
        disk segment (values stay retrievable). Returns the demoted count."""
        with self._lock:
            victims = [(key, rec) for key, rec in self._memory.items()
                       if frequencies.get(key, 0) < min_frequency]
            if not victims:
                return 0
            if self._disk_dir is None:
                raise ConfigError("long-tail pruning needs a disk_dir for the demoted tier")
            self._disk_dir.mkdir(parents=True, exist_ok=True)
            victims.sort(key=lambda kv: kv[0])
            self._segment_seq += 1
            seg_path = self._disk_dir / f"segment_{self._segment_seq:06d}.bin"
            chunks = [SEGMENT_MAGIC, struct.pack("<IBQ", self.dim, _DTYPE_CODES[self.dtype],
                                                 len(victims))]
            offset = 8 + 13
            locations = []
            for key, rec in victims:
                chunks.append(struct.pack("<QQ", key, rec.record_version))
                offset += 16
                locations.append((key, offset, rec.record_version))
                body = _payload_bytes(rec.payload)
                chunks.append(body)
                offset += len(body)
            seg_path.write_bytes(b"".join(chunks))
            for key, off, rv in locations:
                self._memory.remove(key)
                self._disk_index[key] = (seg_path, off, rv)
            return len(victims)


# ---------------------------------------------------------------------------
# seconds-level real-time ingestion

@dataclass
class IngestMetrics:
    accepted: int = 0
    rejected: int = 0
    flushes: int = 0
    latencies: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        lat = sorted(self.latencies)

        def pct(p: float) -> float:
            if not lat:
                return 0.0
            return lat[min(len(lat) - 1, int(p * len(lat)))]

        return {"accepted": self.accepted, "rejected": self.rejected,
                "flushes": self.flushes, "visible": len(lat),
                "p50_s": pct(0.50), "p95_s": pct(0.95),
                "max_s": lat[-1] if lat else 0.0}


class RealtimeIngestor:
    """Background ingest worker: accepted records become readable within one
    flush interval; a full accept queue signals backpressure (offer -> False)
    instead of dropping anything."""

    def __init__(self, table: VersionedTable, flush_interval: float, capacity: int = 1024):
        if flush_interval <= 0:
            raise ConfigError("flush_interval must be positive")
        if capacity < 1:
            raise ConfigError("capacity must be >= 1")
        self.table = table
        self.flush_interval = flush_interval
        self.metrics = IngestMetrics()
        self._queue: Queue = Queue(maxsize=capacity)
        self._stop = threading.Event()
        self._unflushed: deque = deque()
        self._thread = threading.Thread(target=self._run, name="ingest-worker", daemon=True)
        self._thread.start()

    def offer(self, key: int, values: np.ndarray) -> bool:
        """Hand a record to the ingester; False = backpressure, try again."""
        try:
            self._queue.put_nowait((key, np.asarray(values, dtype=np.float64), time.monotonic()))
        except Full:
            self.metrics.rejected += 1
            return False
        return True

    def _drain(self) -> None:
        while True:
            try:
                key, values, accepted_at = self._queue.get_nowait()
            except Empty:
                return
            self.table.upsert(key, values)
            self._unflushed.append(accepted_at)
            self.metrics.accepted += 1

    def _flush(self) -> None:
        self.table.flush()
        now = time.monotonic()
        while self._unflushed:
            self.metrics.latencies.append(now - self._unflushed.popleft())
        self.metrics.flushes += 1

    def _run(self) -> None:
        next_flush = time.monotonic() + self.flush_interval
        poll = min(0.005, self.flush_interval / 20)
        while True:
            self._drain()
            now = time.monotonic()
            if now >= next_flush:
                self._flush()
                next_flush = now + self.flush_interval
            if self._stop.is_set() and self._queue.empty():
                break
            time.sleep(poll)
        self._drain()
        self._flush()

    def close(self) -> IngestMetrics:
        """Stop the worker after draining and flushing everything accepted."""
        self._stop.set()
        self._thread.join()
        return self.metrics


# ---------------------------------------------------------------------------
# shard routing over independent tables

class ShardedStore:
    """Thin router over `shard_count` independent tables."""

    def __init__(self, dim: int, dtype: str = DTYPE_F32, shard_count: int = 1,
                 disk_dir: str | Path | None = None):
        base = Path(disk_dir) if disk_dir is not None else None
        self.shard_count = shard_count
        self.tables = [VersionedTable(dim=dim, dtype=dtype, shard_count=shard_count,
                                      disk_dir=None if base is None else base / f"shard_{i:03d}")
                       for i in range(shard_count)]

    def table_for(self, key: int) -> VersionedTable:
        return self.tables[shard_for_key(key, self.shard_count)]

    def upsert(self, key: int, values) -> int:
        return self.table_for(key).upsert(key, values)

    def get(self, key: int) -> Embedding | None:
        return self.table_for(key).get(key)

    def flush(self) -> None:
        for t in self.tables:
            t.flush()


def bench_cuckoo(n_ops: int, seed: int = 0) -> dict:
    """Insert + lookup benchmark for the memory tier; returns throughput and
    lookup latency percentiles."""
    rng = np.random.default_rng(seed)
    keys = rng.integers(0, 1 << 62, size=n_ops, dtype=np.int64).tolist()
    index = CuckooIndex(n_buckets=8)
    t0 = time.perf_counter()
    for k in keys:
        homeless = index.insert(int(k), int(k))
        if homeless is not None:
            index = index.grown(extra=[homeless])
    insert_s = time.perf_counter() - t0
    latencies = []
    t0 = time.perf_counter()
    for k in keys:
        s = time.perf_counter_ns()
        index.get(int(k))
        latencies.append(time.perf_counter_ns() - s)
    lookup_s = time.perf_counter() - t0
    latencies.sort()
    return {
        "ops": n_ops,
        "insert_ops_per_s": n_ops / insert_s if insert_s > 0 else float("inf"),
        "lookup_ops_per_s": n_ops / lookup_s if lookup_s > 0 else float("inf"),
        "p50_lookup_ns": latencies[len(latencies) // 2],
        "p99_lookup_ns": latencies[min(len(latencies) - 1, int(0.99 * len(latencies)))],
        "max_probes_per_lookup": index.max_probes_single_lookup,
        "occupancy": index.occupancy,
    }
