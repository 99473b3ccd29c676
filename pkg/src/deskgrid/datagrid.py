"""Storage elements and the replica catalogue.

A storage element is a content store of (path, size, checksum) triples
with a hard capacity; the catalogue maps logical file names to the set of
physical copies.  Every replica of a logical file shares one size and one
checksum, registration verifies both against the physical file, and
replication to an element that already holds a copy is an idempotent
no-op.  The `lfn:` URI prefix is accepted everywhere and stripped.
"""
from __future__ import annotations

from dataclasses import dataclass

from .fabric import Network, endpoint
from .infosys import SERecord
from .jdl import strip_lfn_prefix
from .simcore import Kernel


class DataGridError(Exception):
    pass


class SeFull(DataGridError):
    pass


class DuplicatePath(DataGridError):
    pass


class NoSuchPhysicalFile(DataGridError):
    pass


class ChecksumMismatch(DataGridError):
    pass


class UnknownLfn(DataGridError):
    pass


class UnknownSe(DataGridError):
    pass


@dataclass(frozen=True)
class PhysicalFile:
    se_id: str
    path: str
    size_bytes: int
    checksum: int


class StorageElement:
    """Content store behind one published SE record; used_bytes on the
    record is always exactly the sum of stored file sizes."""

    def __init__(self, record: SERecord):
        self.record = record
        self.files: dict[str, PhysicalFile] = {}

    @property
    def se_id(self) -> str:
        return self.record.se_id

    def store(self, path: str, size_bytes: int, checksum: int) -> PhysicalFile:
        if path in self.files:
            raise DuplicatePath(f"{self.se_id} already holds {path}")
        if self.record.used_bytes + size_bytes > self.record.capacity_bytes:
            raise SeFull(f"{self.se_id} cannot take {size_bytes} more bytes")
        pf = PhysicalFile(self.se_id, path, size_bytes, checksum)
        self.files[path] = pf
        self.record.used_bytes += size_bytes
        return pf

    def get(self, path: str) -> "PhysicalFile | None":
        return self.files.get(path)

    def room_for(self, size_bytes: int) -> bool:
        return self.record.used_bytes + size_bytes <= self.record.capacity_bytes


class ReplicaCatalog:
    def __init__(self, catalog_id: str):
        self.catalog_id = catalog_id
        self._replicas: dict[str, set] = {}
        self._meta: dict[str, tuple] = {}  # lfn -> (size, checksum)

    def register(self, lfn: str, store: StorageElement, path: str) -> None:
        lfn = strip_lfn_prefix(lfn)
        pf = store.get(path)
        if pf is None:
            raise NoSuchPhysicalFile(f"{store.se_id}:{path}")
        if lfn in self._meta:
            size, checksum = self._meta[lfn]
            if (pf.size_bytes, pf.checksum) != (size, checksum):
                raise ChecksumMismatch(
                    f"{lfn}: replica at {store.se_id}:{path} disagrees with the catalogue")
        else:
            self._meta[lfn] = (pf.size_bytes, pf.checksum)
        self._replicas.setdefault(lfn, set()).add((store.se_id, path))

    def known(self, lfn: str) -> bool:
        return strip_lfn_prefix(lfn) in self._replicas

    def lookup(self, lfn: str) -> list:
        """All (se_id, path) replicas, sorted; unknown names raise."""
        lfn = strip_lfn_prefix(lfn)
        if lfn not in self._replicas:
            raise UnknownLfn(lfn)
        return sorted(self._replicas[lfn])

    def meta(self, lfn: str) -> tuple:
        lfn = strip_lfn_prefix(lfn)
        if lfn not in self._meta:
            raise UnknownLfn(lfn)
        return self._meta[lfn]

    def lfns(self) -> list:
        return sorted(self._replicas)

    def dump(self) -> str:
        lines = []
        for lfn in sorted(self._replicas):
            size, checksum = self._meta[lfn]
            for se_id, path in sorted(self._replicas[lfn]):
                lines.append(f"{lfn} {se_id} {path} {size} {checksum:016x}")
        return "".join(line + "\n" for line in lines)


class DataGrid:
    """The storage elements plus the one replica catalogue, with enough of
    the fabric wired in to move replicas between elements."""

    def __init__(self, kernel: Kernel, network: Network, catalog_id: str):
        self.kernel = kernel
        self.network = network
        self.rc = ReplicaCatalog(catalog_id)
        self.ses: dict[str, StorageElement] = {}

    def add_se(self, record: SERecord) -> StorageElement:
        store = StorageElement(record)
        self.ses[record.se_id] = store
        return store

    def store_of(self, se_id: str) -> StorageElement:
        store = self.ses.get(se_id)
        if store is None:
            raise UnknownSe(se_id)
        return store

    def register(self, lfn: str, se_id: str, path: str) -> None:
        self.rc.register(lfn, self.store_of(se_id), path)

    def replicate(self, lfn: str, to_se: str):
        """Copy one replica of `lfn` onto `to_se` over the fabric links.

        Returns the scheduled completion event, or None when the target
        already holds a copy.  The source is the first replica in
        (se_id, path) order.  Room is checked up front; the store happens
        at transfer completion and a failure there is traced, not raised."""
        lfn = strip_lfn_prefix(lfn)
        replicas = self.lookup(lfn)
        if any(se_id == to_se for se_id, _path in replicas):
            return None
        target = self.store_of(to_se)
        size, _checksum = self.rc.meta(lfn)
        if not target.room_for(size):
            raise SeFull(f"{to_se} cannot take {lfn} ({size} bytes)")
        src_se, src_path = replicas[0]
        source = self.store_of(src_se)
        frm = endpoint("site", source.record.site_id)
        to = endpoint("site", target.record.site_id)

        def complete():
            pf = source.get(src_path)
            if pf is None:
                self.kernel.emit(self.rc.catalog_id, "replica-failed", lfn=lfn,
                                 to=to_se, reason="NoSuchPhysicalFile")
                return
            try:
                target.store(src_path, pf.size_bytes, pf.checksum)
            except (SeFull, DuplicatePath) as exc:
                self.kernel.emit(self.rc.catalog_id, "replica-failed", lfn=lfn,
                                 to=to_se, reason=type(exc).__name__)
                return
            self.rc.register(lfn, target, src_path)
            self.kernel.emit(self.rc.catalog_id, "replica-added", lfn=lfn,
                             se=to_se, path=src_path)

        return self.network.transfer(size, frm, to, lan_to=True,
                                     what=f"replica:{lfn}", on_done=complete)

    def lookup(self, lfn: str) -> list:
        return self.rc.lookup(lfn)
