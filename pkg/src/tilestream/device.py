"""Recycled tile-slot pool: the software analog of a fixed set of GPU image
allocations with status flags, reference counts, and generation counters.

Slots move FREE -> PENDING (claimed for a tile) -> ACTIVE (published,
renderable) -> FREE (purged); pixel storage is allocated once at pool
construction and only ever overwritten, never freed or cleared. Because a
renderer may still be sampling a slot when the scheduler recycles it, every
acquisition returns a lease carrying the slot's generation; the renderer must
re-validate the lease after sampling and discard the pixels on a mismatch.
Generations increment exactly once per FREE -> PENDING claim, so a validated
lease proves the sampled bytes belonged to the leased tile for the whole
sampling interval.

All transitions are serialized under one short-held lock; no operation blocks
waiting for another thread's work to complete.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass

import numpy as np

from tilestream.pyramid import TILE_EDGE, TileAddress

TILE_FREE = 0
TILE_PENDING = 1
TILE_ACTIVE = 2

_STATUS_NAMES = {TILE_FREE: "FREE", TILE_PENDING: "PENDING", TILE_ACTIVE: "ACTIVE"}


class SlotContractError(RuntimeError):
    """A status transition was requested out of order (caller bug)."""


@dataclass(frozen=True)
class SlotClaim:
    slot_index: int
    generation: int


@dataclass(frozen=True)
class RenderLease:
    addr: TileAddress
    slot_index: int
    generation: int


class SlotPool:
    """Fixed pool of recycled tile allocations plus the tile -> slot map."""

    def __init__(self, pool_size: int, mip_edges: list[int]):
        if pool_size < 1:
            raise ValueError("pool must hold at least one slot")
        self.pool_size = pool_size
        # pixel storage: one base image and one image per mip level, per slot.
        # Allocated here and never again (recycling overwrites in place).
        self.base = np.zeros((pool_size, TILE_EDGE, TILE_EDGE, 4), np.uint8)
        self.mips = [np.zeros((pool_size, e, e, 4), np.uint8) for e in mip_edges]
        self.storage_allocations = 1 + len(mip_edges)

        self._status = [TILE_FREE] * pool_size
        self._generation = [0] * pool_size
        self._refcount = [0] * pool_size
        self._owner: list[TileAddress | None] = [None] * pool_size
        self._purge_pending = [False] * pool_size
        self._free: deque[int] = deque(range(pool_size))
        self._map: dict[TileAddress, SlotClaim] = {}
        self._lock = threading.Lock()

        self.rejected_claims = 0
        self.recycle_count = 0
        self.stale_releases = 0
        self.validation_failures = 0

    # -- scheduler side ------------------------------------------------

    def claim_free_slot(self, addr: TileAddress) -> SlotClaim | None:
        """Claim a FREE slot for ``addr``; None when the pool is exhausted.

        An already-mapped address is also refused (None) and counted in
        ``rejected_claims``: the caller treats it as already in flight.
        """
        with self._lock:
            if addr in self._map:
                self.rejected_claims += 1
                return None
            if not self._free:
                return None
            idx = self._free.popleft()
            self._generation[idx] += 1
            self._status[idx] = TILE_PENDING
            self._owner[idx] = addr
            self._purge_pending[idx] = False
            claim = SlotClaim(idx, self._generation[idx])
            self._map[addr] = claim
            return claim

    def publish(self, slot_index: int, addr: TileAddress) -> None:
        """PENDING -> ACTIVE: the tile's base image and mips are complete."""
        with self._lock:
            if self._status[slot_index] != TILE_PENDING or self._owner[slot_index] != addr:
                raise SlotContractError(
                    f"publish on slot {slot_index} "
                    f"({_STATUS_NAMES[self._status[slot_index]]}, owner "
                    f"{self._owner[slot_index]}) for {addr}"
                )
            self._status[slot_index] = TILE_ACTIVE

    def abort_claim(self, slot_index: int, addr: TileAddress) -> None:
        """Return a PENDING slot to FREE (its tile vanished before copy)."""
        with self._lock:
            if self._status[slot_index] != TILE_PENDING or self._owner[slot_index] != addr:
                raise SlotContractError(f"abort on slot {slot_index} for {addr}")
            self._map.pop(addr, None)
            self._owner[slot_index] = None
            self._status[slot_index] = TILE_FREE
            self._free.append(slot_index)

    def purge(self, addrs) -> None:
        """Release mapped tiles back to the pool.

        ACTIVE slots with no outstanding lease flip to FREE immediately
        (storage untouched); slots still leased are marked purge-pending and
        freed when the last lease is released. Unmapped addresses are no-ops.
        """
        with self._lock:
            for addr in addrs:
                claim = self._map.get(addr)
                if claim is None:
                    continue
                idx = claim.slot_index
                if self._status[idx] != TILE_ACTIVE:
                    continue  # still buffering; scheduler owns it
                if self._refcount[idx] > 0:
                    self._purge_pending[idx] = True
                else:
                    self._free_slot_locked(idx)

    def _free_slot_locked(self, idx: int) -> None:
        addr = self._owner[idx]
        if addr is not None:
            self._map.pop(addr, None)
        self._owner[idx] = None
        self._purge_pending[idx] = False
        self._status[idx] = TILE_FREE
        self._free.append(idx)
        self.recycle_count += 1

    # -- renderer side -------------------------------------------------

    def acquire_for_render(self, addr: TileAddress) -> RenderLease | None:
        """Lease an ACTIVE tile for sampling; None while unmapped or PENDING."""
        with self._lock:
            claim = self._map.get(addr)
            if claim is None:
                return None
            idx = claim.slot_index
            if self._status[idx] != TILE_ACTIVE:
                return None
            self._refcount[idx] += 1
            return RenderLease(addr, idx, self._generation[idx])

    def validate(self, lease: RenderLease) -> bool:
        """True iff the leased slot still holds the leased tile's pixels."""
        with self._lock:
            idx = lease.slot_index
            ok = (
                self._generation[idx] == lease.generation
                and self._status[idx] == TILE_ACTIVE
                and self._owner[idx] == lease.addr
            )
            if not ok:
                self.validation_failures += 1
            return ok

    def release(self, lease: RenderLease) -> None:
        with self._lock:
            idx = lease.slot_index
            if self._generation[idx] != lease.generation or self._owner[idx] != lease.addr:
                # slot no longer belongs to this lease (force-recycled or
                # reclaimed); its refcount was reset with the recycle
                self.stale_releases += 1
                return
            self._refcount[idx] -= 1
            if self._refcount[idx] == 0 and self._purge_pending[idx]:
                self._free_slot_locked(idx)

    # -- observation ---------------------------------------------------

    def mapped_addresses(self) -> set[TileAddress]:
        with self._lock:
            return set(self._map)

    def is_mapped(self, addr: TileAddress) -> bool:
        with self._lock:
            return addr in self._map

    def occupancy(self) -> dict:
        with self._lock:
            free = sum(1 for s in self._status if s == TILE_FREE)
            pending = sum(1 for s in self._status if s == TILE_PENDING)
            active = sum(1 for s in self._status if s == TILE_ACTIVE)
            return {
                "pool_size": self.pool_size,
                "free": free,
                "pending": pending,
                "active": active,
                "recycles": self.recycle_count,
            }

    def check_consistency(self) -> None:
        """Invariant snapshot for checker threads; raises on violation."""
        with self._lock:
            seen_slots = set()
            for addr, claim in self._map.items():
                idx = claim.slot_index
                assert idx not in seen_slots, "slot mapped to two addresses"
                seen_slots.add(idx)
                assert self._owner[idx] == addr, "map/owner mismatch"
                assert self._status[idx] in (TILE_PENDING, TILE_ACTIVE), \
                    "mapped slot is FREE"
                assert self._generation[idx] == claim.generation, \
                    "map generation stale"
            statuses = [self._status[i] for i in range(self.pool_size)]
            counted = sum(1 for s in statuses if s in (TILE_ACTIVE, TILE_PENDING))
            counted += sum(1 for s in statuses if s == TILE_FREE)
            assert counted == self.pool_size, "slot count not conserved"
            for i in range(self.pool_size):
                assert self._refcount[i] >= 0, "negative refcount"
                if self._status[i] == TILE_FREE:
                    assert self._owner[i] is None, "FREE slot has an owner"

    def refcounts_zero(self) -> bool:
        with self._lock:
            return all(c == 0 for c in self._refcount)

    def generation_of(self, slot_index: int) -> int:
        with self._lock:
            return self._generation[slot_index]

    # -- test/chaos hooks ----------------------------------------------

    def _force_recycle(self, slot_index: int) -> bool:
        """Rip an ACTIVE slot away regardless of leases (fault injection).

        Models a recycle racing an in-flight render: outstanding leases must
        subsequently fail validation.
        """
        with self._lock:
            if self._status[slot_index] != TILE_ACTIVE:
                return False
            self._refcount[slot_index] = 0
            self._free_slot_locked(slot_index)
            return True

    def _slot_state(self, slot_index: int) -> dict:
        with self._lock:
            return {
                "status": self._status[slot_index],
                "generation": self._generation[slot_index],
                "refcount": self._refcount[slot_index],
                "owner": self._owner[slot_index],
                "purge_pending": self._purge_pending[slot_index],
            }
