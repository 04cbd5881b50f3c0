"""Cycle-approximate shared memory subsystem.

One backing store behind an optional set-associative LRU cache.  Requests
are accepted while fewer than ``max_outstanding`` are in flight; each port
returns at most one completed request per cycle.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, fields

from .ir import MemSpace

CACHED = "cached"
UNCACHED_BURST = "uncached-burst"

# Named latency presets for the two SoC memory ports.  Only their relative
# ordering carries meaning: the HP path bypasses the processor cache.
PRESETS = {
    "acp": {"hit_latency": 2, "miss_latency": 80},
    "hp": {"hit_latency": 2, "miss_latency": 112, "cache_enabled": False},
}


@dataclass
class MemConfig:
    hit_latency: int = 2
    miss_latency: int = 80
    line_size: int = 64
    cache_capacity: int = 64 * 1024
    associativity: int = 2
    max_outstanding: int = 8
    burst_max: int = 16
    cache_enabled: bool = True
    burst_prefetch: int = 4
    policies: dict = field(default_factory=dict)

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        if self.hit_latency < 0 or self.miss_latency < 0:
            raise ValueError("latencies must be >= 0")
        if self.line_size < 1 or self.associativity < 1:
            raise ValueError("line_size and associativity must be >= 1")
        if self.cache_capacity <= 0 or self.cache_capacity % (self.line_size * self.associativity):
            raise ValueError("cache_capacity must be a positive multiple of line_size * associativity")
        if self.max_outstanding < 1:
            raise ValueError("max_outstanding must be >= 1")
        if self.burst_max < 1:
            raise ValueError("burst_max must be >= 1")
        if self.burst_prefetch < 1:
            raise ValueError("burst_prefetch must be >= 1")
        for space, pol in self.policies.items():
            if pol not in (CACHED, UNCACHED_BURST):
                raise ValueError(f"unknown policy {pol!r} for space {space}")

    @classmethod
    def preset(cls, name: str, **overrides) -> "MemConfig":
        values = dict(PRESETS[name])
        values.update(overrides)
        return cls(**values)

    def policy(self, space: MemSpace) -> str:
        if space.name in self.policies:
            return self.policies[space.name]
        return UNCACHED_BURST if "stream" in space.annotations else CACHED

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def sets(self) -> int:
        return self.cache_capacity // (self.line_size * self.associativity)


@dataclass(slots=True)
class MemRequest:
    id: int
    space: str
    start: int
    length: int
    kind: str  # "R" or "W"
    issue_cycle: int = -1
    port: object = None
    cached: bool = True
    completion: int = -1
    hit: bool | None = None


def coalesce(trace, burst_max: int) -> list[MemRequest]:
    """Fold maximal runs of consecutive same-space, same-kind addresses into bursts.

    ``trace`` holds ``(space, address, kind)`` tuples from a single port.
    """
    out: list[MemRequest] = []
    cur = None
    for space, addr, kind in trace:
        if (cur is not None and cur.space == space and cur.kind == kind
                and addr == cur.start + cur.length and cur.length < burst_max):
            cur.length += 1
            continue
        cur = MemRequest(len(out), space, addr, 1, kind)
        out.append(cur)
    return out


def coalesce_index(trace, burst_max: int) -> tuple[list[MemRequest], list[int]]:
    """Like :func:`coalesce`, also returning the request index of every access."""
    reqs = coalesce(trace, burst_max)
    owner: list[int] = []
    for r in reqs:
        owner += [r.id] * r.length
    return reqs, owner


class CacheState:
    """Set-associative tags with LRU replacement.  Each set lists line tags, MRU last."""

    def __init__(self, capacity: int, line_size: int, associativity: int):
        self.line_size = line_size
        self.ways = associativity
        self.n_sets = capacity // (line_size * associativity)
        self.sets: list[list[int]] = [[] for _ in range(self.n_sets)]
        self.ready: dict[int, int] = {}

    def set_of(self, line: int) -> list[int]:
        return self.sets[line % self.n_sets]

    def access(self, line: int, now: int, fill_latency: int) -> tuple[bool, int]:
        """Touch ``line``; returns (hit, cycle its data is present)."""
        ways = self.set_of(line)
        if line in ways:
            ways.remove(line)
            ways.append(line)
            return True, self.ready.get(line, now)
        if len(ways) >= self.ways:
            victim = ways.pop(0)
            self.ready.pop(victim, None)
        ways.append(line)
        self.ready[line] = now + fill_latency
        return False, now + fill_latency

    def contains(self, line: int) -> bool:
        return line in self.set_of(line)


class MemorySystem:
    def __init__(self, cfg: MemConfig, spaces):
        self.cfg = cfg
        self.cache = CacheState(cfg.cache_capacity, cfg.line_size, cfg.associativity)
        self.base: dict[str, int] = {}
        self.elem: dict[str, int] = {}
        addr = 0
        for sp in spaces:
            self.base[sp.name] = addr
            self.elem[sp.name] = sp.elem
            addr += sp.extent * sp.elem
            addr = -(-addr // cfg.line_size) * cfg.line_size
        self.in_flight = 0
        self.issued = 0
        self._due: int | None = None  # earliest cycle any port could deliver
        self.delivered: dict[int, int] = {}
        self._ports: dict[object, list] = {}
        self._port_next: dict[object, int] = {}
        self._next_id = 0
        self.hits = 0
        self.misses = 0
        self.uncached = 0
        self.rejected = 0
        self.beats = 0
        self.occupancy: dict[int, int] = {}
        self._occ_since = 0
        self.max_in_flight = 0

    def new_request(self, space: str, start: int, length: int, kind: str, port=None,
                    cached: bool = True) -> MemRequest:
        req = MemRequest(self._next_id, space, start, length, kind, port=port, cached=cached)
        self._next_id += 1
        return req

    def _set_occupancy(self, now: int, value: int) -> None:
        if now > self._occ_since:
            self.occupancy[self.in_flight] = self.occupancy.get(self.in_flight, 0) + now - self._occ_since
            self._occ_since = now
        self.in_flight = value
        if value > self.max_in_flight:
            self.max_in_flight = value

    def issue(self, req: MemRequest, now: int) -> bool:
        out = self.submit(req.space, req.start, req.length, req.port, req.cached, now, req.id)
        if out is None:
            return False
        _, req.completion, req.hit = out
        req.issue_cycle = now
        return True

    def submit(self, space: str, start: int, length: int, port, cached: bool, now: int,
               rid: int | None = None) -> tuple[int, int, bool] | None:
        """Accept a request unless ``max_outstanding`` are in flight.

        Returns ``(id, completion, hit)``, or None on rejection.
        """
        cfg = self.cfg
        if self.in_flight >= cfg.max_outstanding:
            self.rejected += 1
            return None
        if rid is None:
            rid = self._next_id
            self._next_id += 1
        if cached and cfg.cache_enabled:
            elem = self.elem[space]
            first = self.base[space] + start * elem
            line_size = cfg.line_size
            lo, hi = first // line_size, (first + length * elem - 1) // line_size
            if lo == hi:
                hit, ready = self.cache.access(lo, now, cfg.miss_latency)
            else:
                ready, hit = now, True
                for line in range(lo, hi + 1):
                    h, present = self.cache.access(line, now, cfg.miss_latency)
                    hit = hit and h
                    if present > ready:
                        ready = present
            if hit:
                self.hits += 1
                if ready < now + cfg.hit_latency:
                    ready = now + cfg.hit_latency
            else:
                self.misses += 1
            completion = ready + length - 1
        else:
            self.uncached += 1
            hit = False
            completion = now + cfg.miss_latency + length - 1
        self.beats += length
        self.issued += 1
        heap = self._ports.get(port)
        if heap is None:
            heap = self._ports[port] = []
        heapq.heappush(heap, (completion, rid))
        head = heap[0][0]
        nxt = self._port_next.get(port, 0)
        at = head if head > nxt else nxt
        if self._due is None or at < self._due:
            self._due = at
        self._set_occupancy(now, self.in_flight + 1)
        return rid, completion, hit

    def tick(self, now: int) -> list[int]:
        """Deliver requests whose completion cycle has passed, one per port per cycle."""
        if self._due is None or self._due > now:
            return []
        done: list[tuple[int, int]] = []
        due = None
        for port, heap in self._ports.items():
            nxt = self._port_next.get(port, 0)
            while heap:
                comp, rid = heap[0]
                at = comp if comp > nxt else nxt
                if at > now:
                    if due is None or at < due:
                        due = at
                    break
                heapq.heappop(heap)
                done.append((at, rid))
                nxt = at + 1
            self._port_next[port] = nxt
        self._due = due
        if len(done) > 1:
            done.sort()
        for at, rid in done:
            self.delivered[rid] = at
            self._set_occupancy(at, self.in_flight - 1)
        return [rid for _, rid in done]

    def next_event(self) -> int | None:
        """Earliest cycle at which some port can deliver, or None when idle."""
        return self._due

    def finish(self, now: int) -> None:
        self._set_occupancy(now, self.in_flight)

    def stats(self) -> dict:
        lookups = self.hits + self.misses
        return {
            "requests": self.issued,
            "cache_hits": self.hits,
            "cache_misses": self.misses,
            "hit_ratio": round(self.hits / lookups, 6) if lookups else 0.0,
            "uncached_requests": self.uncached,
            "rejected_issues": self.rejected,
            "beats": self.beats,
            "max_in_flight": self.max_in_flight,
            "occupancy_histogram": {str(k): v for k, v in sorted(self.occupancy.items())},
        }
