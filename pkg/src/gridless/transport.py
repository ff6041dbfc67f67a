"""Transport selection: mesh vs. cellular fallback with hysteresis.

The cellular path is a thin relay-client abstraction: when available, the
node prefers it to offload the LoRa channel; otherwise traffic rides the
mesh. With both paths down, accepted messages queue and drain in order on
the next availability transition.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

DEFAULT_QUEUE_BOUND = 500
DEFAULT_DWELL_S = 5.0
DEFAULT_PROBE_TIMEOUT_S = 2.0


class Path(Enum):
    MESH = "mesh"
    CELLULAR = "cellular"


@dataclass
class TransportStatus:
    mesh_available: bool = True
    cellular_available: bool = False
    active_path: Path = Path.MESH
    last_probe: float = 0.0


def default_policy(status: TransportStatus) -> Path:
    """Prefer cellular when available (offload the LoRa channel), else mesh."""
    return Path.CELLULAR if status.cellular_available else Path.MESH


def select_path(status: TransportStatus, policy: Callable[[TransportStatus], Path] = default_policy) -> Path:
    """Pure path choice; queuing on total outage is the caller's job."""
    choice = policy(status)
    if choice is Path.CELLULAR and not status.cellular_available:
        choice = Path.MESH
    return choice


class ScriptedTimeline:
    """Cellular availability from a script: [(from_s, available), ...]."""

    def __init__(self, segments: list[tuple[float, bool]]):
        self.segments = sorted(segments)

    def __call__(self, now_s: float) -> bool:
        available = False
        for start, state in self.segments:
            if now_s >= start:
                available = state
            else:
                break
        return available


def probe_cellular(
    probe: Callable[[float], bool],
    now_s: float,
    timeout_s: float = DEFAULT_PROBE_TIMEOUT_S,
) -> bool:
    """Run one availability probe; any failure counts as unavailable."""
    try:
        return bool(probe(now_s))
    except Exception:
        return False


def http_probe(url: str, timeout_s: float = DEFAULT_PROBE_TIMEOUT_S) -> Callable[[float], bool]:
    """Reachability probe against a configured relay endpoint."""

    def _probe(_now: float) -> bool:
        import urllib.request

        try:
            with urllib.request.urlopen(url, timeout=timeout_s):
                return True
        except Exception:
            return False

    return _probe


@dataclass
class QueuedMessage:
    payload: bytes
    enqueued_s: float
    attempts: int = 0


@dataclass
class OutboundQueue:
    bound: int = DEFAULT_QUEUE_BOUND
    items: deque = field(default_factory=deque)
    dropped_oldest: int = 0

    def push(self, payload: bytes, now_s: float) -> None:
        if len(self.items) >= self.bound:
            self.items.popleft()
            self.dropped_oldest += 1
        self.items.append(QueuedMessage(payload=payload, enqueued_s=now_s))

    def drain(self) -> list[QueuedMessage]:
        drained = list(self.items)
        self.items.clear()
        return drained

    def __len__(self) -> int:
        return len(self.items)


class TransportSelector:
    """Tracks availability and applies dwell-time hysteresis to path flips."""

    def __init__(
        self,
        probe: Callable[[float], bool],
        mesh_available: bool = True,
        dwell_s: float = DEFAULT_DWELL_S,
        policy: Callable[[TransportStatus], Path] = default_policy,
    ):
        self.probe = probe
        self.dwell_s = dwell_s
        self.policy = policy
        self.status = TransportStatus(mesh_available=mesh_available)
        self.queue = OutboundQueue()
        self._last_switch_s: float | None = None
        self.sent: list[tuple[bytes, Path]] = []

    def refresh(self, now_s: float) -> TransportStatus:
        self.status.cellular_available = probe_cellular(self.probe, now_s)
        self.status.last_probe = now_s
        desired = select_path(self.status, self.policy)
        if desired is not self.status.active_path:
            if self._last_switch_s is None or now_s - self._last_switch_s >= self.dwell_s:
                self.status.active_path = desired
                self._last_switch_s = now_s
        return self.status

    def can_send(self) -> bool:
        if self.status.active_path is Path.CELLULAR:
            return self.status.cellular_available
        return self.status.mesh_available

    def send(self, payload: bytes, now_s: float) -> Path | None:
        """Send on the active path, or queue when nothing is available."""
        self.refresh(now_s)
        if not self.can_send():
            # The active path may have just died inside the dwell window;
            # fall back to whatever is usable rather than dropping.
            fallback = select_path(self.status, self.policy)
            usable = (
                fallback is Path.MESH and self.status.mesh_available
            ) or (fallback is Path.CELLULAR and self.status.cellular_available)
            if not usable:
                self.queue.push(payload, now_s)
                return None
            self.sent.append((payload, fallback))
            return fallback
        for queued in self.queue.drain():
            self.sent.append((queued.payload, self.status.active_path))
        self.sent.append((payload, self.status.active_path))
        return self.status.active_path

    def flush(self, now_s: float) -> int:
        """Drain the queue after an availability transition."""
        self.refresh(now_s)
        if not self.can_send():
            return 0
        drained = self.queue.drain()
        for queued in drained:
            self.sent.append((queued.payload, self.status.active_path))
        return len(drained)
