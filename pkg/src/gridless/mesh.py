"""Per-node mesh protocol: packet format, managed flooding, dedupe, duty cycle.

Routing is Meshtastic-style managed flooding: every relay-capable node
rebroadcasts an unseen packet once, after an SNR-weighted contention delay,
until the hop limit is exhausted. Duplicate suppression uses a bounded LRU
cache of recently seen packet ids.
"""

from __future__ import annotations

import struct
from collections import OrderedDict, deque
from dataclasses import dataclass, field, replace
from enum import Enum
from random import Random

from .phy import FrequencyBand, LinkSample, ModemPreset, airtime_ms

BROADCAST = 0xFFFFFFFF
MAX_PAYLOAD_BYTES = 237  # LoRa frame budget after headers
DEFAULT_HOP_LIMIT = 3
SEEN_CACHE_CAPACITY = 256
ROLLING_HOUR_MS = 3_600_000

#: Contention window for rebroadcast scheduling. Weak-SNR receivers (the
#: coverage edge) pick early slots so the flood extends outward first.
CONTENTION_SLOTS = 8
CONTENTION_SNR_WINDOW_DB = 20.0


class PacketKind(Enum):
    RANGE_TEST_SEQ = 0
    CHAT_MESSAGE = 1
    TELEMETRY = 2
    ACK = 3
    CERT_REQUEST = 4
    CERT_RESPONSE = 5
    MODERATION = 6


class Role(Enum):
    SENDER = "sender"
    RECEIVER = "receiver"
    RELAY = "relay"


class PacketError(ValueError):
    """Raised for malformed mesh packets."""


@dataclass(frozen=True)
class MeshPacket:
    packet_id: int
    origin: int
    destination: int
    hop_limit: int
    channel: str
    payload: bytes
    kind: PacketKind

    def __post_init__(self) -> None:
        if len(self.payload) > MAX_PAYLOAD_BYTES:
            raise PacketError(f"payload {len(self.payload)} exceeds {MAX_PAYLOAD_BYTES} bytes")
        if self.hop_limit < 0:
            raise PacketError("hop_limit must be >= 0")
        if not 0 <= self.packet_id <= 0xFFFFFFFF:
            raise PacketError("packet_id must fit 32 bits")

    def decremented(self) -> "MeshPacket":
        return replace(self, hop_limit=self.hop_limit - 1)


# Canonical wire layout (big-endian):
#   u32 packet_id | u32 origin | u32 destination | u8 hop_limit | u8 kind
#   u8 channel_len + channel utf-8 | u16 payload_len + payload
_HEADER = struct.Struct(">IIIBB")


def encode_packet(packet: MeshPacket) -> bytes:
    channel = packet.channel.encode("utf-8")
    if len(channel) > 255:
        raise PacketError("channel name too long")
    return (
        _HEADER.pack(
            packet.packet_id,
            packet.origin,
            packet.destination,
            packet.hop_limit,
            packet.kind.value,
        )
        + bytes([len(channel)])
        + channel
        + struct.pack(">H", len(packet.payload))
        + packet.payload
    )


def decode_packet(data: bytes) -> MeshPacket:
    try:
        packet_id, origin, destination, hop_limit, kind = _HEADER.unpack_from(data, 0)
        offset = _HEADER.size
        channel_len = data[offset]
        offset += 1
        channel = data[offset : offset + channel_len].decode("utf-8")
        offset += channel_len
        (payload_len,) = struct.unpack_from(">H", data, offset)
        offset += 2
        payload = data[offset : offset + payload_len]
        if len(payload) != payload_len:
            raise PacketError("truncated payload")
    except (struct.error, IndexError, UnicodeDecodeError) as exc:
        raise PacketError(f"malformed packet: {exc}") from exc
    return MeshPacket(
        packet_id=packet_id,
        origin=origin,
        destination=destination,
        hop_limit=hop_limit,
        channel=channel,
        payload=payload,
        kind=PacketKind(kind),
    )


class ActionKind(Enum):
    DELIVER = "deliver"
    DELIVER_AND_RELAY = "deliver_and_relay"
    DROP = "drop"


@dataclass(frozen=True)
class ReceiveAction:
    kind: ActionKind
    reason: str | None = None
    forward: MeshPacket | None = None


@dataclass
class NodeState:
    node_id: int
    position: tuple[float, float]
    band: FrequencyBand
    preset: ModemPreset
    role: Role = Role.RECEIVER
    seen_capacity: int = SEEN_CACHE_CAPACITY
    seen_cache: OrderedDict = field(default_factory=OrderedDict)
    duty_ledger: deque = field(default_factory=deque)  # (time_ms, airtime_ms)
    deferred: deque = field(default_factory=deque)

    def has_seen(self, packet_id: int) -> bool:
        return packet_id in self.seen_cache

    def mark_seen(self, packet_id: int) -> None:
        if packet_id in self.seen_cache:
            self.seen_cache.move_to_end(packet_id)
        else:
            self.seen_cache[packet_id] = True
            while len(self.seen_cache) > self.seen_capacity:
                self.seen_cache.popitem(last=False)

    def _prune_ledger(self, now_ms: int) -> None:
        while self.duty_ledger and self.duty_ledger[0][0] <= now_ms - ROLLING_HOUR_MS:
            self.duty_ledger.popleft()

    def airtime_spent_ms(self, now_ms: int) -> float:
        self._prune_ledger(now_ms)
        return sum(t for _, t in self.duty_ledger)

    def duty_budget_ms(self) -> float:
        return self.band.duty_cycle_limit * ROLLING_HOUR_MS


@dataclass(frozen=True)
class TransmitResult:
    accepted: bool
    airtime_ms: float
    reason: str | None = None


def transmit(node: NodeState, packet: MeshPacket, now_ms: int) -> TransmitResult:
    """Charge the rolling-hour duty ledger for one transmission, or refuse.

    A refusal is a deferred-transmission signal, not an error: the caller
    queues the packet and retries when budget frees up.
    """
    duration = airtime_ms(node.preset, max(len(encode_packet(packet)), 1))
    spent = node.airtime_spent_ms(now_ms)
    if spent + duration > node.duty_budget_ms():
        return TransmitResult(accepted=False, airtime_ms=duration, reason="duty-cycle")
    node.duty_ledger.append((now_ms, duration))
    return TransmitResult(accepted=True, airtime_ms=duration)


def on_receive(node: NodeState, packet: MeshPacket, sample: LinkSample, now_ms: int) -> ReceiveAction:
    """Flooding decision for a demodulated packet (the PHY already gated it)."""
    if not sample.received:
        raise ValueError("on_receive requires a successfully demodulated sample")
    if node.has_seen(packet.packet_id):
        return ReceiveAction(ActionKind.DROP, reason="duplicate")
    node.mark_seen(packet.packet_id)
    relays = node.role in (Role.RELAY, Role.SENDER)
    if packet.hop_limit == 0 or not relays:
        return ReceiveAction(ActionKind.DELIVER)
    return ReceiveAction(ActionKind.DELIVER_AND_RELAY, forward=packet.decremented())


def contention_delay(
    sample: LinkSample,
    rng: Random,
    preset: ModemPreset | None = None,
    slot_ms: float | None = None,
) -> float:
    """Randomized rebroadcast delay, biased so weaker-SNR receivers go first.

    Weak receivers sit at the coverage edge; letting them rebroadcast
    earliest extends the flood outward and lets closer nodes suppress
    their own redundant rebroadcasts as duplicates.
    """
    if slot_ms is None:
        # A slot must cover one worst-case rebroadcast so slots don't collide.
        slot_ms = airtime_ms(preset, 32) if preset is not None else 50.0
    floor = preset.snr_floor_db if preset is not None else -20.0
    above_floor = max(0.0, min(sample.snr_db - floor, CONTENTION_SNR_WINDOW_DB))
    slot = int(above_floor / CONTENTION_SNR_WINDOW_DB * (CONTENTION_SLOTS - 1))
    return (slot + rng.random()) * slot_ms


@dataclass
class DeliveryReport:
    packet_id: int
    delivered_to: set[int] = field(default_factory=set)
    hops_used: dict[int, int] = field(default_factory=dict)
    rx_samples: dict[int, LinkSample] = field(default_factory=dict)

    def record(self, node_id: int, hops: int, sample: LinkSample) -> None:
        self.delivered_to.add(node_id)
        self.hops_used[node_id] = hops
        self.rx_samples[node_id] = sample
