"""Deterministic discrete-event harness for range-test scenarios.

Replays the three-stage field-test methodology: a central node transmits
numbered messages at a fixed interval, receivers log each delivery, movers
step outward in fixed increments once they pass the initial sanity check,
and the run terminates when the message budget is exhausted or the farthest
receiver has heard nothing for ten consecutive send intervals.

The clock is integer milliseconds and all randomness flows through one
seeded ``random.Random``, so a (scenario, seed) pair fully determines the
event log and the exported CSV bytes.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from random import Random

from . import mesh, phy
from .analysis import RangeTestRecord
from .mesh import (
    BROADCAST,
    ActionKind,
    MeshPacket,
    NodeState,
    PacketKind,
    Role,
)

SILENT_INTERVALS_BEFORE_STOP = 10
CAPTURE_THRESHOLD_DB = 6.0

#: Wall-clock anchor for CSV timestamps; simulation time 0 maps here.
EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)


class ScenarioError(ValueError):
    """Raised for scenarios violating their invariants."""


class ReplayError(RuntimeError):
    """Raised when a replay diverges from the recorded log."""


@dataclass(frozen=True)
class NodeSpec:
    node_id: int
    role: Role
    x_m: float
    y_m: float = 0.0
    mover: bool = False
    dwell_intervals: int = 3
    max_m: float | None = None  # route end for movers


@dataclass(frozen=True)
class Scenario:
    band: str
    preset: str
    nodes: tuple[NodeSpec, ...]
    seed: int = 0
    send_interval_s: float | None = None  # default per preset (30 s LF / 15 s SF)
    increment_m: float = 50.0
    message_budget: int = 200
    hop_limit: int = mesh.DEFAULT_HOP_LIMIT
    calibrate_to_m: float | None = None
    exponent: float | None = None
    sigma_db: float = 0.0
    noise_floor_dbm: float | None = None
    background_tx_rate: float = 0.0  # interfering packets per minute
    payload_prefix: str = "seq"
    channel: str = "rangetest"

    def __post_init__(self) -> None:
        senders = [n for n in self.nodes if n.role is Role.SENDER]
        if len(senders) != 1:
            raise ScenarioError(f"exactly one sender required, got {len(senders)}")
        if self.interval_s <= 0 or self.increment_m <= 0:
            raise ScenarioError("send interval and increment must be positive")
        if self.message_budget < 1:
            raise ScenarioError("message budget must be >= 1")
        if self.band not in phy.BANDS or self.preset not in phy.PRESETS:
            raise ScenarioError(f"unknown band/preset: {self.band}/{self.preset}")
        if len({n.node_id for n in self.nodes}) != len(self.nodes):
            raise ScenarioError("node ids must be unique")

    @property
    def interval_s(self) -> float:
        if self.send_interval_s is not None:
            return self.send_interval_s
        return 30.0 if self.preset == "LongFast" else 15.0

    def path_loss_model(self) -> phy.PathLossModel:
        band = phy.BANDS[self.band]
        preset = phy.PRESETS[self.preset]
        if self.calibrate_to_m is not None:
            return phy.calibrate_exponent(
                band, preset, self.calibrate_to_m, shadowing_sigma_db=self.sigma_db
            )
        if self.exponent is None:
            raise ScenarioError("scenario needs either calibrate_to_m or exponent")
        return phy.PathLossModel(
            reference_loss_db=phy.free_space_reference_loss_db(band.center_hz),
            d0_m=1.0,
            exponent=self.exponent,
            shadowing_sigma_db=self.sigma_db,
        )


@dataclass(frozen=True)
class LogEntry:
    time_ms: int
    node_id: int
    kind: str
    packet_id: int
    detail: str = ""


@dataclass
class EventLog:
    scenario: Scenario
    entries: list[LogEntry] = field(default_factory=list)

    def append(self, entry: LogEntry) -> None:
        if self.entries and entry.time_ms < self.entries[-1].time_ms:
            raise ValueError("event log time must be non-decreasing")
        self.entries.append(entry)


@dataclass
class RunResult:
    log: EventLog
    records: list[RangeTestRecord]
    sent_log: dict[int, list[tuple[int, float]]]  # node -> [(seq, distance at send)]
    max_seq_sent: int
    delivery_reports: dict[int, mesh.DeliveryReport]


@dataclass
class _Transmission:
    packet: MeshPacket
    tx_node: int
    start_ms: int
    end_ms: int
    rssi_at: dict[int, phy.LinkSample]


class _Sim:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.rng = Random(scenario.seed)
        self.band = phy.BANDS[scenario.band]
        self.preset = phy.PRESETS[scenario.preset]
        self.model = scenario.path_loss_model()
        self.noise_floor = (
            scenario.noise_floor_dbm
            if scenario.noise_floor_dbm is not None
            else phy.noise_floor_dbm(self.preset.bandwidth_hz)
        )
        self.interval_ms = int(scenario.interval_s * 1000)
        self.log = EventLog(scenario=scenario)
        self.records: list[RangeTestRecord] = []
        self.reports: dict[int, mesh.DeliveryReport] = {}
        self.sent_log: dict[int, list[tuple[int, float]]] = {}
        self.heap: list[tuple[int, int, int]] = []  # (time, tiebreak, event idx)
        self._events: list[tuple] = []
        self._counter = 0
        self.active: list[_Transmission] = []
        self.history: list[_Transmission] = []
        self.sanity_passed: set[int] = set()
        self.last_delivery_ms: dict[int, int] = {}
        self.seq = 0
        self.stopped = False
        self.next_packet_id = 1

        specs = sorted(scenario.nodes, key=lambda n: n.node_id)
        self.specs = {n.node_id: n for n in specs}
        self.nodes: dict[int, NodeState] = {}
        self.moves_left: dict[int, int] = {}
        for spec in specs:
            self.nodes[spec.node_id] = NodeState(
                node_id=spec.node_id,
                position=(spec.x_m, spec.y_m),
                band=self.band,
                preset=self.preset,
                role=spec.role,
            )
            if spec.role is Role.SENDER:
                self.sender_id = spec.node_id
            else:
                self.sent_log[spec.node_id] = []
        self.receiver_ids = [n for n in self.nodes if n != self.sender_id]

    # ------------------------------------------------------------------
    def schedule(self, time_ms: int, event: tuple) -> None:
        self._counter += 1
        self._events.append(event)
        heapq.heappush(self.heap, (time_ms, self._counter, len(self._events) - 1))

    def emit(self, time_ms: int, node_id: int, kind: str, packet_id: int, detail: str = "") -> None:
        self.log.append(LogEntry(time_ms, node_id, kind, packet_id, detail))

    def distance(self, a: int, b: int) -> float:
        (ax, ay), (bx, by) = self.nodes[a].position, self.nodes[b].position
        return max(((ax - bx) ** 2 + (ay - by) ** 2) ** 0.5, 0.5)

    def sender_distance(self, node_id: int) -> float:
        return self.distance(self.sender_id, node_id)

    def farthest_receiver(self) -> int:
        return max(self.receiver_ids, key=lambda n: (self.sender_distance(n), n))

    # ------------------------------------------------------------------
    def run(self) -> RunResult:
        self.schedule(0, ("send",))
        if self.scenario.background_tx_rate > 0:
            self.schedule(self._next_background_gap(0), ("background",))
        while self.heap and not self.stopped:
            time_ms, _, idx = heapq.heappop(self.heap)
            event = self._events[idx]
            handler = getattr(self, f"_on_{event[0]}")
            handler(time_ms, *event[1:])
        return RunResult(
            log=self.log,
            records=self.records,
            sent_log=self.sent_log,
            max_seq_sent=self.seq,
            delivery_reports=self.reports,
        )

    # -- events ---------------------------------------------------------
    def _on_send(self, now: int) -> None:
        if self.seq >= self.scenario.message_budget:
            self.stopped = True
            return
        far = self.farthest_receiver()
        last = self.last_delivery_ms.get(far, 0)  # silent since start counts
        if now - last >= SILENT_INTERVALS_BEFORE_STOP * self.interval_ms:
            self.emit(now, far, "terminate", 0, "silent-intervals")
            self.stopped = True
            return
        self.seq += 1
        payload = f"{self.scenario.payload_prefix} {self.seq}".encode()
        packet = MeshPacket(
            packet_id=self.next_packet_id,
            origin=self.sender_id,
            destination=BROADCAST,
            hop_limit=self.scenario.hop_limit,
            channel=self.scenario.channel,
            payload=payload,
            kind=PacketKind.RANGE_TEST_SEQ,
        )
        self.next_packet_id += 1
        self.reports[packet.packet_id] = mesh.DeliveryReport(packet_id=packet.packet_id)
        for node_id in self.sent_log:
            self.sent_log[node_id].append((self.seq, self.sender_distance(node_id)))
        self.emit(now, self.sender_id, "send", packet.packet_id, f"seq={self.seq}")
        self._start_transmission(now, self.sender_id, packet)
        self.schedule(now + self.interval_ms, ("send",))

    def _on_background(self, now: int) -> None:
        # Interfering traffic from external devices sharing the preset; a
        # virtual transmitter is dropped at a random bearing 200-1000 m out.
        angle = self.rng.random() * math.tau
        dist = 200.0 + self.rng.random() * 800.0
        pos = (dist * math.cos(angle), dist * math.sin(angle))
        payload = bytes(10)
        duration = int(round(phy.airtime_ms(self.preset, len(payload))))
        tx = _Transmission(
            packet=MeshPacket(
                packet_id=0xFFFF0000 + (self.next_packet_id & 0xFFFF),
                origin=BROADCAST - 1,
                destination=BROADCAST,
                hop_limit=0,
                channel="background",
                payload=payload,
                kind=PacketKind.TELEMETRY,
            ),
            tx_node=-1,
            start_ms=now,
            end_ms=now + duration,
            rssi_at={},
        )
        self.next_packet_id += 1
        for node_id, node in sorted(self.nodes.items()):
            (nx, ny) = node.position
            d = max(((pos[0] - nx) ** 2 + (pos[1] - ny) ** 2) ** 0.5, 0.5)
            tx.rssi_at[node_id] = phy.sample_link(
                self.band, self.preset, self.model, d, self.noise_floor, self.rng
            )
        self.active.append(tx)
        self.history.append(tx)
        self.schedule(tx.end_ms, ("tx_end", tx))
        self.emit(now, -1, "background", tx.packet.packet_id)
        self.schedule(now + self._next_background_gap(now), ("background",))

    def _next_background_gap(self, now: int) -> int:
        rate_per_ms = self.scenario.background_tx_rate / 60_000.0
        return max(1, int(self.rng.expovariate(rate_per_ms)))

    def _start_transmission(self, now: int, node_id: int, packet: MeshPacket) -> None:
        node = self.nodes[node_id]
        # Carrier sense: hold off while another audible transmission is on air.
        busy_until = 0
        for tx in self.active:
            if tx.end_ms > now and tx.tx_node != node_id:
                heard = tx.rssi_at.get(node_id)
                if heard is not None and heard.rssi_dbm >= self.preset.sensitivity_dbm:
                    busy_until = max(busy_until, tx.end_ms)
        if busy_until > now:
            jitter = int(self.rng.random() * 50)
            self.schedule(busy_until + 1 + jitter, ("tx_start", node_id, packet))
            return
        result = mesh.transmit(node, packet, now)
        if not result.accepted:
            self.emit(now, node_id, "deferred", packet.packet_id, result.reason or "")
            node.deferred.append(packet)
            self.schedule(now + 1000, ("retry", node_id))
            return
        duration = int(round(result.airtime_ms))
        tx = _Transmission(packet=packet, tx_node=node_id, start_ms=now, end_ms=now + duration, rssi_at={})
        for other_id, other in sorted(self.nodes.items()):
            if other_id == node_id:
                continue
            tx.rssi_at[other_id] = phy.sample_link(
                self.band, self.preset, self.model,
                self.distance(node_id, other_id), self.noise_floor, self.rng,
            )
        self.active.append(tx)
        self.history.append(tx)
        self.emit(now, node_id, "tx", packet.packet_id, f"hop_limit={packet.hop_limit}")
        self.schedule(tx.end_ms, ("tx_end", tx))

    def _on_tx_start(self, now: int, node_id: int, packet: MeshPacket) -> None:
        self._start_transmission(now, node_id, packet)

    def _on_retry(self, now: int, node_id: int) -> None:
        node = self.nodes[node_id]
        if not node.deferred:
            return
        packet = node.deferred.popleft()
        self._start_transmission(now, node_id, packet)

    def _on_tx_end(self, now: int, tx: _Transmission) -> None:
        self.active.remove(tx)
        self.history = [t for t in self.history if t.end_ms > now - 60_000 or t is tx]
        if tx.tx_node == -1:
            return  # background interference carries no deliverable payload
        for node_id in sorted(tx.rssi_at):
            sample = tx.rssi_at[node_id]
            if not sample.received:
                continue
            if self._collided(tx, node_id):
                self.emit(now, node_id, "drop-collision", tx.packet.packet_id)
                continue
            self._receive(now, node_id, tx.packet, sample)

    def _collided(self, tx: _Transmission, node_id: int) -> bool:
        # Two overlapping on-air packets destroy each other at a receiver
        # unless the wanted one is at least 6 dB stronger (capture effect).
        own = tx.rssi_at[node_id].rssi_dbm
        for other in self._overlapping(tx):
            if other.tx_node == node_id:
                continue
            heard = other.rssi_at.get(node_id)
            if heard is None:
                continue
            if heard.rssi_dbm >= self.preset.sensitivity_dbm and own < heard.rssi_dbm + CAPTURE_THRESHOLD_DB:
                return True
        return False

    def _overlapping(self, tx: _Transmission) -> list[_Transmission]:
        return [
            other
            for other in self.history
            if other is not tx and other.start_ms < tx.end_ms and other.end_ms > tx.start_ms
        ]

    def _receive(self, now: int, node_id: int, packet: MeshPacket, sample: phy.LinkSample) -> None:
        node = self.nodes[node_id]
        action = mesh.on_receive(node, packet, sample, now)
        if action.kind is ActionKind.DROP:
            self.emit(now, node_id, f"drop-{action.reason}", packet.packet_id)
            return
        hops = self.scenario.hop_limit - packet.hop_limit + 1
        self.emit(now, node_id, "deliver", packet.packet_id, f"hops={hops}")
        if packet.kind is PacketKind.RANGE_TEST_SEQ and node_id != self.sender_id:
            seq = int(packet.payload.decode().rsplit(" ", 1)[-1])
            dist = self.sender_distance(node_id)
            self.records.append(
                RangeTestRecord(
                    time=EPOCH + timedelta(milliseconds=now),
                    node_id=node_id,
                    seq=seq,
                    distance_m=round(dist, 1),
                    rssi_dbm=round(sample.rssi_dbm, 2),
                    snr_db=round(sample.snr_db, 2),
                    hops=hops,
                )
            )
            report = self.reports.get(packet.packet_id)
            if report is not None:
                report.record(node_id, hops, sample)
            self.last_delivery_ms[node_id] = now
            if seq == 1 or node_id not in self.sanity_passed:
                self._sanity_pass(now, node_id)
        if action.kind is ActionKind.DELIVER_AND_RELAY and action.forward is not None:
            delay = int(round(mesh.contention_delay(sample, self.rng, self.preset)))
            self.emit(now, node_id, "relay", packet.packet_id, f"delay={delay}")
            self.schedule(now + delay, ("tx_start", node_id, action.forward))

    def _sanity_pass(self, now: int, node_id: int) -> None:
        # Stage 2: movers hold position until they have proven reception.
        if node_id in self.sanity_passed:
            return
        self.sanity_passed.add(node_id)
        spec = self.specs[node_id]
        if spec.mover:
            self.schedule(now + spec.dwell_intervals * self.interval_ms, ("move", node_id))

    def _on_move(self, now: int, node_id: int) -> None:
        spec = self.specs[node_id]
        node = self.nodes[node_id]
        x, y = node.position
        new_x = x + self.scenario.increment_m
        if spec.max_m is not None and new_x > spec.max_m + 1e-9:
            return  # route end reached
        node.position = (new_x, y)
        self.emit(now, node_id, "move", 0, f"x={new_x:.1f}")
        self.schedule(now + spec.dwell_intervals * self.interval_ms, ("move", node_id))


def run(scenario: Scenario) -> RunResult:
    """Execute one scenario to completion."""
    return _Sim(scenario).run()


def replay(log: EventLog) -> EventLog:
    """Re-run the scenario recorded in ``log`` and verify bit-reproducibility."""
    fresh = run(log.scenario).log
    if fresh.entries != log.entries:
        raise ReplayError("replay diverged from recorded log")
    return fresh


# ----------------------------------------------------------------------
CSV_HEADER = "time_iso8601,node_id,seq,distance_m,rssi_dbm,snr_db,hops"


def export_csv(records: list[RangeTestRecord], path: str | Path) -> Path:
    """Write the canonical range-test CSV (UTF-8, LF line endings)."""
    path = Path(path)
    lines = [CSV_HEADER]
    for r in records:
        stamp = r.time.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3] + "Z"
        lines.append(
            f"{stamp},{r.node_id},{r.seq},{r.distance_m:g},{r.rssi_dbm:g},{r.snr_db:g},{r.hops}"
        )
    path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    return path


# ----------------------------------------------------------------------
def _nodes_from_raw(raw_nodes: list[dict]) -> tuple[NodeSpec, ...]:
    specs = []
    for raw in raw_nodes:
        specs.append(
            NodeSpec(
                node_id=int(raw["id"]),
                role=Role(raw.get("role", "receiver")),
                x_m=float(raw.get("x_m", 0.0)),
                y_m=float(raw.get("y_m", 0.0)),
                mover=bool(raw.get("mover", False)),
                dwell_intervals=int(raw.get("dwell_intervals", 3)),
                max_m=float(raw["max_m"]) if "max_m" in raw else None,
            )
        )
    return tuple(specs)


def scenario_from_dict(data: dict) -> Scenario:
    raw = dict(data)
    nodes = _nodes_from_raw(raw.pop("nodes"))
    allowed = {
        "band", "preset", "seed", "send_interval_s", "increment_m", "message_budget",
        "hop_limit", "calibrate_to_m", "exponent", "sigma_db", "noise_floor_dbm",
        "background_tx_rate", "payload_prefix", "channel",
    }
    unknown = set(raw) - allowed
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    return Scenario(nodes=nodes, **raw)


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario from a TOML or JSON file."""
    path = Path(path)
    text = path.read_bytes()
    if path.suffix == ".json":
        data = json.loads(text)
    else:
        try:
            import tomllib  # Python 3.11+
        except ModuleNotFoundError:
            import tomli as tomllib
        data = tomllib.loads(text.decode("utf-8"))
    return scenario_from_dict(data)
