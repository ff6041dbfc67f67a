"""Signed chat: message objects, three-step validation, community views.

A message carries date, id, content, signature, and a reference to the
sender's certificate. Frames on the mesh carry a 16-byte certificate
fingerprint instead of the full chain (which does not fit one LoRa frame);
peers resolve fingerprints through a certificate exchange or the local
store before validation.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .identity import (
    AuthorizationError,
    CertChain,
    Certificate,
    RevocationList,
    verify_chain,
)
from .mesh import MAX_PAYLOAD_BYTES, MeshPacket, PacketKind

MAX_CONTENT_BYTES = 2000  # keeps worst-case fragment count around ten
_FRAGMENT_HEADER = struct.Struct(">16sBB")  # message id, index, count
FRAGMENT_BODY_BYTES = MAX_PAYLOAD_BYTES - _FRAGMENT_HEADER.size

DEFAULT_RATE_WINDOW_S = 60
DEFAULT_RATE_MAX = 10


class MessageError(ValueError):
    pass


class SizeError(MessageError):
    pass


class ReassemblyError(MessageError):
    pass


@dataclass(frozen=True)
class Scope:
    kind: str  # "community" | "direct"
    target: str  # zipcode or recipient user id

    @classmethod
    def community(cls, zipcode: str) -> "Scope":
        return cls("community", zipcode)

    @classmethod
    def direct(cls, user_id: str) -> "Scope":
        return cls("direct", user_id)


def _encode_str(value: str) -> bytes:
    raw = value.encode("utf-8")
    return struct.pack(">H", len(raw)) + raw


@dataclass(frozen=True)
class Message:
    date_ms: int
    message_id: bytes  # 16 bytes
    content: str
    scope: Scope
    official: bool
    signature: bytes  # 64 bytes, sender's Ed25519 over signing_bytes()
    sender_fingerprint: bytes  # 16-byte certificate fingerprint
    sender_chain: CertChain | None = None  # resolved locally, never on the wire

    def signing_bytes(self) -> bytes:
        scope_tag = 0 if self.scope.kind == "community" else 1
        return (
            struct.pack(">Q", self.date_ms)
            + self.message_id
            + _encode_str(self.content)
            + struct.pack(">B", scope_tag)
            + _encode_str(self.scope.target)
            + struct.pack(">B", 1 if self.official else 0)
        )

    def encode(self) -> bytes:
        """Canonical wire form: signed fields, signature, fingerprint."""
        return self.signing_bytes() + self.signature + self.sender_fingerprint

    @classmethod
    def decode(cls, data: bytes) -> "Message":
        try:
            (date_ms,) = struct.unpack_from(">Q", data, 0)
            offset = 8
            message_id = data[offset : offset + 16]
            offset += 16
            (content_len,) = struct.unpack_from(">H", data, offset)
            offset += 2
            content = data[offset : offset + content_len].decode("utf-8")
            offset += content_len
            scope_tag = data[offset]
            offset += 1
            (target_len,) = struct.unpack_from(">H", data, offset)
            offset += 2
            target = data[offset : offset + target_len].decode("utf-8")
            offset += target_len
            official_byte = data[offset]
            offset += 1
        except (struct.error, UnicodeDecodeError, IndexError) as exc:
            raise MessageError(f"malformed message: {exc}") from exc
        if scope_tag not in (0, 1) or official_byte not in (0, 1):
            raise MessageError("non-canonical flag byte")
        official = official_byte == 1
        signature = data[offset : offset + 64]
        offset += 64
        fingerprint = data[offset : offset + 16]
        if len(fingerprint) != 16:
            raise MessageError("truncated message")
        return cls(
            date_ms=date_ms,
            message_id=message_id,
            content=content,
            scope=Scope("community" if scope_tag == 0 else "direct", target),
            official=official,
            signature=signature,
            sender_fingerprint=fingerprint,
        )


def compose_and_sign(
    content: str,
    scope: Scope,
    chain: CertChain | None,
    private_key: Ed25519PrivateKey,
    now: datetime | None = None,
    official: bool = False,
    revocations: RevocationList | None = None,
) -> Message:
    """Build and sign a message; the sender must hold a valid chain."""
    if chain is None:
        raise AuthorizationError("unauthenticated principals may read but not post")
    verdict = verify_chain(chain, revocations, now)
    if not verdict:
        raise AuthorizationError(f"sender chain invalid: {verdict.reason}")
    if len(content.encode("utf-8")) > MAX_CONTENT_BYTES:
        raise SizeError(f"content exceeds {MAX_CONTENT_BYTES} bytes")
    if official and "official_intermediary" not in chain.intermediary.role_flags:
        raise AuthorizationError("official messages require the official intermediary lineage")
    now = now or datetime.now(timezone.utc)
    draft = Message(
        date_ms=int(now.timestamp() * 1000),
        message_id=os.urandom(16),
        content=content,
        scope=scope,
        official=official,
        signature=b"\0" * 64,
        sender_fingerprint=chain.leaf.fingerprint(),
        sender_chain=chain,
    )
    return replace(draft, signature=private_key.sign(draft.signing_bytes()))


@dataclass(frozen=True)
class MessageVerdict:
    authentic: bool
    failed_step: int | None = None  # 1 signature, 2 certificate, 3 chain-to-root
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.authentic


def validate(
    message: Message,
    root: Certificate,
    revocations: RevocationList | None = None,
    at: datetime | None = None,
) -> MessageVerdict:
    """Three-step authenticity check, returning the earliest failing step.

    1. The signature verifies over the canonical bytes.
    2. The leaf certificate is valid with its intermediary certificate.
    3. The chain resolves to the trusted root (and nothing is revoked).
    Official messages additionally require the official intermediary lineage.
    """
    chain = message.sender_chain
    if chain is None:
        return MessageVerdict(False, 2, "certificate: sender chain unresolved")
    try:
        Ed25519PublicKey.from_public_bytes(chain.leaf.public_key).verify(
            message.signature, message.signing_bytes()
        )
    except InvalidSignature:
        return MessageVerdict(False, 1, "signature: does not verify under sender certificate")
    if message.sender_fingerprint != chain.leaf.fingerprint():
        return MessageVerdict(False, 2, "certificate: fingerprint mismatch")
    at = at or datetime.now(timezone.utc)
    ts = int(at.timestamp())
    if chain.leaf.issuer_serial != chain.intermediary.serial or not chain.leaf.verify_signed_by(
        chain.intermediary
    ):
        return MessageVerdict(False, 2, "certificate: leaf not signed by intermediary")
    if not (chain.leaf.not_before <= ts <= chain.leaf.not_after):
        return MessageVerdict(False, 2, "certificate: leaf outside validity window")
    if chain.root.serial != root.serial or chain.root.encode() != root.encode():
        return MessageVerdict(False, 3, "chain: does not resolve to the trusted root")
    full = verify_chain(chain, revocations, at)
    if not full:
        return MessageVerdict(False, 3, f"chain: {full.reason}")
    if message.official and "official_intermediary" not in chain.intermediary.role_flags:
        return MessageVerdict(False, 3, "official-lineage: not signed under official intermediary")
    return MessageVerdict(True)


# ----------------------------------------------------------------------
@dataclass
class RateLimit:
    window_s: int = DEFAULT_RATE_WINDOW_S
    max_messages: int = DEFAULT_RATE_MAX


@dataclass(frozen=True)
class ModerationAction:
    actor_fingerprint: bytes
    target: bytes | str  # message id or user id
    action: str  # "flag" | "hide" | "rate_limit"
    zipcode: str
    rate_limit: RateLimit | None = None
    signature: bytes = b""
    actor_chain: CertChain | None = None

    def signing_bytes(self) -> bytes:
        target = self.target if isinstance(self.target, bytes) else self.target.encode()
        body = self.actor_fingerprint + _encode_str(self.action) + _encode_str(self.zipcode)
        body += struct.pack(">H", len(target)) + target
        body += struct.pack(">B", 1 if isinstance(self.target, str) else 0)
        if self.rate_limit is not None:
            body += struct.pack(">BII", 1, self.rate_limit.window_s, self.rate_limit.max_messages)
        else:
            body += struct.pack(">B", 0)
        return body

    def encode(self) -> bytes:
        return self.signing_bytes() + self.signature

    @classmethod
    def decode(cls, data: bytes) -> "ModerationAction":
        try:
            fingerprint = data[:16]
            offset = 16
            (action_len,) = struct.unpack_from(">H", data, offset)
            offset += 2
            action = data[offset : offset + action_len].decode()
            offset += action_len
            (zip_len,) = struct.unpack_from(">H", data, offset)
            offset += 2
            zipcode = data[offset : offset + zip_len].decode()
            offset += zip_len
            (target_len,) = struct.unpack_from(">H", data, offset)
            offset += 2
            raw_target = data[offset : offset + target_len]
            offset += target_len
            target_tag = data[offset]
            offset += 1
            rate_tag = data[offset]
            offset += 1
            if target_tag not in (0, 1) or rate_tag not in (0, 1):
                raise MessageError("non-canonical flag byte")
            target_is_str = target_tag == 1
            has_rate = rate_tag == 1
            rate = None
            if has_rate:
                window, maximum = struct.unpack_from(">II", data, offset)
                offset += 8
                rate = RateLimit(window_s=window, max_messages=maximum)
        except (struct.error, UnicodeDecodeError, IndexError) as exc:
            raise MessageError(f"malformed moderation action: {exc}") from exc
        signature = data[offset : offset + 64]
        if len(signature) != 64:
            raise MessageError("truncated moderation action")
        return cls(
            actor_fingerprint=fingerprint,
            target=raw_target.decode() if target_is_str else raw_target,
            action=action,
            zipcode=zipcode,
            rate_limit=rate,
            signature=signature,
        )


def sign_moderation(action: ModerationAction, key: Ed25519PrivateKey) -> ModerationAction:
    return replace(action, signature=key.sign(action.signing_bytes()))


@dataclass
class CommunityView:
    zipcode: str
    visible: list[Message] = field(default_factory=list)
    hidden: set[bytes] = field(default_factory=set)
    flagged: set[bytes] = field(default_factory=set)
    quarantine: list[tuple[Message, MessageVerdict]] = field(default_factory=list)
    rate_limits: dict[str, RateLimit] = field(default_factory=dict)
    rate_history: dict[str, list[int]] = field(default_factory=dict)
    default_rate: RateLimit = field(default_factory=RateLimit)

    def ordered_visible(self) -> list[Message]:
        return [m for m in self.visible if m.message_id not in self.hidden]


def _sender_uid(message: Message) -> str:
    if message.sender_chain is not None:
        return message.sender_chain.leaf.subject_id
    return message.sender_fingerprint.hex()


def _rate_exceeded(view: CommunityView, message: Message) -> bool:
    uid = _sender_uid(message)
    limit = view.rate_limits.get(uid, view.default_rate)
    history = view.rate_history.setdefault(uid, [])
    window_start = message.date_ms - limit.window_s * 1000
    history[:] = [t for t in history if t > window_start]
    if len(history) >= limit.max_messages:
        return True
    history.append(message.date_ms)
    return False


def ingest(view: CommunityView, message: Message, verdict: MessageVerdict) -> CommunityView:
    """Apply one message to a community view.

    Authentic community-scoped messages enter the visible ordering (date
    order, tie-broken by id bytes); everything else lands in quarantine.
    """
    if not verdict:
        view.quarantine.append((message, verdict))
        return view
    if message.scope.kind != "community" or message.scope.target != view.zipcode:
        return view
    if any(m.message_id == message.message_id for m in view.visible):
        return view
    if _rate_exceeded(view, message):
        view.quarantine.append(
            (message, MessageVerdict(False, None, "rate-limit: sender over limit"))
        )
        return view
    view.visible.append(message)
    view.visible.sort(key=lambda m: (m.date_ms, m.message_id))
    return view


def moderate(
    view: CommunityView,
    action: ModerationAction,
    root: Certificate,
    revocations: RevocationList | None = None,
    at: datetime | None = None,
) -> CommunityView:
    """Apply a signed moderation action, enforcing the actor's jurisdiction."""
    chain = action.actor_chain
    if chain is None:
        raise AuthorizationError("moderation requires the actor's certificate chain")
    if not verify_chain(chain, revocations, at):
        raise AuthorizationError("moderation actor chain invalid")
    try:
        Ed25519PublicKey.from_public_bytes(chain.leaf.public_key).verify(
            action.signature, action.signing_bytes()
        )
    except InvalidSignature:
        raise AuthorizationError("moderation action signature invalid")
    flags = chain.leaf.role_flags
    if "administrator" not in flags:
        if "moderator" not in flags:
            raise AuthorizationError("actor holds neither moderator nor administrator role")
        if chain.leaf.zipcode_scope != view.zipcode:
            raise AuthorizationError(
                f"moderator scoped to {chain.leaf.zipcode_scope}, not {view.zipcode}"
            )
    if action.zipcode != view.zipcode:
        raise AuthorizationError("action targets a different community")
    if action.action == "hide":
        target = action.target if isinstance(action.target, bytes) else action.target.encode()
        view.hidden.add(target)
    elif action.action == "flag":
        target = action.target if isinstance(action.target, bytes) else action.target.encode()
        view.flagged.add(target)
    elif action.action == "rate_limit":
        if action.rate_limit is None:
            raise MessageError("rate_limit action needs parameters")
        uid = action.target if isinstance(action.target, str) else action.target.decode()
        view.rate_limits[uid] = action.rate_limit
    else:
        raise MessageError(f"unknown moderation action {action.action!r}")
    return view


# ----------------------------------------------------------------------
def fragment_blob(tag: bytes, blob: bytes) -> list[bytes]:
    """Split a blob into mesh-sized frames headed by (tag, index, count)."""
    if len(tag) != 16:
        raise MessageError("fragment tag must be 16 bytes")
    chunks = [blob[i : i + FRAGMENT_BODY_BYTES] for i in range(0, len(blob), FRAGMENT_BODY_BYTES)]
    if not chunks:
        chunks = [b""]
    if len(chunks) > 255:
        raise SizeError("blob needs more than 255 fragments")
    return [
        _FRAGMENT_HEADER.pack(tag, index, len(chunks)) + chunk
        for index, chunk in enumerate(chunks)
    ]


def reassemble_blob(frames: list[bytes]) -> tuple[bytes, bytes]:
    """Inverse of fragment_blob: (tag, blob). Order-insensitive, duplicates ok."""
    if not frames:
        raise ReassemblyError("no frames")
    parts: dict[int, bytes] = {}
    tag = None
    count = None
    for frame in frames:
        frame_tag, index, total = _FRAGMENT_HEADER.unpack_from(frame, 0)
        body = frame[_FRAGMENT_HEADER.size :]
        if tag is None:
            tag, count = frame_tag, total
        elif frame_tag != tag:
            raise ReassemblyError("frames from different blobs")
        elif total != count:
            raise ReassemblyError("inconsistent fragment count")
        existing = parts.get(index)
        if existing is not None and existing != body:
            raise ReassemblyError(f"conflicting duplicate for fragment {index}")
        parts[index] = body
    assert count is not None
    missing = [i for i in range(count) if i not in parts]
    if missing:
        raise ReassemblyError(f"missing fragments: {missing}")
    return tag, b"".join(parts[i] for i in range(count))


def frame_tag(frame: bytes) -> tuple[bytes, int, int]:
    """Peek at a frame's (tag, index, count) header without reassembling."""
    tag, index, count = _FRAGMENT_HEADER.unpack_from(frame, 0)
    return tag, index, count


def to_mesh_frames(message: Message) -> list[bytes]:
    """Fragment a message's canonical bytes into mesh-sized frame payloads.

    The round trip through ``from_mesh_frames`` is byte-exact.
    """
    return fragment_blob(message.message_id, message.encode())


def from_mesh_frames(frames: list[bytes]) -> Message:
    """Reassemble message fragments (order-insensitive, duplicates ignored)."""
    _, blob = reassemble_blob(frames)
    return Message.decode(blob)


def frames_to_packets(
    frames: list[bytes],
    origin: int,
    channel: str,
    hop_limit: int,
    first_packet_id: int,
    destination: int = 0xFFFFFFFF,
) -> list[MeshPacket]:
    return [
        MeshPacket(
            packet_id=first_packet_id + i,
            origin=origin,
            destination=destination,
            hop_limit=hop_limit,
            channel=channel,
            payload=frame,
            kind=PacketKind.CHAT_MESSAGE,
        )
        for i, frame in enumerate(frames)
    ]
