"""Lightweight PKI: key generation, signing requests, approval, revocation.

Certificates are compact X.509-style records with a deterministic binary
encoding (documented in the README) and Ed25519 signatures, forming exactly
three-level chains: leaf -> intermediary -> self-signed root.
"""

from __future__ import annotations

import base64
import hashlib
import os
import struct
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

DEFAULT_VALIDITY = timedelta(days=365)

ROLE_BITS = {
    "authenticated": 1,
    "moderator": 2,
    "administrator": 4,
    "official_intermediary": 8,
    "root": 16,
}
_BIT_ROLES = {bit: name for name, bit in ROLE_BITS.items()}


class IdentityError(RuntimeError):
    pass


class AuthorizationError(IdentityError):
    pass


class StateError(IdentityError):
    pass


class NotFoundError(IdentityError):
    pass


def _now() -> datetime:
    return datetime.now(timezone.utc)


def _encode_str(value: str) -> bytes:
    raw = value.encode("utf-8")
    return struct.pack(">H", len(raw)) + raw


def _decode_str(data: bytes, offset: int) -> tuple[str, int]:
    (length,) = struct.unpack_from(">H", data, offset)
    offset += 2
    return data[offset : offset + length].decode("utf-8"), offset + length


@dataclass(frozen=True)
class Certificate:
    serial: int
    subject_name: str
    subject_id: str
    public_key: bytes  # 32-byte Ed25519 verification key
    role_flags: frozenset[str]
    zipcode_scope: str | None
    issuer_serial: int
    not_before: int  # epoch seconds
    not_after: int
    signature: bytes  # issuer's signature over signing_bytes()

    def __post_init__(self) -> None:
        if len(self.public_key) != 32:
            raise IdentityError("public key must be 32 bytes")
        unknown = self.role_flags - set(ROLE_BITS)
        if unknown:
            raise IdentityError(f"unknown role flags: {sorted(unknown)}")
        if "moderator" in self.role_flags:
            if "authenticated" not in self.role_flags or not self.zipcode_scope:
                raise IdentityError("moderator requires authenticated flag and a zipcode scope")

    @property
    def is_root(self) -> bool:
        return "root" in self.role_flags and self.issuer_serial == self.serial

    def signing_bytes(self) -> bytes:
        """Canonical encoding of every field the signature covers."""
        bits = 0
        for flag in self.role_flags:
            bits |= ROLE_BITS[flag]
        return (
            struct.pack(">Q", self.serial)
            + _encode_str(self.subject_name)
            + _encode_str(self.subject_id)
            + self.public_key
            + struct.pack(">B", bits)
            + _encode_str(self.zipcode_scope or "")
            + struct.pack(">QQQ", self.issuer_serial, self.not_before, self.not_after)
        )

    def encode(self) -> bytes:
        return self.signing_bytes() + self.signature

    @classmethod
    def decode(cls, data: bytes) -> "Certificate":
        try:
            offset = 8
            (serial,) = struct.unpack_from(">Q", data, 0)
            subject_name, offset = _decode_str(data, offset)
            subject_id, offset = _decode_str(data, offset)
            public_key = data[offset : offset + 32]
            offset += 32
            (bits,) = struct.unpack_from(">B", data, offset)
            offset += 1
            zipcode, offset = _decode_str(data, offset)
            issuer_serial, not_before, not_after = struct.unpack_from(">QQQ", data, offset)
            offset += 24
        except (struct.error, UnicodeDecodeError) as exc:
            raise IdentityError(f"malformed certificate: {exc}") from exc
        signature = data[offset : offset + 64]
        if len(signature) != 64:
            raise IdentityError("truncated certificate")
        known = 0
        for bit in _BIT_ROLES:
            known |= bit
        if bits & ~known:
            raise IdentityError(f"unknown role bits set: {bits:#04x}")
        flags = frozenset(name for bit, name in _BIT_ROLES.items() if bits & bit)
        return cls(
            serial=serial,
            subject_name=subject_name,
            subject_id=subject_id,
            public_key=public_key,
            role_flags=flags,
            zipcode_scope=zipcode or None,
            issuer_serial=issuer_serial,
            not_before=not_before,
            not_after=not_after,
            signature=signature,
        )

    def fingerprint(self) -> bytes:
        """16-byte identifier used on the wire instead of the full chain."""
        return hashlib.sha256(self.encode()).digest()[:16]

    def verify_signed_by(self, issuer: "Certificate") -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(issuer.public_key).verify(
                self.signature, self.signing_bytes()
            )
            return True
        except InvalidSignature:
            return False

    def to_base64_block(self) -> str:
        """ASCII-armoured form for QR-style transfer."""
        body = base64.b64encode(self.encode()).decode()
        lines = [body[i : i + 64] for i in range(0, len(body), 64)]
        return "\n".join(["-----BEGIN GRIDLESS CERTIFICATE-----", *lines,
                          "-----END GRIDLESS CERTIFICATE-----"])

    @classmethod
    def from_base64_block(cls, block: str) -> "Certificate":
        lines = [l.strip() for l in block.strip().splitlines()
                 if l.strip() and not l.startswith("-----")]
        return cls.decode(base64.b64decode("".join(lines)))


@dataclass(frozen=True)
class CertChain:
    leaf: Certificate
    intermediary: Certificate
    root: Certificate


@dataclass
class SigningRequest:
    request_id: str
    subject_name: str
    subject_id: str
    public_key: bytes
    id_evidence: bytes = b""  # opaque stub for the external government-ID check
    submitted_at: datetime = field(default_factory=_now)
    status: str = "pending"  # pending | approved | rejected
    issued_serial: int | None = None
    reject_reason: str | None = None

    def encode(self) -> bytes:
        return (
            _encode_str(self.request_id)
            + _encode_str(self.subject_name)
            + _encode_str(self.subject_id)
            + self.public_key
            + struct.pack(">I", len(self.id_evidence))
            + self.id_evidence
        )

    @classmethod
    def decode(cls, data: bytes) -> "SigningRequest":
        request_id, offset = _decode_str(data, 0)
        subject_name, offset = _decode_str(data, offset)
        subject_id, offset = _decode_str(data, offset)
        public_key = data[offset : offset + 32]
        offset += 32
        (evidence_len,) = struct.unpack_from(">I", data, offset)
        offset += 4
        evidence = data[offset : offset + evidence_len]
        return cls(
            request_id=request_id,
            subject_name=subject_name,
            subject_id=subject_id,
            public_key=public_key,
            id_evidence=evidence,
        )

    def to_base64_block(self) -> str:
        body = base64.b64encode(self.encode()).decode()
        lines = [body[i : i + 64] for i in range(0, len(body), 64)]
        return "\n".join(["-----BEGIN GRIDLESS SIGNING REQUEST-----", *lines,
                          "-----END GRIDLESS SIGNING REQUEST-----"])

    @classmethod
    def from_base64_block(cls, block: str) -> "SigningRequest":
        lines = [l.strip() for l in block.strip().splitlines()
                 if l.strip() and not l.startswith("-----")]
        return cls.decode(base64.b64decode("".join(lines)))


@dataclass(frozen=True)
class RevocationEntry:
    serial: int
    revoked_at: int  # epoch seconds
    reason: str


@dataclass
class RevocationList:
    entries: list[RevocationEntry] = field(default_factory=list)
    signer_serial: int = 0
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        body = struct.pack(">QI", self.signer_serial, len(self.entries))
        for entry in sorted(self.entries, key=lambda e: e.serial):
            body += struct.pack(">QQ", entry.serial, entry.revoked_at) + _encode_str(entry.reason)
        return body

    def is_revoked(self, serial: int) -> bool:
        return any(e.serial == serial for e in self.entries)


@dataclass(frozen=True)
class Verdict:
    valid: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.valid


class SecureStore:
    """Local private-key store; keys never leave the process unserialized."""

    def __init__(self) -> None:
        self._keys: dict[str, Ed25519PrivateKey] = {}

    def put(self, subject_id: str, key: Ed25519PrivateKey) -> None:
        self._keys[subject_id] = key

    def get(self, subject_id: str) -> Ed25519PrivateKey:
        try:
            return self._keys[subject_id]
        except KeyError:
            raise NotFoundError(f"no private key stored for {subject_id!r}")

    def sign(self, subject_id: str, payload: bytes) -> bytes:
        return self.get(subject_id).sign(payload)


def generate_identity(
    subject_name: str,
    subject_id: str | None = None,
    store: SecureStore | None = None,
    id_evidence: bytes = b"",
) -> tuple[SecureStore, SigningRequest]:
    """Fresh keypair in the secure store plus a pending signing request.

    The request encodes only the public half; the private key stays in the
    store and is never serialized.
    """
    if not subject_name:
        raise IdentityError("subject name must be non-empty")
    if store is None:
        store = SecureStore()
    if subject_id is None:
        subject_id = f"user-{os.urandom(6).hex()}"
    key = Ed25519PrivateKey.generate()
    store.put(subject_id, key)
    public = key.public_key().public_bytes_raw()
    request = SigningRequest(
        request_id=os.urandom(8).hex(),
        subject_name=subject_name,
        subject_id=subject_id,
        public_key=public,
        id_evidence=id_evidence,
    )
    return store, request


def _new_serial() -> int:
    return int.from_bytes(os.urandom(8), "big") >> 1


def make_root(subject_name: str = "root", store: SecureStore | None = None,
              now: datetime | None = None) -> tuple[Certificate, SecureStore]:
    """Self-signed root certificate."""
    store = store or SecureStore()
    now = now or _now()
    key = Ed25519PrivateKey.generate()
    serial = _new_serial()
    subject_id = f"root-{serial:016x}"
    store.put(subject_id, key)
    cert = Certificate(
        serial=serial,
        subject_name=subject_name,
        subject_id=subject_id,
        public_key=key.public_key().public_bytes_raw(),
        role_flags=frozenset({"root", "administrator"}),
        zipcode_scope=None,
        issuer_serial=serial,
        not_before=int(now.timestamp()),
        not_after=int((now + DEFAULT_VALIDITY * 10).timestamp()),
        signature=b"\0" * 64,
    )
    cert = replace(cert, signature=key.sign(cert.signing_bytes()))
    return cert, store


def make_intermediary(
    subject_name: str,
    root_cert: Certificate,
    store: SecureStore,
    official: bool = False,
    administrator: bool = False,
    now: datetime | None = None,
) -> Certificate:
    """Intermediary signed by the root; chain depth 2."""
    now = now or _now()
    key = Ed25519PrivateKey.generate()
    serial = _new_serial()
    subject_id = f"ca-{serial:016x}"
    store.put(subject_id, key)
    flags = {"authenticated"}
    if official:
        flags.add("official_intermediary")
    if administrator:
        flags.add("administrator")
    cert = Certificate(
        serial=serial,
        subject_name=subject_name,
        subject_id=subject_id,
        public_key=key.public_key().public_bytes_raw(),
        role_flags=frozenset(flags),
        zipcode_scope=None,
        issuer_serial=root_cert.serial,
        not_before=int(now.timestamp()),
        not_after=int((now + DEFAULT_VALIDITY * 5).timestamp()),
        signature=b"\0" * 64,
    )
    root_key = store.get(root_cert.subject_id)
    return replace(cert, signature=root_key.sign(cert.signing_bytes()))


def approve(
    request: SigningRequest,
    issuer_cert: Certificate,
    issuer_key: Ed25519PrivateKey,
    approver_cert: Certificate | None = None,
    role_flags: frozenset[str] | set[str] = frozenset({"authenticated"}),
    zipcode_scope: str | None = None,
    validity: timedelta = DEFAULT_VALIDITY,
    now: datetime | None = None,
) -> Certificate:
    """Issue a leaf certificate for a pending request.

    ``issuer_cert`` is the intermediary that signs the leaf; the approval
    authority (administrator or official intermediary) is ``approver_cert``,
    defaulting to the issuer itself.
    """
    authority = approver_cert or issuer_cert
    if not authority.role_flags & {"administrator", "official_intermediary"}:
        raise AuthorizationError(
            f"{authority.subject_id} may not approve signing requests"
        )
    if request.status != "pending":
        raise StateError(f"request {request.request_id} already {request.status}")
    now = now or _now()
    flags = frozenset(role_flags) | {"authenticated"}
    cert = Certificate(
        serial=_new_serial(),
        subject_name=request.subject_name,
        subject_id=request.subject_id,
        public_key=request.public_key,
        role_flags=flags,
        zipcode_scope=zipcode_scope,
        issuer_serial=issuer_cert.serial,
        not_before=int(now.timestamp()),
        not_after=int((now + validity).timestamp()),
        signature=b"\0" * 64,
    )
    cert = replace(cert, signature=issuer_key.sign(cert.signing_bytes()))
    request.status = "approved"
    request.issued_serial = cert.serial
    return cert


def reject(request: SigningRequest, authority: Certificate, reason: str) -> None:
    if "administrator" not in authority.role_flags:
        raise AuthorizationError(f"{authority.subject_id} may not reject requests")
    if request.status != "pending":
        raise StateError(f"request {request.request_id} already {request.status}")
    request.status = "rejected"
    request.reject_reason = reason


def verify_chain(
    chain: CertChain,
    revocations: RevocationList | None = None,
    at: datetime | None = None,
) -> Verdict:
    """Validate a chain: signatures, root self-signature, windows, revocation.

    Checks run in that order and the verdict carries the first failure.
    """
    at = at or _now()
    ts = int(at.timestamp())
    if chain.leaf.issuer_serial != chain.intermediary.serial:
        return Verdict(False, "chain: leaf not issued by intermediary")
    if not chain.leaf.verify_signed_by(chain.intermediary):
        return Verdict(False, "signature: leaf signature invalid")
    if chain.intermediary.issuer_serial != chain.root.serial:
        return Verdict(False, "chain: intermediary not issued by root")
    if not chain.intermediary.verify_signed_by(chain.root):
        return Verdict(False, "signature: intermediary signature invalid")
    if not chain.root.is_root or not chain.root.verify_signed_by(chain.root):
        return Verdict(False, "signature: root not self-signed")
    for label, cert in (("leaf", chain.leaf), ("intermediary", chain.intermediary),
                        ("root", chain.root)):
        if not cert.not_before <= ts <= cert.not_after:
            return Verdict(False, f"validity: {label} outside validity window")
    if revocations is not None:
        for label, cert in (("leaf", chain.leaf), ("intermediary", chain.intermediary),
                            ("root", chain.root)):
            if revocations.is_revoked(cert.serial):
                return Verdict(False, f"revoked: {label} certificate revoked")
    return Verdict(True)


def revoke(
    revocations: RevocationList,
    serial: int,
    authority_cert: Certificate,
    authority_key: Ed25519PrivateKey,
    reason: str,
    known_serials: set[int] | None = None,
    now: datetime | None = None,
) -> RevocationList:
    """Append one revocation (idempotent) and re-sign the list."""
    if "administrator" not in authority_cert.role_flags:
        raise AuthorizationError(f"{authority_cert.subject_id} may not revoke")
    if known_serials is not None and serial not in known_serials:
        raise NotFoundError(f"unknown serial {serial}")
    now = now or _now()
    if not revocations.is_revoked(serial):
        revocations.entries.append(
            RevocationEntry(serial=serial, revoked_at=int(now.timestamp()), reason=reason)
        )
    revocations.signer_serial = authority_cert.serial
    revocations.signature = authority_key.sign(revocations.signing_bytes())
    return revocations


def encode_chain(chain: CertChain) -> bytes:
    """Length-prefixed leaf, intermediary, root encodings."""
    body = b""
    for cert in (chain.leaf, chain.intermediary, chain.root):
        raw = cert.encode()
        body += struct.pack(">H", len(raw)) + raw
    return body


def decode_chain(data: bytes) -> CertChain:
    certs = []
    offset = 0
    for _ in range(3):
        (length,) = struct.unpack_from(">H", data, offset)
        offset += 2
        certs.append(Certificate.decode(data[offset : offset + length]))
        offset += length
    return CertChain(leaf=certs[0], intermediary=certs[1], root=certs[2])


def chain_to_base64_block(chain: CertChain) -> str:
    body = base64.b64encode(encode_chain(chain)).decode()
    lines = [body[i : i + 64] for i in range(0, len(body), 64)]
    return "\n".join(["-----BEGIN GRIDLESS CERTIFICATE CHAIN-----", *lines,
                      "-----END GRIDLESS CERTIFICATE CHAIN-----"])


def chain_from_base64_block(block: str) -> CertChain:
    lines = [l.strip() for l in block.strip().splitlines()
             if l.strip() and not l.startswith("-----")]
    return decode_chain(base64.b64decode("".join(lines)))
