"""The long-running node: identity + messaging over a transport selector.

A ``Node`` owns all mutable state; every mutation goes through a single
lock (the serialized command loop), so many API handlers can drive one
node safely. The "radio" is an in-process mesh bus that bridges several
nodes in one process; a real radio driver could be slotted in behind the
same ``send_packets`` boundary.
"""

from __future__ import annotations

import itertools
import json
import os
import threading
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from . import identity as pki
from . import messaging, transport
from .mesh import BROADCAST, DEFAULT_HOP_LIMIT, MeshPacket, PacketKind

NEARBY_WINDOW_S = 600.0


@dataclass
class NodeConfig:
    node_id: int
    name: str = "node"
    zipcode: str = "8050"
    band: str = "EU868"
    preset: str = "LongFast"
    hop_limit: int = DEFAULT_HOP_LIMIT
    relay_url: str | None = None
    api_port: int = 8400

    @classmethod
    def load(cls, path: str | Path) -> "NodeConfig":
        path = Path(path)
        if path.suffix == ".json":
            data = json.loads(path.read_text())
        else:
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            data = tomllib.loads(path.read_text())
        return cls(**data)


class LocalMeshBus:
    """In-process radio: frames from one node reach every attached peer.

    An optional ``loss`` callback (origin_id, dest_id, packet) -> bool can
    drop frames to emulate a lossy channel.
    """

    def __init__(self, loss: Callable[[int, int, MeshPacket], bool] | None = None):
        self.nodes: dict[int, "Node"] = {}
        self.loss = loss

    def attach(self, node: "Node") -> None:
        self.nodes[node.config.node_id] = node
        node.bus = self
        node.selector.status.mesh_available = True

    def send(self, origin_id: int, packets: list[MeshPacket]) -> None:
        for dest_id, dest in sorted(self.nodes.items()):
            if dest_id == origin_id:
                continue
            for packet in packets:
                if self.loss is not None and self.loss(origin_id, dest_id, packet):
                    continue
                dest.on_packet(origin_id, packet)


@dataclass
class AdminState:
    """Certificate authority material held by an administrator node."""

    root_cert: pki.Certificate
    civilian: pki.Certificate
    official: pki.Certificate
    store: pki.SecureStore
    admin_chain: pki.CertChain | None = None


def bootstrap_admin(name: str = "admin") -> AdminState:
    """Create root + civilian and official intermediaries in one store."""
    root_cert, store = pki.make_root()
    civilian = pki.make_intermediary("civilian authority", root_cert, store, administrator=True)
    official = pki.make_intermediary("official authority", root_cert, store,
                                     official=True, administrator=True)
    return AdminState(root_cert=root_cert, civilian=civilian, official=official, store=store)


class Node:
    def __init__(
        self,
        config: NodeConfig,
        trust_root: pki.Certificate | None = None,
        admin: AdminState | None = None,
        relay_client: Callable[[bytes], bool] | None = None,
        cellular_probe: Callable[[float], bool] | None = None,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.config = config
        self.lock = threading.RLock()
        self.clock = clock
        self.store = pki.SecureStore()
        self.admin = admin
        self.trust_root = trust_root or (admin.root_cert if admin else None)
        self.revocations = pki.RevocationList()
        self.own_request: pki.SigningRequest | None = None
        self.own_chain: pki.CertChain | None = None
        self.pending_requests: dict[str, pki.SigningRequest] = {}
        self.issued: dict[int, pki.Certificate] = {}
        self.views: dict[str, messaging.CommunityView] = {}
        self.direct: list[messaging.Message] = []
        self.known_chains: dict[bytes, pki.CertChain] = {}
        self.heard: dict[int, float] = {}
        self.events: list[dict] = []
        self.bus: LocalMeshBus | None = None
        self.relay_client = relay_client or (lambda payload: False)
        # Mesh counts as available only once a radio (bus) is attached.
        self.selector = transport.TransportSelector(
            probe=cellular_probe or (lambda now: False),
            mesh_available=False,
        )
        self._packet_ids = itertools.count(config.node_id * 1_000_000 + 1)
        self._seen_packets: set[int] = set()
        self._partial: dict[bytes, dict] = {}  # tag -> {kind, frames}
        self._awaiting_cert: dict[bytes, list[messaging.Message]] = {}
        self._awaiting_moderation: dict[bytes, list[messaging.ModerationAction]] = {}
        if admin is not None:
            self._become_admin(admin)

    # -- events ----------------------------------------------------------
    def _event(self, kind: str, **data) -> None:
        self.events.append({"seq": len(self.events) + 1, "kind": kind,
                            "time": datetime.now(timezone.utc).isoformat(), **data})

    def events_since(self, cursor: int) -> list[dict]:
        with self.lock:
            return [e for e in self.events if e["seq"] > cursor]

    # -- identity ----------------------------------------------------------
    def _become_admin(self, admin: AdminState) -> None:
        self.store = admin.store
        _, request = pki.generate_identity(self.config.name, store=self.store)
        cert = pki.approve(
            request,
            issuer_cert=admin.civilian,
            issuer_key=admin.store.get(admin.civilian.subject_id),
            role_flags={"authenticated", "administrator"},
        )
        self.own_chain = pki.CertChain(leaf=cert, intermediary=admin.civilian,
                                       root=admin.root_cert)
        admin.admin_chain = self.own_chain
        self.issued[cert.serial] = cert
        self.known_chains[cert.fingerprint()] = self.own_chain
        self._event("identity", status="active")

    def identity_status(self) -> str:
        if self.own_chain is not None:
            return "active"
        if self.own_request is not None:
            return "pending"
        return "none"

    def create_identity(self, display_name: str | None = None) -> pki.SigningRequest:
        with self.lock:
            if self.own_chain is not None:
                raise pki.StateError("identity already active")
            if self.own_request is None:
                self.store, self.own_request = pki.generate_identity(
                    display_name or self.config.name
                )
                self._event("identity", status="pending")
            return self.own_request

    def submit_request(self, block: str) -> str:
        """Accept a signing request (base64 block) for admin review."""
        request = pki.SigningRequest.from_base64_block(block)
        with self.lock:
            if request.request_id not in self.pending_requests:
                self.pending_requests[request.request_id] = request
                self._event("request", request_id=request.request_id,
                            subject=request.subject_name)
        return request.request_id

    def approve_request(
        self,
        request_id: str,
        roles: set[str] | None = None,
        zipcode: str | None = None,
        official: bool = False,
    ) -> pki.CertChain:
        with self.lock:
            if self.admin is None:
                raise pki.AuthorizationError("this node holds no issuing authority")
            request = self.pending_requests.get(request_id)
            if request is None:
                raise pki.NotFoundError(f"no pending request {request_id}")
            issuer = self.admin.official if official else self.admin.civilian
            cert = pki.approve(
                request,
                issuer_cert=issuer,
                issuer_key=self.admin.store.get(issuer.subject_id),
                role_flags=roles or {"authenticated"},
                zipcode_scope=zipcode,
            )
            self.issued[cert.serial] = cert
            chain = pki.CertChain(leaf=cert, intermediary=issuer, root=self.admin.root_cert)
            self.known_chains[cert.fingerprint()] = chain
            self._event("approval", request_id=request_id, serial=str(cert.serial))
            return chain

    def reject_request(self, request_id: str, reason: str) -> None:
        with self.lock:
            if self.admin is None or self.own_chain is None:
                raise pki.AuthorizationError("this node holds no issuing authority")
            request = self.pending_requests.get(request_id)
            if request is None:
                raise pki.NotFoundError(f"no pending request {request_id}")
            pki.reject(request, self.own_chain.leaf, reason)
            self._event("rejection", request_id=request_id, reason=reason)

    def revoke_serial(self, serial: int, reason: str) -> None:
        with self.lock:
            if self.admin is None or self.own_chain is None:
                raise pki.AuthorizationError("this node holds no revocation authority")
            pki.revoke(
                self.revocations,
                serial,
                self.own_chain.leaf,
                self.store.get(self.own_chain.leaf.subject_id),
                reason,
                known_serials=set(self.issued) | {self.admin.civilian.serial,
                                                  self.admin.official.serial},
            )
            self._event("revocation", serial=str(serial), reason=reason)

    def import_chain(self, block: str) -> None:
        """Install an approved certificate chain as this node's identity."""
        chain = pki.chain_from_base64_block(block)
        with self.lock:
            if self.own_request is None:
                raise pki.StateError("no identity request outstanding")
            if chain.leaf.public_key != self.own_request.public_key:
                raise pki.IdentityError("chain does not match the local key")
            verdict = pki.verify_chain(chain, self.revocations)
            if not verdict:
                raise pki.IdentityError(f"imported chain invalid: {verdict.reason}")
            self.own_chain = chain
            if self.trust_root is None:
                self.trust_root = chain.root
            self.known_chains[chain.leaf.fingerprint()] = chain
            self._event("identity", status="active")

    # -- messaging ---------------------------------------------------------
    def view(self, zipcode: str) -> messaging.CommunityView:
        if zipcode not in self.views:
            self.views[zipcode] = messaging.CommunityView(zipcode=zipcode)
        return self.views[zipcode]

    def post_message(self, content: str, scope: messaging.Scope,
                     official: bool = False) -> dict:
        with self.lock:
            if self.own_chain is None:
                raise pki.AuthorizationError("read-only: no active identity")
            key = self.store.get(self.own_chain.leaf.subject_id)
            message = messaging.compose_and_sign(
                content, scope, self.own_chain, key,
                official=official, revocations=self.revocations,
            )
            verdict = messaging.validate(message, self.trust_root, self.revocations)
            if scope.kind == "community":
                messaging.ingest(self.view(scope.target), message, verdict)
            else:
                self.direct.append(message)
            self._event("message", message_id=message.message_id.hex(),
                        zipcode=scope.target if scope.kind == "community" else None)
            path = self._send_bytes(message)
            return {"message_id": message.message_id.hex(),
                    "path": path.value if path else "queued",
                    "queued": path is None}

    def _send_bytes(self, message: messaging.Message) -> transport.Path | None:
        now = self.clock()
        path = self.selector.send(message.encode(), now)
        if path is transport.Path.CELLULAR:
            if not self.relay_client(message.encode()):
                # relay refused after probe said up; fall back to mesh
                path = transport.Path.MESH
        if path is transport.Path.MESH:
            self._send_frames(messaging.to_mesh_frames(message), PacketKind.CHAT_MESSAGE)
        return path

    def _send_frames(self, frames: list[bytes], kind: PacketKind) -> None:
        if self.bus is None:
            return
        packets = [
            MeshPacket(
                packet_id=next(self._packet_ids),
                origin=self.config.node_id,
                destination=BROADCAST,
                hop_limit=self.config.hop_limit,
                channel=self.config.zipcode,
                payload=frame,
                kind=kind,
            )
            for frame in frames
        ]
        self.bus.send(self.config.node_id, packets)

    # -- receive path ------------------------------------------------------
    def on_packet(self, origin_id: int, packet: MeshPacket) -> None:
        with self.lock:
            self.heard[origin_id] = self.clock()
            if packet.packet_id in self._seen_packets:
                return
            self._seen_packets.add(packet.packet_id)
            if packet.kind is PacketKind.CERT_REQUEST:
                self._answer_cert_request(packet.payload)
                return
            if packet.kind in (PacketKind.CHAT_MESSAGE, PacketKind.CERT_RESPONSE,
                               PacketKind.MODERATION):
                self._collect_fragment(packet.kind, packet.payload)

    def _collect_fragment(self, kind: PacketKind, frame: bytes) -> None:
        tag, _, count = messaging.frame_tag(frame)
        slot = self._partial.setdefault(tag, {"kind": kind, "frames": []})
        slot["frames"].append(frame)
        try:
            _, blob = messaging.reassemble_blob(slot["frames"])
        except messaging.ReassemblyError:
            return  # still missing fragments
        del self._partial[tag]
        if kind is PacketKind.CHAT_MESSAGE:
            self._handle_message_blob(blob)
        elif kind is PacketKind.CERT_RESPONSE:
            self._handle_cert_response(blob)
        elif kind is PacketKind.MODERATION:
            self._handle_moderation_blob(blob)

    def _handle_message_blob(self, blob: bytes) -> None:
        message = messaging.Message.decode(blob)
        chain = self.known_chains.get(message.sender_fingerprint)
        if chain is None:
            self._awaiting_cert.setdefault(message.sender_fingerprint, []).append(message)
            self._send_frames([b"\x00" + message.sender_fingerprint], PacketKind.CERT_REQUEST)
            return
        self._ingest_remote(message, chain)

    def _ingest_remote(self, message: messaging.Message, chain: pki.CertChain) -> None:
        message = replace(message, sender_chain=chain)
        verdict = messaging.validate(message, self.trust_root, self.revocations)
        if message.scope.kind == "community":
            messaging.ingest(self.view(message.scope.target), message, verdict)
        elif verdict:
            self.direct.append(message)
        self._event("message", message_id=message.message_id.hex(),
                    zipcode=message.scope.target if message.scope.kind == "community" else None,
                    authentic=bool(verdict))

    def _answer_cert_request(self, payload: bytes) -> None:
        fingerprint = payload[1:17]
        chain = self.known_chains.get(fingerprint)
        if chain is None and self.own_chain is not None \
                and self.own_chain.leaf.fingerprint() == fingerprint:
            chain = self.own_chain
        if chain is None:
            return
        blob = pki.encode_chain(chain)
        self._send_frames(messaging.fragment_blob(fingerprint, blob), PacketKind.CERT_RESPONSE)

    def _handle_cert_response(self, blob: bytes) -> None:
        chain = pki.decode_chain(blob)
        fingerprint = chain.leaf.fingerprint()
        self.known_chains.setdefault(fingerprint, chain)
        for message in self._awaiting_cert.pop(fingerprint, []):
            self._ingest_remote(message, chain)
        for action in self._awaiting_moderation.pop(fingerprint, []):
            self._apply_remote_moderation(action, chain)

    # -- moderation ----------------------------------------------------------
    def moderate(self, action_name: str, target, zipcode: str,
                 rate: messaging.RateLimit | None = None) -> None:
        with self.lock:
            if self.own_chain is None:
                raise pki.AuthorizationError("read-only: no active identity")
            action = messaging.ModerationAction(
                actor_fingerprint=self.own_chain.leaf.fingerprint(),
                target=target,
                action=action_name,
                zipcode=zipcode,
                rate_limit=rate,
                actor_chain=self.own_chain,
            )
            action = messaging.sign_moderation(
                action, self.store.get(self.own_chain.leaf.subject_id)
            )
            messaging.moderate(self.view(zipcode), action, self.trust_root,
                               self.revocations)
            self._event("moderation", action=action_name, zipcode=zipcode)
            tag = os.urandom(16)
            self._send_frames(messaging.fragment_blob(tag, action.encode()),
                              PacketKind.MODERATION)

    def _handle_moderation_blob(self, blob: bytes) -> None:
        action = messaging.ModerationAction.decode(blob)
        chain = self.known_chains.get(action.actor_fingerprint)
        if chain is None:
            self._awaiting_moderation.setdefault(action.actor_fingerprint, []).append(action)
            self._send_frames([b"\x00" + action.actor_fingerprint], PacketKind.CERT_REQUEST)
            return
        self._apply_remote_moderation(action, chain)

    def _apply_remote_moderation(self, action: messaging.ModerationAction,
                                 chain: pki.CertChain) -> None:
        action = replace(action, actor_chain=chain)
        try:
            messaging.moderate(self.view(action.zipcode), action, self.trust_root,
                               self.revocations)
            self._event("moderation", action=action.action, zipcode=action.zipcode)
        except (pki.AuthorizationError, messaging.MessageError):
            pass  # unauthorized remote action is simply ignored

    # -- status ---------------------------------------------------------------
    def status(self) -> dict:
        with self.lock:
            st = self.selector.refresh(self.clock())
            return {
                "node_id": self.config.node_id,
                "name": self.config.name,
                "zipcode": self.config.zipcode,
                "identity": self.identity_status(),
                "mesh_available": self.bus is not None and st.mesh_available,
                "cellular_available": st.cellular_available,
                "active_path": st.active_path.value,
                "queued": len(self.selector.queue),
            }

    def nearby(self, window_s: float = NEARBY_WINDOW_S) -> list[dict]:
        with self.lock:
            now = self.clock()
            return [
                {"node_id": node_id, "last_heard_s": round(now - t, 3)}
                for node_id, t in sorted(self.heard.items())
                if now - t <= window_s
            ]


# --------------------------------------------------------------------------
def _message_json(node: Node, message: messaging.Message, verdict=None) -> dict:
    chain = message.sender_chain or node.known_chains.get(message.sender_fingerprint)
    body = {
        "message_id": message.message_id.hex(),
        "date_ms": message.date_ms,
        "date": datetime.fromtimestamp(message.date_ms / 1000, timezone.utc).isoformat(),
        "content": message.content,
        "scope": {"kind": message.scope.kind, "target": message.scope.target},
        "official": message.official,
        "sender_fingerprint": message.sender_fingerprint.hex(),
        "sender_name": chain.leaf.subject_name if chain else None,
        "sender_roles": sorted(chain.leaf.role_flags) if chain else [],
    }
    if verdict is not None:
        body["verdict"] = {
            "authentic": verdict.authentic,
            "failed_step": verdict.failed_step,
            "reason": verdict.reason,
        }
    return body


def create_api(node: Node, webui_dir: str | Path | None = None):
    """JSON-over-HTTP control surface for one node.

    Every endpoint is a thin translation layer over ``Node`` methods; no
    domain logic lives here.
    """
    from fastapi import Body, FastAPI, HTTPException
    from fastapi.middleware.cors import CORSMiddleware

    app = FastAPI(title="gridless node", version="1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def _fail(exc: Exception) -> HTTPException:
        status = 403 if isinstance(exc, pki.AuthorizationError) else (
            404 if isinstance(exc, pki.NotFoundError) else 400)
        return HTTPException(status_code=status, detail=str(exc))

    @app.get("/api/status")
    def status():
        return node.status()

    @app.get("/api/nearby")
    def nearby():
        return {"nodes": node.nearby()}

    @app.get("/api/events")
    def events(since: int = 0):
        items = node.events_since(since)
        cursor = items[-1]["seq"] if items else since
        return {"events": items, "cursor": cursor}

    @app.post("/api/identity/request")
    def identity_request(body: dict = Body(default={})):
        try:
            request = node.create_identity(body.get("display_name"))
        except pki.IdentityError as exc:
            raise _fail(exc)
        return {"request_id": request.request_id,
                "block": request.to_base64_block(),
                "status": request.status}

    @app.get("/api/identity")
    def identity():
        info = {"status": node.identity_status()}
        if node.own_chain is not None:
            leaf = node.own_chain.leaf
            info.update(
                name=leaf.subject_name,
                fingerprint=leaf.fingerprint().hex(),
                roles=sorted(leaf.role_flags),
                zipcode_scope=leaf.zipcode_scope,
                official_lineage="official_intermediary"
                in node.own_chain.intermediary.role_flags,
            )
        elif node.own_request is not None:
            info["request_id"] = node.own_request.request_id
        return info

    @app.post("/api/identity/submit")
    def identity_submit(body: dict):
        try:
            request_id = node.submit_request(body["block"])
        except Exception as exc:
            raise _fail(exc)
        return {"request_id": request_id}

    @app.get("/api/identity/requests")
    def identity_requests():
        with node.lock:
            return {
                "requests": [
                    {"request_id": r.request_id, "subject": r.subject_name,
                     "status": r.status}
                    for r in node.pending_requests.values()
                ]
            }

    @app.post("/api/identity/approve")
    def identity_approve(body: dict):
        try:
            chain = node.approve_request(
                body["request_id"],
                roles=set(body.get("roles", ["authenticated"])),
                zipcode=body.get("zipcode"),
                official=bool(body.get("official", False)),
            )
        except pki.IdentityError as exc:
            raise _fail(exc)
        return {"chain_block": pki.chain_to_base64_block(chain),
                "serial": str(chain.leaf.serial)}

    @app.post("/api/identity/reject")
    def identity_reject(body: dict):
        try:
            node.reject_request(body["request_id"], body.get("reason", ""))
        except pki.IdentityError as exc:
            raise _fail(exc)
        return {"ok": True}

    @app.post("/api/identity/revoke")
    def identity_revoke(body: dict):
        try:
            node.revoke_serial(int(body["serial"]), body.get("reason", ""))
        except pki.IdentityError as exc:
            raise _fail(exc)
        return {"ok": True}

    @app.post("/api/identity/import")
    def identity_import(body: dict):
        try:
            node.import_chain(body["chain_block"])
        except pki.IdentityError as exc:
            raise _fail(exc)
        return {"status": node.identity_status()}

    @app.get("/api/identity/chain/{fingerprint}")
    def identity_chain(fingerprint: str):
        chain = node.known_chains.get(bytes.fromhex(fingerprint))
        if chain is None:
            raise HTTPException(status_code=404, detail="unknown fingerprint")
        return {
            "leaf": {"name": chain.leaf.subject_name, "serial": str(chain.leaf.serial),
                     "roles": sorted(chain.leaf.role_flags),
                     "zipcode_scope": chain.leaf.zipcode_scope},
            "intermediary": {"name": chain.intermediary.subject_name,
                             "roles": sorted(chain.intermediary.role_flags)},
            "root": {"name": chain.root.subject_name,
                     "fingerprint": chain.root.fingerprint().hex()},
        }

    @app.post("/api/messages")
    def post_message(body: dict):
        scope = (messaging.Scope.community(body["zipcode"])
                 if "zipcode" in body else messaging.Scope.direct(body["to"]))
        try:
            return node.post_message(body["content"], scope,
                                     official=bool(body.get("official", False)))
        except (pki.IdentityError, messaging.MessageError) as exc:
            raise _fail(exc)

    @app.get("/api/communities/{zipcode}/messages")
    def community_messages(zipcode: str, include_quarantine: bool = False):
        with node.lock:
            view = node.view(zipcode)
            out = {
                "zipcode": zipcode,
                "messages": [
                    {**_message_json(node, m,
                                     messaging.validate(m, node.trust_root,
                                                        node.revocations)),
                     "flagged": m.message_id in view.flagged}
                    for m in view.ordered_visible()
                ],
            }
            if include_quarantine:
                out["quarantine"] = [
                    _message_json(node, m, v) for m, v in view.quarantine
                ]
            return out

    @app.get("/api/messages/{message_id}")
    def message_detail(message_id: str):
        wanted = bytes.fromhex(message_id)
        with node.lock:
            for view in node.views.values():
                for m in view.visible:
                    if m.message_id == wanted:
                        verdict = messaging.validate(m, node.trust_root, node.revocations)
                        return _message_json(node, m, verdict)
        raise HTTPException(status_code=404, detail="unknown message")

    @app.post("/api/moderation")
    def moderation(body: dict):
        target = (bytes.fromhex(body["message_id"]) if "message_id" in body
                  else body["user_id"])
        rate = None
        if body.get("rate_limit"):
            rate = messaging.RateLimit(
                window_s=int(body["rate_limit"]["window_s"]),
                max_messages=int(body["rate_limit"]["max_messages"]),
            )
        try:
            node.moderate(body["action"], target, body["zipcode"], rate)
        except (pki.IdentityError, messaging.MessageError) as exc:
            raise _fail(exc)
        return {"ok": True}

    if webui_dir is not None and Path(webui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(webui_dir), html=True), name="webui")

    return app
