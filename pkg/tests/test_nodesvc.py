"""Node service: onboarding, mesh exchange, moderation, and the HTTP API."""

import pytest
from fastapi.testclient import TestClient

from gridless import identity as pki
from gridless import messaging, transport
from gridless.nodesvc import (
    LocalMeshBus,
    Node,
    NodeConfig,
    bootstrap_admin,
    create_api,
)


@pytest.fixture()
def mesh_town():
    """Admin plus two civilians on one in-process mesh."""
    admin_state = bootstrap_admin()
    bus = LocalMeshBus()
    admin = Node(NodeConfig(node_id=1, name="authority", zipcode="8050"),
                 admin=admin_state)
    alice = Node(NodeConfig(node_id=2, name="alice", zipcode="8050"),
                 trust_root=admin_state.root_cert)
    bob = Node(NodeConfig(node_id=3, name="bob", zipcode="8050"),
               trust_root=admin_state.root_cert)
    for node in (admin, alice, bob):
        bus.attach(node)
    return admin, alice, bob


def onboard(admin: Node, node: Node, **kwargs) -> None:
    request = node.create_identity()
    request_id = admin.submit_request(request.to_base64_block())
    chain = admin.approve_request(request_id, **kwargs)
    node.import_chain(pki.chain_to_base64_block(chain))


# ---------------------------------------------------------------- onboarding
def test_identity_lifecycle(mesh_town):
    admin, alice, _ = mesh_town
    assert alice.identity_status() == "none"
    request = alice.create_identity("Alice")
    assert alice.identity_status() == "pending"
    request_id = admin.submit_request(request.to_base64_block())
    chain = admin.approve_request(request_id, zipcode="8050")
    alice.import_chain(pki.chain_to_base64_block(chain))
    assert alice.identity_status() == "active"


def test_import_rejects_foreign_chain(mesh_town):
    admin, alice, bob = mesh_town
    alice.create_identity()
    request = bob.create_identity()
    request_id = admin.submit_request(request.to_base64_block())
    chain = admin.approve_request(request_id)
    with pytest.raises(pki.IdentityError):
        alice.import_chain(pki.chain_to_base64_block(chain))


def test_non_admin_cannot_approve(mesh_town):
    _, alice, bob = mesh_town
    request = bob.create_identity()
    alice.submit_request(request.to_base64_block())
    with pytest.raises(pki.AuthorizationError):
        alice.approve_request(request.request_id)


def test_reject_request(mesh_town):
    admin, alice, _ = mesh_town
    request = alice.create_identity()
    request_id = admin.submit_request(request.to_base64_block())
    admin.reject_request(request_id, "insufficient evidence")
    assert admin.pending_requests[request_id].status == "rejected"


# ---------------------------------------------------------------- messaging
def test_message_reaches_peers_with_lazy_chain_fetch(mesh_town):
    admin, alice, bob = mesh_town
    onboard(admin, alice)
    out = alice.post_message("water point at the school",
                             messaging.Scope.community("8050"))
    assert out["path"] == "mesh"
    # Bob had never seen alice's certificate: it was fetched over the mesh.
    visible = bob.view("8050").ordered_visible()
    assert [m.content for m in visible] == ["water point at the school"]
    assert messaging.validate(visible[0], bob.trust_root, bob.revocations).authentic


def test_unauthenticated_node_is_read_only(mesh_town):
    admin, alice, bob = mesh_town
    onboard(admin, alice)
    alice.post_message("hello", messaging.Scope.community("8050"))
    assert bob.view("8050").ordered_visible()  # reading works
    with pytest.raises(pki.AuthorizationError):
        bob.post_message("reply", messaging.Scope.community("8050"))


def test_revoked_sender_messages_quarantined(mesh_town):
    admin, alice, bob = mesh_town
    onboard(admin, alice)
    admin.revoke_serial(alice.own_chain.leaf.serial, "compromised")
    bob.revocations = admin.revocations  # revocation list distribution
    alice.post_message("should not pass", messaging.Scope.community("8050"))
    assert not bob.view("8050").ordered_visible()
    assert bob.view("8050").quarantine


def test_moderation_propagates(mesh_town):
    admin, alice, bob = mesh_town
    onboard(admin, alice)
    alice.post_message("rumor", messaging.Scope.community("8050"))
    target = bob.view("8050").ordered_visible()[0].message_id
    admin.moderate("hide", target, "8050")
    assert not bob.view("8050").ordered_visible()
    assert not alice.view("8050").ordered_visible()


def test_unauthorized_remote_moderation_ignored(mesh_town):
    admin, alice, bob = mesh_town
    onboard(admin, alice)
    onboard(admin, bob)
    alice.post_message("stays", messaging.Scope.community("8050"))
    target = bob.view("8050").ordered_visible()[0].message_id
    with pytest.raises(pki.AuthorizationError):
        bob.moderate("hide", target, "8050")  # bob is not a moderator
    assert alice.view("8050").ordered_visible()


def test_moderator_scoped_by_zipcode(mesh_town):
    admin, alice, bob = mesh_town
    onboard(admin, alice, roles={"authenticated", "moderator"}, zipcode="8001")
    onboard(admin, bob)
    bob.post_message("in 8050", messaging.Scope.community("8050"))
    target = alice.view("8050").ordered_visible()[0].message_id
    with pytest.raises(pki.AuthorizationError):
        alice.moderate("hide", target, "8050")


def test_nearby_tracks_heard_nodes(mesh_town):
    admin, alice, bob = mesh_town
    onboard(admin, alice)
    alice.post_message("ping", messaging.Scope.community("8050"))
    heard_by_bob = {n["node_id"] for n in bob.nearby()}
    assert 2 in heard_by_bob


def test_queued_when_no_transport():
    admin_state = bootstrap_admin()
    lonely = Node(NodeConfig(node_id=9, name="solo"), admin=admin_state)
    # no bus attached and no cellular → accepted messages are queued
    out = lonely.post_message("anyone?", messaging.Scope.community("8050"))
    assert out["queued"] is True
    assert len(lonely.selector.queue) == 1


def test_cellular_preferred_when_available():
    admin_state = bootstrap_admin()
    sent_via_relay = []
    node = Node(
        NodeConfig(node_id=9, name="uplink"),
        admin=admin_state,
        relay_client=lambda payload: sent_via_relay.append(payload) or True,
        cellular_probe=transport.ScriptedTimeline([(0.0, True)]),
    )
    LocalMeshBus().attach(node)
    out = node.post_message("via cell", messaging.Scope.community("8050"))
    assert out["path"] == "cellular"
    assert len(sent_via_relay) == 1


# ---------------------------------------------------------------- HTTP API
@pytest.fixture()
def clients(mesh_town):
    return tuple(TestClient(create_api(node)) for node in mesh_town)


def test_api_status_and_events(clients):
    admin_api, alice_api, _ = clients
    status = admin_api.get("/api/status").json()
    assert status["identity"] == "active" and status["name"] == "authority"
    assert alice_api.get("/api/status").json()["identity"] == "none"
    events = admin_api.get("/api/events").json()
    assert events["cursor"] >= 1  # the admin's own onboarding is recorded


def test_api_full_signup_and_chat_flow(clients, mesh_town):
    admin_api, alice_api, bob_api = clients
    # Alice requests an identity, the admin approves, alice imports.
    block = alice_api.post("/api/identity/request",
                           json={"display_name": "Alice"}).json()["block"]
    request_id = admin_api.post("/api/identity/submit",
                                json={"block": block}).json()["request_id"]
    listed = admin_api.get("/api/identity/requests").json()["requests"]
    assert any(r["request_id"] == request_id for r in listed)
    chain_block = admin_api.post(
        "/api/identity/approve",
        json={"request_id": request_id, "zipcode": "8050"},
    ).json()["chain_block"]
    alice_api.post("/api/identity/import", json={"chain_block": chain_block})
    assert alice_api.get("/api/identity").json()["status"] == "active"

    # Alice posts; bob (unauthenticated) reads it with an authentic verdict.
    posted = alice_api.post(
        "/api/messages", json={"zipcode": "8050", "content": "supplies at gym"}
    ).json()
    messages = bob_api.get("/api/communities/8050/messages").json()["messages"]
    assert len(messages) == 1
    assert messages[0]["message_id"] == posted["message_id"]
    assert messages[0]["verdict"]["authentic"] is True
    assert messages[0]["sender_name"] == "Alice"

    # Message detail and chain inspection work from bob's side.
    detail = bob_api.get(f"/api/messages/{posted['message_id']}").json()
    assert detail["content"] == "supplies at gym"
    chain = bob_api.get(
        f"/api/identity/chain/{messages[0]['sender_fingerprint']}").json()
    assert chain["root"]["fingerprint"]

    # Bob cannot post without an identity.
    refused = bob_api.post("/api/messages",
                           json={"zipcode": "8050", "content": "nope"})
    assert refused.status_code == 403

    # The admin hides the message; it disappears for everyone.
    admin_api.post("/api/moderation", json={
        "action": "hide", "message_id": posted["message_id"], "zipcode": "8050",
    })
    assert bob_api.get("/api/communities/8050/messages").json()["messages"] == []
    assert alice_api.get("/api/communities/8050/messages").json()["messages"] == []


def test_api_events_cursor_pagination(clients):
    admin_api, _, _ = clients
    first = admin_api.get("/api/events").json()
    again = admin_api.get(f"/api/events?since={first['cursor']}").json()
    assert again["events"] == []


def test_api_unknown_message_404(clients):
    _, _, bob_api = clients
    assert bob_api.get(f"/api/messages/{'00' * 16}").status_code == 404


def test_api_revoke_requires_authority(clients):
    _, alice_api, _ = clients
    refused = alice_api.post("/api/identity/revoke",
                             json={"serial": 1, "reason": "x"})
    assert refused.status_code == 403
