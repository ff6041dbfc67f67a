"""Signed messages: validation steps, fragmentation, community views, moderation."""

from dataclasses import replace
from datetime import datetime, timedelta, timezone
from random import Random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridless import identity as pki
from gridless import mesh, messaging

NOW = datetime.now(timezone.utc)
SCOPE = messaging.Scope.community("8050")


@pytest.fixture(scope="module")
def sender(authority):
    chain, store = authority.issue("sender")
    return chain, store.get(chain.leaf.subject_id)


def compose(sender, content="hello", scope=SCOPE, **kwargs):
    chain, key = sender
    return messaging.compose_and_sign(content, scope, chain, key, **kwargs)


# ---------------------------------------------------------------- validation
def test_valid_message_passes_all_steps(authority, sender):
    verdict = messaging.validate(compose(sender), authority.root)
    assert verdict.authentic and verdict.failed_step is None


def test_unauthenticated_cannot_post():
    key = pki.Ed25519PrivateKey.generate()
    with pytest.raises(pki.AuthorizationError):
        messaging.compose_and_sign("hi", SCOPE, None, key)


def test_content_size_limit(sender):
    compose(sender, content="x" * messaging.MAX_CONTENT_BYTES)
    with pytest.raises(messaging.SizeError):
        compose(sender, content="x" * (messaging.MAX_CONTENT_BYTES + 1))


def test_tampered_content_fails_step_one(authority, sender):
    message = replace(compose(sender), content="altered")
    verdict = messaging.validate(message, authority.root)
    assert not verdict and verdict.failed_step == 1


def test_wrong_fingerprint_fails_step_two(authority, sender):
    message = compose(sender)
    # Re-sign the altered fingerprint variant so step 1 still passes.
    chain, key = sender
    message = replace(message, sender_fingerprint=bytes(16))
    message = replace(message, signature=key.sign(message.signing_bytes()))
    verdict = messaging.validate(message, authority.root)
    assert not verdict and verdict.failed_step == 2


def test_expired_leaf_fails_step_two(authority):
    chain, store = authority.issue("shortlived", validity=timedelta(days=1))
    message = messaging.compose_and_sign(
        "hi", SCOPE, chain, store.get(chain.leaf.subject_id))
    verdict = messaging.validate(message, authority.root, at=NOW + timedelta(days=3))
    assert not verdict and verdict.failed_step == 2


def test_foreign_root_fails_step_three(sender):
    other_root, _ = pki.make_root("imposter")
    verdict = messaging.validate(compose(sender), other_root)
    assert not verdict and verdict.failed_step == 3


def test_revoked_sender_fails_step_three(authority):
    chain, store = authority.issue("soon-revoked")
    message = messaging.compose_and_sign("hi", SCOPE, chain,
                                         store.get(chain.leaf.subject_id))
    revocations = pki.RevocationList()
    pki.revoke(revocations, chain.leaf.serial, authority.civilian,
               authority.store.get(authority.civilian.subject_id), "banned")
    verdict = messaging.validate(message, authority.root, revocations)
    assert not verdict and verdict.failed_step == 3


def test_official_requires_official_lineage(authority):
    civilian_chain, civ_store = authority.issue("civilian")
    with pytest.raises(pki.AuthorizationError):
        messaging.compose_and_sign("notice", SCOPE, civilian_chain,
                                   civ_store.get(civilian_chain.leaf.subject_id),
                                   official=True)
    official_chain, off_store = authority.issue("officer", official=True)
    message = messaging.compose_and_sign(
        "notice", SCOPE, official_chain,
        off_store.get(official_chain.leaf.subject_id), official=True)
    assert messaging.validate(message, authority.root).authentic


def test_official_flag_flipped_after_signing_fails(authority, sender):
    # A civilian message with the official bit forced on after signing must
    # fail (the bit is inside the signed bytes → step 1).
    message = replace(compose(sender), official=True)
    verdict = messaging.validate(message, authority.root)
    assert not verdict and verdict.failed_step == 1


def test_wire_roundtrip_drops_local_chain(sender):
    message = compose(sender)
    restored = messaging.Message.decode(message.encode())
    assert restored.sender_chain is None
    assert restored.message_id == message.message_id
    assert restored.content == message.content
    assert restored.scope == message.scope


# ---------------------------------------------------------------- fragmentation
@given(size=st.integers(0, 2100))
@settings(max_examples=60)
def test_fragment_roundtrip_sizes(size):
    tag = bytes(range(16))
    blob = bytes(i % 251 for i in range(size))
    frames = fragments = messaging.fragment_blob(tag, blob)
    assert all(len(f) <= mesh.MAX_PAYLOAD_BYTES for f in frames)
    got_tag, got = messaging.reassemble_blob(fragments)
    assert (got_tag, got) == (tag, blob)


def test_reassembly_order_insensitive_with_duplicates(sender):
    message = compose(sender, content="y" * 1500)
    frames = messaging.to_mesh_frames(message)
    assert len(frames) > 1
    rng = Random(5)
    shuffled = frames + rng.sample(frames, max(1, len(frames) // 5))
    rng.shuffle(shuffled)
    assert messaging.from_mesh_frames(shuffled).encode() == message.encode()


def test_missing_fragment_detected(sender):
    frames = messaging.to_mesh_frames(compose(sender, content="z" * 1500))
    with pytest.raises(messaging.ReassemblyError):
        messaging.from_mesh_frames(frames[:-1])


def test_conflicting_duplicate_detected(sender):
    frames = messaging.to_mesh_frames(compose(sender, content="z" * 1500))
    corrupt = frames[0][:-1] + bytes([frames[0][-1] ^ 0xFF])
    with pytest.raises(messaging.ReassemblyError):
        messaging.reassemble_blob(frames + [corrupt])


def test_mixed_blobs_rejected(sender):
    a = messaging.to_mesh_frames(compose(sender, content="a" * 500))
    b = messaging.to_mesh_frames(compose(sender, content="b" * 500))
    with pytest.raises(messaging.ReassemblyError):
        messaging.reassemble_blob([a[0], b[0]])


def test_frames_to_packets_within_payload_budget(sender):
    frames = messaging.to_mesh_frames(compose(sender, content="q" * 2000))
    packets = messaging.frames_to_packets(frames, origin=7, channel="8050",
                                          hop_limit=3, first_packet_id=100)
    assert len(packets) == len(frames)
    for packet in packets:
        assert len(packet.payload) <= mesh.MAX_PAYLOAD_BYTES
        mesh.decode_packet(mesh.encode_packet(packet))


# ---------------------------------------------------------------- views
def test_view_orders_by_date_then_id(authority, sender):
    view = messaging.CommunityView(zipcode="8050")
    t0 = NOW
    msgs = [compose(sender, content=f"m{i}", now=t0 + timedelta(seconds=i % 2))
            for i in range(6)]
    rng = Random(2)
    rng.shuffle(msgs)
    for m in msgs:
        messaging.ingest(view, m, messaging.validate(m, authority.root))
    ordered = view.ordered_visible()
    keys = [(m.date_ms, m.message_id) for m in ordered]
    assert keys == sorted(keys)
    assert len(ordered) == 6


def test_ingest_deduplicates(authority, sender):
    view = messaging.CommunityView(zipcode="8050")
    message = compose(sender)
    verdict = messaging.validate(message, authority.root)
    messaging.ingest(view, message, verdict)
    messaging.ingest(view, message, verdict)
    assert len(view.visible) == 1


def test_ingest_quarantines_inauthentic(authority, sender):
    view = messaging.CommunityView(zipcode="8050")
    tampered = replace(compose(sender), content="altered")
    messaging.ingest(view, tampered, messaging.validate(tampered, authority.root))
    assert not view.visible and len(view.quarantine) == 1


def test_ingest_filters_other_communities(authority, sender):
    view = messaging.CommunityView(zipcode="8050")
    other = compose(sender, scope=messaging.Scope.community("8001"))
    messaging.ingest(view, other, messaging.validate(other, authority.root))
    assert not view.visible and not view.quarantine


def test_rate_limit_quarantines_flood(authority, sender):
    view = messaging.CommunityView(zipcode="8050",
                                   default_rate=messaging.RateLimit(60, 3))
    t0 = NOW
    for i in range(5):
        m = compose(sender, content=f"spam{i}", now=t0 + timedelta(seconds=i))
        messaging.ingest(view, m, messaging.validate(m, authority.root))
    assert len(view.visible) == 3 and len(view.quarantine) == 2
    # Outside the window the sender may post again.
    late = compose(sender, content="later", now=t0 + timedelta(seconds=120))
    messaging.ingest(view, late, messaging.validate(late, authority.root))
    assert len(view.visible) == 4


# ---------------------------------------------------------------- moderation
@pytest.fixture(scope="module")
def moderator(authority):
    chain, store = authority.issue("mod", roles={"authenticated", "moderator"},
                                   zipcode="8050")
    return chain, store.get(chain.leaf.subject_id)


def signed_action(actor, target, action="hide", zipcode="8050", rate=None):
    chain, key = actor
    return messaging.sign_moderation(
        messaging.ModerationAction(
            actor_fingerprint=chain.leaf.fingerprint(), target=target,
            action=action, zipcode=zipcode, rate_limit=rate, actor_chain=chain),
        key)


def populated_view(authority, sender, n=2):
    view = messaging.CommunityView(zipcode="8050")
    for i in range(n):
        m = compose(sender, content=f"m{i}")
        messaging.ingest(view, m, messaging.validate(m, authority.root))
    return view


def test_moderator_hides_message(authority, sender, moderator):
    view = populated_view(authority, sender)
    target = view.visible[0].message_id
    messaging.moderate(view, signed_action(moderator, target), authority.root)
    assert target not in {m.message_id for m in view.ordered_visible()}
    assert len(view.ordered_visible()) == 1


def test_plain_user_cannot_moderate(authority, sender):
    view = populated_view(authority, sender)
    with pytest.raises(pki.AuthorizationError):
        messaging.moderate(view, signed_action(sender, view.visible[0].message_id),
                           authority.root)


def test_moderator_limited_to_own_zipcode(authority, sender, moderator):
    view = messaging.CommunityView(zipcode="8001")
    action = signed_action(moderator, b"\0" * 16, zipcode="8001")
    with pytest.raises(pki.AuthorizationError):
        messaging.moderate(view, action, authority.root)


def test_administrator_moderates_anywhere(authority, sender):
    admin_chain, admin_store = authority.issue(
        "admin", roles={"authenticated", "administrator"})
    admin = (admin_chain, admin_store.get(admin_chain.leaf.subject_id))
    view = populated_view(authority, sender)
    messaging.moderate(view, signed_action(admin, view.visible[0].message_id),
                       authority.root)
    assert len(view.ordered_visible()) == 1


def test_tampered_action_signature_rejected(authority, sender, moderator):
    view = populated_view(authority, sender)
    action = signed_action(moderator, view.visible[0].message_id)
    forged = replace(action, action="flag")
    with pytest.raises(pki.AuthorizationError):
        messaging.moderate(view, forged, authority.root)


def test_rate_limit_action_applies_to_user(authority, sender, moderator):
    view = populated_view(authority, sender, n=1)
    uid = sender[0].leaf.subject_id
    action = signed_action(moderator, uid, action="rate_limit",
                           rate=messaging.RateLimit(60, 1))
    messaging.moderate(view, action, authority.root)
    t0 = NOW + timedelta(hours=1)
    for i in range(3):
        m = compose(sender, content=f"r{i}", now=t0 + timedelta(seconds=i))
        messaging.ingest(view, m, messaging.validate(m, authority.root))
    assert len([m for m in view.visible if m.content.startswith("r")]) == 1


def test_moderation_action_wire_roundtrip(moderator):
    action = signed_action(moderator, b"\x01" * 16, action="flag")
    restored = messaging.ModerationAction.decode(action.encode())
    assert restored.actor_fingerprint == action.actor_fingerprint
    assert restored.target == action.target
    assert restored.action == "flag"
    assert restored.signature == action.signature
