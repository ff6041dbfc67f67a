"""Command-line entry points: simulator, analysis, identity, node service."""

from __future__ import annotations

import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import click
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from . import analysis, identity as pki, messaging, sim
from .nodesvc import LocalMeshBus, Node, NodeConfig, bootstrap_admin, create_api


@click.group()
def main() -> None:
    """Off-grid emergency mesh: simulate, analyze, and run nodes."""


# ---------------------------------------------------------------- key files
def _save_key(path: Path, key: Ed25519PrivateKey) -> None:
    pem = key.private_bytes(
        encoding=serialization.Encoding.PEM,
        format=serialization.PrivateFormat.PKCS8,
        encryption_algorithm=serialization.NoEncryption(),
    )
    path.write_bytes(pem)


def _load_key(path: Path) -> Ed25519PrivateKey:
    key = serialization.load_pem_private_key(path.read_bytes(), password=None)
    if not isinstance(key, Ed25519PrivateKey):
        raise click.ClickException(f"{path} does not hold an Ed25519 key")
    return key


# ---------------------------------------------------------------- simulator
@click.group()
def sim_group() -> None:
    """Range-test simulation."""


main.add_command(sim_group, name="sim")


@sim_group.command("run")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write delivered-packet records as CSV.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
def sim_run(scenario_path: str, out_path: str | None, seed: int | None) -> None:
    """Run one scenario and report delivery statistics."""
    scenario = sim.load_scenario(scenario_path)
    if seed is not None:
        from dataclasses import replace
        scenario = replace(scenario, seed=seed)
    result = sim.run(scenario)
    total_sent = sum(len(seqs) for seqs in result.sent_log.values())
    far = max((r.distance_m for r in result.records), default=0.0)
    click.echo(f"sent={total_sent} delivered_records={len(result.records)} "
               f"events={len(result.log.entries)} max_delivery_distance_m={far:.0f}")
    if out_path:
        sim.export_csv(result.records, out_path)
        click.echo(f"wrote {out_path}")


# ---------------------------------------------------------------- analysis
@main.command("analyze")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--bins", "bin_width", default=50, show_default=True,
              help="Distance bin width in metres.")
@click.option("--mode", type=click.Choice(["window", "senderlog"]), default="window",
              show_default=True,
              help="Totals rule: highest-sequence window or an explicit sender log.")
@click.option("--emit", type=click.Choice(["summary", "bins", "series"]),
              default="summary", show_default=True)
@click.option("--metric", type=click.Choice(["rssi", "snr"]),
              default="rssi", show_default=True, help="Series metric.")
@click.option("--frequency", default="", help="Frequency label for the summary row.")
@click.option("--channel", default="", help="Channel label for the summary row.")
@click.option("--sender-log", "sender_log_path", type=click.Path(exists=True),
              default=None, help="CSV of seq,distance_m pairs actually sent.")
@click.option("--out", "out_path", type=click.Path(), default=None)
def analyze(in_path, bin_width, mode, emit, metric, frequency, channel,
            sender_log_path, out_path) -> None:
    """Compute delivery statistics from a range-test CSV."""
    records, rejects = analysis.import_meshtastic_csv(in_path)
    if rejects:
        click.echo(f"note: skipped {len(rejects)} malformed row(s)", err=True)
    sender_log = None
    if mode == "senderlog":
        if sender_log_path is None:
            raise click.ClickException("--mode senderlog requires --sender-log")
        sender_log = []
        for line in Path(sender_log_path).read_text().splitlines()[1:]:
            seq, dist = line.split(",")[:2]
            sender_log.append((int(seq), float(dist)))

    if emit == "summary":
        row = analysis.summarize(records, frequency=frequency, channel=channel,
                                 total_sent=len(sender_log) if sender_log else None)
        pdr = row.overall_pdr_percent
        payload = {
            "frequency": row.frequency, "channel": row.channel,
            "messages_received": len({r.seq for r in records}),
            "pdr_percent": round(pdr, 2) if pdr is not None else None,
            "mean_rssi_dbm": round(row.mean_rssi_dbm, 2) if row.mean_rssi_dbm is not None else None,
            "mean_snr_db": round(row.mean_snr_db, 2) if row.mean_snr_db is not None else None,
            "max_distance_m": row.max_distance_m,
        }
    elif emit == "bins":
        bins = analysis.pdr_bins(records, sender_log=sender_log, bin_width=bin_width)
        payload = [
            {"from_m": b.low_m, "to_m": b.high_m, "received": b.received,
             "total": b.total,
             "pdr_percent": round(b.pdr, 2) if b.pdr is not None else None}
            for b in bins
        ]
    else:
        payload = [{"distance_m": d, "value": v}
                   for d, v in analysis.series(records, metric)]

    text = json.dumps(payload, indent=2)
    if out_path:
        Path(out_path).write_text(text + "\n")
        click.echo(f"wrote {out_path}")
    else:
        click.echo(text)


# ---------------------------------------------------------------- identity
@click.group()
def identity_group() -> None:
    """Certificates: authority setup, requests, approvals, import."""


main.add_command(identity_group, name="identity")


@identity_group.command("init-ca")
@click.option("--dir", "ca_dir", required=True, type=click.Path())
def identity_init_ca(ca_dir: str) -> None:
    """Create a root plus civilian and official intermediaries on disk."""
    path = Path(ca_dir)
    path.mkdir(parents=True, exist_ok=True)
    admin = bootstrap_admin()
    for name, cert in (("root", admin.root_cert), ("civilian", admin.civilian),
                       ("official", admin.official)):
        (path / f"{name}.cert").write_text(cert.to_base64_block() + "\n")
        _save_key(path / f"{name}.key", admin.store.get(cert.subject_id))
    (path / "issued.json").write_text("{}\n")
    click.echo(f"authority material written to {path}")
    click.echo(f"root fingerprint: {admin.root_cert.fingerprint().hex()}")


def _load_ca(ca_dir: Path):
    certs = {}
    store = pki.SecureStore()
    for name in ("root", "civilian", "official"):
        certs[name] = pki.Certificate.from_base64_block((ca_dir / f"{name}.cert").read_text())
        store.put(certs[name].subject_id, _load_key(ca_dir / f"{name}.key"))
    return certs, store


@identity_group.command("request")
@click.option("--name", required=True, help="Display name for the certificate.")
@click.option("--dir", "id_dir", required=True, type=click.Path(),
              help="Directory for the private key and request.")
def identity_request(name: str, id_dir: str) -> None:
    """Generate a keypair and print the signing-request block."""
    path = Path(id_dir)
    path.mkdir(parents=True, exist_ok=True)
    store, request = pki.generate_identity(name)
    _save_key(path / "identity.key", store.get(request.subject_id))
    (path / "subject_id").write_text(request.subject_id + "\n")
    block = request.to_base64_block()
    (path / "request.txt").write_text(block + "\n")
    click.echo(block)


@identity_group.command("approve")
@click.option("--ca-dir", required=True, type=click.Path(exists=True))
@click.option("--request", "request_path", required=True, type=click.Path(exists=True))
@click.option("--zipcode", default=None, help="Scope for moderator roles.")
@click.option("--role", "roles", multiple=True,
              type=click.Choice(["authenticated", "moderator", "administrator"]),
              default=("authenticated",), show_default=True)
@click.option("--official", is_flag=True, help="Issue under the official intermediary.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the chain block here instead of stdout.")
def identity_approve(ca_dir, request_path, zipcode, roles, official, out_path) -> None:
    """Approve a signing request and emit the certificate chain block."""
    certs, store = _load_ca(Path(ca_dir))
    request = pki.SigningRequest.from_base64_block(Path(request_path).read_text())
    issuer = certs["official"] if official else certs["civilian"]
    cert = pki.approve(
        request,
        issuer_cert=issuer,
        issuer_key=store.get(issuer.subject_id),
        role_flags=set(roles),
        zipcode_scope=zipcode,
    )
    chain = pki.CertChain(leaf=cert, intermediary=issuer, root=certs["root"])
    issued_file = Path(ca_dir) / "issued.json"
    issued = json.loads(issued_file.read_text()) if issued_file.exists() else {}
    issued[str(cert.serial)] = request.subject_name
    issued_file.write_text(json.dumps(issued, indent=2) + "\n")
    block = pki.chain_to_base64_block(chain)
    if out_path:
        Path(out_path).write_text(block + "\n")
        click.echo(f"wrote {out_path}")
    else:
        click.echo(block)


@identity_group.command("import")
@click.option("--dir", "id_dir", required=True, type=click.Path(exists=True))
@click.option("--chain", "chain_path", required=True, type=click.Path(exists=True))
def identity_import(id_dir: str, chain_path: str) -> None:
    """Install an approved chain next to the local private key."""
    path = Path(id_dir)
    chain = pki.chain_from_base64_block(Path(chain_path).read_text())
    key = _load_key(path / "identity.key")
    if chain.leaf.public_key != key.public_key().public_bytes_raw():
        raise click.ClickException("chain does not match the local key")
    verdict = pki.verify_chain(chain)
    if not verdict:
        raise click.ClickException(f"chain invalid: {verdict.reason}")
    (path / "chain.txt").write_text(pki.chain_to_base64_block(chain) + "\n")
    click.echo(f"identity active: {chain.leaf.subject_name} "
               f"(roles: {', '.join(sorted(chain.leaf.role_flags))})")


# ---------------------------------------------------------------- messages
@click.group()
def message_group() -> None:
    """File-backed mailbox for command-line bootstrap flows."""


main.add_command(message_group, name="message")


def _load_identity(id_dir: Path):
    chain = pki.chain_from_base64_block((id_dir / "chain.txt").read_text())
    return chain, _load_key(id_dir / "identity.key")


@message_group.command("post")
@click.option("--dir", "id_dir", required=True, type=click.Path(exists=True))
@click.option("--zipcode", required=True)
@click.option("--content", required=True)
@click.option("--official", is_flag=True)
@click.option("--mailbox", required=True, type=click.Path(),
              help="Append-only file shared by local participants.")
def message_post(id_dir, zipcode, content, official, mailbox) -> None:
    """Sign a community message and append it to a mailbox file."""
    chain, key = _load_identity(Path(id_dir))
    message = messaging.compose_and_sign(
        content, messaging.Scope.community(zipcode), chain, key, official=official
    )
    with open(mailbox, "a", encoding="utf-8") as fh:
        fh.write(message.encode().hex() + " " + pki.chain_to_base64_block(chain)
                 .replace("\n", "|") + "\n")
    click.echo(f"posted {message.message_id.hex()}")


@message_group.command("list")
@click.option("--mailbox", required=True, type=click.Path(exists=True))
@click.option("--root", "root_path", required=True, type=click.Path(exists=True),
              help="Trusted root certificate block.")
@click.option("--zipcode", required=True)
def message_list(mailbox, root_path, zipcode) -> None:
    """Validate and print mailbox messages for one community."""
    root = pki.Certificate.from_base64_block(Path(root_path).read_text())
    view = messaging.CommunityView(zipcode=zipcode)
    for line in Path(mailbox).read_text().splitlines():
        if not line.strip():
            continue
        blob_hex, chain_block = line.split(" ", 1)
        message = messaging.Message.decode(bytes.fromhex(blob_hex))
        chain = pki.chain_from_base64_block(chain_block.replace("|", "\n"))
        from dataclasses import replace
        message = replace(message, sender_chain=chain)
        verdict = messaging.validate(message, root)
        messaging.ingest(view, message, verdict)
    for m in view.ordered_visible():
        stamp = datetime.fromtimestamp(m.date_ms / 1000, timezone.utc).isoformat()
        badge = " [official]" if m.official else ""
        name = m.sender_chain.leaf.subject_name if m.sender_chain else m.sender_fingerprint.hex()
        click.echo(f"{stamp} {name}{badge}: {m.content}")
    if view.quarantine:
        click.echo(f"({len(view.quarantine)} message(s) failed validation)", err=True)


# ---------------------------------------------------------------- node svc
@click.group()
def node_group() -> None:
    """Long-running node with the local HTTP API."""


main.add_command(node_group, name="node")


@node_group.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--webui", "webui_dir", type=click.Path(), default=None,
              help="Directory of static operator-console assets to serve.")
@click.option("--admin", "as_admin", is_flag=True,
              help="Bootstrap this node as the community authority.")
def node_run(config_path: str, webui_dir: str | None, as_admin: bool) -> None:
    """Serve one node's JSON API (and optionally the operator console)."""
    import uvicorn

    config = NodeConfig.load(config_path)
    admin = bootstrap_admin(config.name) if as_admin else None
    node = Node(config, admin=admin)
    LocalMeshBus().attach(node)
    app = create_api(node, webui_dir=webui_dir)
    click.echo(f"node {config.node_id} ({config.name}) on port {config.api_port}")
    uvicorn.run(app, host="127.0.0.1", port=config.api_port, log_level="warning")


# ---------------------------------------------------------------- demo
@main.command("demo")
def demo() -> None:
    """Five in-process nodes: approval, chat, official notice, moderation."""
    admin_state = bootstrap_admin()
    bus = LocalMeshBus()
    admin = Node(NodeConfig(node_id=1, name="authority", zipcode="8050"),
                 admin=admin_state)
    names = ["ana", "ben", "cora", "dev"]
    people = [
        Node(NodeConfig(node_id=i + 2, name=n, zipcode="8050"),
             trust_root=admin_state.root_cert)
        for i, n in enumerate(names)
    ]
    for n in [admin, *people]:
        bus.attach(n)

    click.echo("-- onboarding --")
    for person in people:
        request = person.create_identity(person.config.name.title())
        request_id = admin.submit_request(request.to_base64_block())
        roles = {"authenticated", "moderator"} if person.config.name == "ana" else {"authenticated"}
        chain = admin.approve_request(request_id, roles=roles, zipcode="8050")
        person.import_chain(pki.chain_to_base64_block(chain))
        click.echo(f"  {person.config.name}: {person.identity_status()} "
                   f"({', '.join(sorted(chain.leaf.role_flags))})")

    click.echo("-- community chat (zipcode 8050) --")
    people[1].post_message("shelter open at the gym", messaging.Scope.community("8050"))
    people[2].post_message("bring water filters", messaging.Scope.community("8050"))
    admin.post_message("boil-water notice until further notice",
                       messaging.Scope.community("8050"))
    for m in people[3].view("8050").ordered_visible():
        name = (m.sender_chain.leaf.subject_name if m.sender_chain
                else m.sender_fingerprint.hex()[:8])
        badge = " [official]" if m.official else ""
        click.echo(f"  {name}{badge}: {m.content}")

    click.echo("-- moderation: ana hides the second message --")
    target = people[3].view("8050").ordered_visible()[1].message_id
    people[0].moderate("hide", target, "8050")
    for viewer in people:
        visible = [m.content for m in viewer.view("8050").ordered_visible()]
        click.echo(f"  {viewer.config.name} sees {len(visible)} message(s)")


if __name__ == "__main__":
    main()
