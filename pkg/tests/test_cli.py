"""Command-line surface: simulation, analysis, identity flows, demo."""

import json
from importlib import resources

from click.testing import CliRunner

from gridless.cli import main

FIXTURES = resources.files("gridless") / "fixtures"


def run_cli(runner, *args):
    result = runner.invoke(main, list(args), catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


# ---------------------------------------------------------------- sim + analyze
def test_sim_run_exports_csv(tmp_path):
    runner = CliRunner()
    scenario = tmp_path / "s.json"
    scenario.write_text(json.dumps({
        "band": "EU868", "preset": "LongFast", "seed": 1, "exponent": 3.68,
        "message_budget": 3,
        "nodes": [{"id": 1, "role": "sender"},
                  {"id": 2, "role": "receiver", "x_m": 100.0}],
    }))
    out = tmp_path / "run.csv"
    result = run_cli(runner, "sim", "run", "--scenario", str(scenario),
                     "--out", str(out))
    assert "sent=3" in result.output
    assert out.read_text().startswith("time_iso8601,")


def test_analyze_summary_matches_published_row():
    runner = CliRunner()
    csv_path = str(FIXTURES / "table2_868_longfast.csv")
    result = run_cli(runner, "analyze", "--in", csv_path,
                     "--frequency", "868 MHz", "--channel", "LongFast")
    row = json.loads(result.output)
    assert row["mean_snr_db"] == -3.68
    assert row["mean_rssi_dbm"] == -113.95
    assert row["max_distance_m"] == 1274.0
    assert row["pdr_percent"] == 92.0


def test_analyze_bins_output():
    runner = CliRunner()
    csv_path = str(FIXTURES / "table2_868_longfast.csv")
    result = run_cli(runner, "analyze", "--in", csv_path, "--emit", "bins",
                     "--bins", "50")
    bins = json.loads(result.output)
    assert bins[0]["from_m"] == 0.0 and bins[0]["to_m"] == 50.0
    assert any(b["received"] for b in bins)


# ---------------------------------------------------------------- identity
def test_identity_bootstrap_flow(tmp_path):
    runner = CliRunner()
    ca = tmp_path / "ca"
    me = tmp_path / "me"
    run_cli(runner, "identity", "init-ca", "--dir", str(ca))
    request = run_cli(runner, "identity", "request", "--name", "Res Q.",
                      "--dir", str(me))
    assert "BEGIN" in request.output
    chain_file = tmp_path / "chain.txt"
    run_cli(runner, "identity", "approve", "--ca-dir", str(ca),
            "--request", str(me / "request.txt"), "--zipcode", "8050",
            "--out", str(chain_file))
    imported = run_cli(runner, "identity", "import", "--dir", str(me),
                       "--chain", str(chain_file))
    assert "identity active: Res Q." in imported.output

    mailbox = tmp_path / "board.txt"
    run_cli(runner, "message", "post", "--dir", str(me), "--zipcode", "8050",
            "--content", "first post", "--mailbox", str(mailbox))
    listing = run_cli(runner, "message", "list", "--mailbox", str(mailbox),
                      "--root", str(ca / "root.cert"), "--zipcode", "8050")
    assert "Res Q.: first post" in listing.output


def test_identity_import_rejects_mismatched_chain(tmp_path):
    runner = CliRunner()
    ca = tmp_path / "ca"
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli(runner, "identity", "init-ca", "--dir", str(ca))
    run_cli(runner, "identity", "request", "--name", "A", "--dir", str(a))
    run_cli(runner, "identity", "request", "--name", "B", "--dir", str(b))
    chain_file = tmp_path / "chain.txt"
    run_cli(runner, "identity", "approve", "--ca-dir", str(ca),
            "--request", str(a / "request.txt"), "--out", str(chain_file))
    result = runner.invoke(main, ["identity", "import", "--dir", str(b),
                                  "--chain", str(chain_file)])
    assert result.exit_code != 0
    assert "does not match" in result.output


def test_official_message_badge(tmp_path):
    runner = CliRunner()
    ca = tmp_path / "ca"
    officer = tmp_path / "officer"
    run_cli(runner, "identity", "init-ca", "--dir", str(ca))
    run_cli(runner, "identity", "request", "--name", "Duty Officer",
            "--dir", str(officer))
    chain_file = tmp_path / "chain.txt"
    run_cli(runner, "identity", "approve", "--ca-dir", str(ca),
            "--request", str(officer / "request.txt"), "--official",
            "--out", str(chain_file))
    run_cli(runner, "identity", "import", "--dir", str(officer),
            "--chain", str(chain_file))
    mailbox = tmp_path / "board.txt"
    run_cli(runner, "message", "post", "--dir", str(officer), "--zipcode",
            "8050", "--content", "boil water", "--official",
            "--mailbox", str(mailbox))
    listing = run_cli(runner, "message", "list", "--mailbox", str(mailbox),
                      "--root", str(ca / "root.cert"), "--zipcode", "8050")
    assert "[official]" in listing.output


# ---------------------------------------------------------------- demo
def test_demo_transcript():
    result = run_cli(CliRunner(), "demo")
    assert "onboarding" in result.output
    assert "sees 2 message(s)" in result.output
