"""Shared builders for identity material used across test modules."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import pytest

from gridless import identity as pki


def _backdated() -> datetime:
    """Issue test certificates an hour in the past so that message
    timestamps taken at module import are always inside the validity
    window, regardless of collection order."""
    return datetime.now(timezone.utc) - timedelta(hours=1)


@dataclass
class Authority:
    """A complete issuing setup: root, both intermediaries, and key store."""

    root: pki.Certificate
    civilian: pki.Certificate
    official: pki.Certificate
    store: pki.SecureStore

    def issue(
        self,
        name: str,
        roles: set[str] | None = None,
        zipcode: str | None = None,
        official: bool = False,
        **kwargs,
    ) -> tuple[pki.CertChain, pki.SecureStore]:
        """Issue a leaf for a fresh keypair; returns (chain, subject's store)."""
        store, request = pki.generate_identity(name)
        issuer = self.official if official else self.civilian
        kwargs.setdefault("now", _backdated())
        cert = pki.approve(
            request,
            issuer_cert=issuer,
            issuer_key=self.store.get(issuer.subject_id),
            role_flags=roles or {"authenticated"},
            zipcode_scope=zipcode,
            **kwargs,
        )
        return pki.CertChain(leaf=cert, intermediary=issuer, root=self.root), store


@pytest.fixture(scope="module")
def authority() -> Authority:
    issued = _backdated()
    root, store = pki.make_root(now=issued)
    civilian = pki.make_intermediary(
        "civilian authority", root, store, administrator=True, now=issued
    )
    official = pki.make_intermediary(
        "official authority", root, store, official=True, administrator=True,
        now=issued,
    )
    return Authority(root=root, civilian=civilian, official=official, store=store)


def leaf_key(chain: pki.CertChain, store: pki.SecureStore):
    return store.get(chain.leaf.subject_id)
