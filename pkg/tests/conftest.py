from __future__ import annotations

import socket
import sqlite3
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from e2e_fixture import write_fixture  # noqa: E402


@pytest.fixture(scope="session")
def e2e_paths(tmp_path_factory):
    """Database, dataset, and scripted-rules files for the replay suite."""
    root = tmp_path_factory.mktemp("e2e")
    return write_fixture(root)


@pytest.fixture
def no_network(monkeypatch):
    """Fail the test on any attempt to open a socket."""

    def _blocked(*args, **kwargs):
        raise AssertionError("network access attempted during an offline test")

    monkeypatch.setattr(socket, "socket", _blocked)
    monkeypatch.setattr(socket, "create_connection", _blocked)


@pytest.fixture
def make_db(tmp_path):
    """Create a sqlite file from a schema script and rows: make_db(script, inserts)."""

    counter = {"n": 0}

    def _make(script: str, inserts: list[tuple[str, list[tuple]]] | None = None) -> Path:
        counter["n"] += 1
        path = tmp_path / f"db{counter['n']}.sqlite"
        conn = sqlite3.connect(path)
        try:
            conn.executescript(script)
            for sql, rows in inserts or []:
                conn.executemany(sql, rows)
            conn.commit()
        finally:
            conn.close()
        return path

    return _make
