import logging
import os
import re
import subprocess
import sys
import time

import pytest

from ramhu.cli import main

USERS = "uid-amelia mid-clinic amelia-horse-battery patient\nuid-bruno mid-clinic bruno.pass.phrase77 doctor\n"
MAC = "3c22fb1a7701"


@pytest.fixture
def site(tmp_path, monkeypatch):
    users = tmp_path / "users.txt"
    users.write_text(USERS)
    out = tmp_path / "site"
    assert main(["provision", "--users", str(users), "--out", str(out), "--seed", "7"]) == 0
    monkeypatch.setenv("RAMHU_STORE_DIR", str(out))
    monkeypatch.delenv("RAMHU_PASSWORD", raising=False)
    return out


def client(site, action, *extra, password="amelia-horse-battery", who="uid-amelia"):
    return main(["client", action, "--profile", str(site / "profiles" / f"{who}.profile"),
                 "--transport", "inprocess", "--simulate-mac", MAC, "--password", password, *extra])


def test_inprocess_lifecycle(site, capsys):
    assert client(site, "register") == 0
    assert client(site, "login") == 0
    assert client(site, "passwd", "--new-password", "amelia-new-pass-2026") == 0
    assert client(site, "login", password="amelia-new-pass-2026") == 0
    out = capsys.readouterr().out
    assert out.count("authenticated") == 3 and "password update submitted" in out
    assert client(site, "login") == 3  # the old password no longer works


def test_password_from_environment(site, monkeypatch, capsys):
    monkeypatch.setenv("RAMHU_PASSWORD", "amelia-horse-battery")
    argv = ["client", "register", "--profile", str(site / "profiles" / "uid-amelia.profile"),
            "--transport", "inprocess", "--simulate-mac", MAC]
    assert main(argv) == 0
    assert "authenticated" in capsys.readouterr().out


def test_fake_mac_is_rejected(site, caplog):
    caplog.set_level(logging.INFO, logger="ramhu")
    assert client(site, "register", "--fake-mac") == 3
    assert "rejected: mac" in caplog.text


def test_revocation(site, capsys):
    assert client(site, "register", who="uid-bruno", password="bruno.pass.phrase77") == 0
    assert client(site, "revoke", "--reason", "2", who="uid-bruno", password="bruno.pass.phrase77") == 0
    assert "revocation submitted" in capsys.readouterr().out
    assert client(site, "login", who="uid-bruno", password="bruno.pass.phrase77") == 3


def test_admin_revoke(site, capsys):
    assert client(site, "register") == 0
    assert main(["as", "revoke", "--uid", "uid-amelia", "--mid", "mid-clinic"]) == 0
    assert client(site, "login") == 3
    assert main(["as", "revoke", "--uid", "uid-amelia", "--mid", "mid-clinic"]) == 7


@pytest.mark.parametrize("argv, code", [
    ([], 2),
    (["client"], 2),
    (["client", "login", "--profile", "/nonexistent/p", "--transport", "inprocess"], 4),
])
def test_exit_codes(argv, code, capsys):
    assert main(argv) == code


def test_state_errors(site):
    assert client(site, "login") == 5  # not registered yet
    assert client(site, "revoke", "--reason", "9") == 5


def test_missing_store_dir(site, monkeypatch):
    monkeypatch.delenv("RAMHU_STORE_DIR")
    assert client(site, "register") == 5


def test_harness_report(tmp_path, capsys):
    report = tmp_path / "report.txt"
    assert main(["harness", "run", "--scenario", "replay", "--seed", "3", "--report", str(report)]) == 0
    lines = report.read_text().splitlines()
    assert lines[0] == "scenario action entity verdict expected result"
    assert all(line.startswith("replay ") and line.endswith(" pass") for line in lines[1:])
    assert main(["harness", "run", "--scenario", "nope"]) == 9


def _start(argv, env):
    proc = subprocess.Popen([sys.executable, "-m", "ramhu.cli", *argv], env=env,
                            stderr=subprocess.PIPE, stdout=subprocess.DEVNULL, text=True)
    deadline = time.time() + 20
    while time.time() < deadline:
        line = proc.stderr.readline()
        m = re.search(r"listening on ([\d.]+:\d+)", line)
        if m:
            return proc, m.group(1)
    proc.kill()
    raise AssertionError("server did not start")


def test_tcp_servers(site, capsys):
    env = dict(os.environ, RAMHU_STORE_DIR=str(site))
    procs = []
    try:
        as_proc, as_addr = _start(["as", "serve", "--listen", "127.0.0.1:0"], env)
        procs.append(as_proc)
        cs_proc, cs_addr = _start(["cs", "serve", "--listen", "127.0.0.1:0", "--as", as_addr], env)
        procs.append(cs_proc)
        base = ["client", None, "--profile", str(site / "profiles" / "uid-amelia.profile"),
                "--server", cs_addr, "--simulate-mac", MAC, "--password", "amelia-horse-battery"]
        for action, code in (("register", 0), ("login", 0)):
            base[1] = action
            assert main(base) == code
        assert main(base + ["--fake-mac"]) == 3
        assert capsys.readouterr().out.count("authenticated") == 2
    finally:
        for p in procs:
            p.terminate()
            p.wait(10)
