"""Command line entry point: ``ramhu <provision|cs|as|client|harness> ...``.

Store paths default to ``$RAMHU_STORE_DIR`` (the directory ``provision``
wrote). Client commands talk to a CS over TCP (``--server host:port``) or,
with ``--transport inprocess``, load both servers from the store directory
and run the whole exchange in this process.

Exit codes: 0 success, 2 usage, 3 rejected by a peer, 4 unreadable store
or profile, 5 invalid input, 6 device problem, 7 admin error, 8 network
error, 9 harness failures, 1 anything else.
"""

from __future__ import annotations

import argparse
import getpass
import logging
import os
import random
import sys
from pathlib import Path

from . import ecies
from .attributes_server import AttributesServer
from .central_server import CentralServer
from .client import Client, ClientProfile, LinuxProbe, SimulatedProbe, probe_device_identity
from .datasets import AsStores, CsStores, client_public_keys, provision, read_users_file, write_provisioned
from .entity import DEFAULT_DELTA_MS
from .errors import (
    AdminError,
    DeviceError,
    HarnessError,
    InvalidKey,
    ProvisioningError,
    RamhuError,
    Rejection,
    StateError,
    StoreLoadError,
    ValidationError,
)
from .network import EntityServer, Network, TcpSession, exchange, parse_addr
from .wire import parse_mac

log = logging.getLogger("ramhu.cli")

EXIT_OK, EXIT_USAGE, EXIT_REJECTED, EXIT_STORE, EXIT_INPUT = 0, 2, 3, 4, 5
EXIT_DEVICE, EXIT_ADMIN, EXIT_NETWORK, EXIT_HARNESS, EXIT_OTHER = 6, 7, 8, 9, 1


class Rejected(RamhuError):
    """The peer refused the request (over TCP it simply hangs up)."""


def _exit_code(exc: BaseException) -> int:
    for types, code in (
        ((Rejection, Rejected), EXIT_REJECTED),
        ((StoreLoadError, InvalidKey), EXIT_STORE),
        ((ValidationError, ProvisioningError, StateError), EXIT_INPUT),
        ((DeviceError,), EXIT_DEVICE),
        ((AdminError,), EXIT_ADMIN),
        ((OSError,), EXIT_NETWORK),
        ((HarnessError,), EXIT_HARNESS),
    ):
        if isinstance(exc, types):
            return code
    return EXIT_OTHER


# -- paths ---------------------------------------------------------------------

def _store_root(args) -> Path:
    root = getattr(args, "store_dir", None) or os.environ.get("RAMHU_STORE_DIR")
    if not root:
        raise ValidationError("no store directory: pass --store-dir or set RAMHU_STORE_DIR")
    return Path(root)


def _read_keys(path: Path) -> dict:
    try:
        return ecies.read_key_file(path)
    except OSError as exc:
        raise StoreLoadError(f"cannot read {path}: {exc}") from None


def _keys(path: Path, label: str) -> tuple:
    keys = _read_keys(path)
    if label not in keys or keys[label][0] is None:
        raise StoreLoadError(f"{path} has no private key for {label}")
    return keys[label]


def _public(path: Path, label: str) -> ecies.PublicKey:
    keys = _read_keys(path)
    if label not in keys:
        raise StoreLoadError(f"{path} has no public key for {label}")
    return keys[label][1]


class _Site:
    """Keys and stores of both servers under one provisioned directory."""

    def __init__(self, root: Path, cs_stores: str | None = None, as_stores: str | None = None,
                 public: str | None = None):
        self.root = root
        self.cs_dir = Path(cs_stores) if cs_stores else root / "cs"
        self.as_dir = Path(as_stores) if as_stores else root / "as"
        self.public = Path(public) if public else root / "public.keys"

    def central(self, clock=None, delta_ms: int = DEFAULT_DELTA_MS, keys: str | None = None) -> CentralServer:
        return CentralServer(_keys(Path(keys) if keys else self.cs_dir / "cs.keys", "cs"), _public(self.public, "as"),
                             client_public_keys(self.public), CsStores.load(self.cs_dir), clock, delta_ms=delta_ms)

    def attributes(self, clock=None, delta_ms: int = DEFAULT_DELTA_MS, keys: str | None = None) -> AttributesServer:
        return AttributesServer(_keys(Path(keys) if keys else self.as_dir / "as.keys", "as"), _public(self.public, "cs"),
                                AsStores.load(self.as_dir), clock, delta_ms=delta_ms)


# -- provision -----------------------------------------------------------------

def cmd_provision(args) -> int:
    identities = read_users_file(args.users)
    rng = random.Random(args.seed) if args.seed is not None else random.SystemRandom()
    p = provision(identities, rng)
    write_provisioned(p, args.out)
    print(f"provisioned {len(identities)} users into {args.out}")
    return EXIT_OK


# -- servers -------------------------------------------------------------------

def _serve(server: EntityServer, on_change) -> int:
    host, port = server.server_address[:2]
    print(f"{server.entity.name} listening on {host}:{port}", file=sys.stderr, flush=True)
    server.on_change = on_change
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_cs_serve(args) -> int:
    site = _Site(_store_root(args), cs_stores=args.stores, public=args.public)
    cs = site.central(delta_ms=args.delta_t_ms, keys=args.keys)
    server = EntityServer(parse_addr(args.listen), cs, upstream={"as": parse_addr(args.as_addr)})
    return _serve(server, lambda: cs.stores.save(site.cs_dir))


def cmd_as_serve(args) -> int:
    site = _Site(_store_root(args), as_stores=args.stores, public=args.public)
    as_ = site.attributes(delta_ms=args.delta_t_ms, keys=args.keys)
    server = EntityServer(parse_addr(args.listen), as_)
    return _serve(server, lambda: as_.stores.save(site.as_dir))


def cmd_as_revoke(args) -> int:
    site = _Site(_store_root(args), as_stores=args.stores, public=args.public)
    as_ = site.attributes(keys=args.keys)
    out = as_.admin_revoke(args.uid, args.mid)
    as_.stores.save(site.as_dir)
    if args.cs:
        if exchange(parse_addr(args.cs), [out.frame]) is None:
            raise Rejected("the central server refused the device removal")
    else:
        cs = site.central()
        cs.handle(out.frame, "as")
        cs.stores.save(site.cs_dir)
    print(f"revoked {args.uid}/{args.mid}")
    return EXIT_OK


# -- client --------------------------------------------------------------------

class _SpoofedProbe:
    """Wrap a probe and report that the active address was changed."""

    def __init__(self, inner) -> None:
        self.inner = inner

    def read(self):
        active, _, _ = self.inner.read()
        return active, bytes(b ^ 0xFF for b in active), None


def _probe(args):
    probe = SimulatedProbe(parse_mac(args.simulate_mac)) if args.simulate_mac else LinuxProbe(args.interface)
    return _SpoofedProbe(probe) if args.fake_mac else probe


def _password(flag_value: str | None, prompt: str, env: str = "RAMHU_PASSWORD") -> str:
    if flag_value is not None:
        return flag_value
    if os.environ.get(env):
        return os.environ[env]
    return getpass.getpass(prompt)


class _Link:
    """Deliver client frames to the CS and return its replies for this client."""

    def __init__(self, args, client: Client):
        self.client = client
        self.session = None
        self.site = None
        if args.transport == "tcp":
            if not args.server:
                raise ValidationError("--server host:port is required for the tcp transport")
            self.session = TcpSession(parse_addr(args.server), name=client.address)
        else:
            self.site = _Site(_store_root(args))
            self.cs = self.site.central(delta_ms=args.delta_t_ms)
            self.as_ = self.site.attributes(delta_ms=args.delta_t_ms)
            self.net = Network()
            self.net.add(self.cs)
            self.net.add(self.as_)

    def request(self, frame: bytes, kind: str) -> list[bytes]:
        if self.session is not None:
            replies = self.session.request(frame, kind)
            if replies is None:
                raise Rejected(f"{kind} rejected by the server")
            return replies
        self.net.inject(self.client.address, "cs", frame, kind)
        replies = []
        while self.net.queue:
            pkt = self.net.queue[0]
            if pkt.dst == self.client.address:
                self.net.queue.pop(0)
                replies.append(pkt.frame)
                continue
            for d in self.net.run(max_steps=1):
                if d.verdict != "accepted" and d.src == self.client.address:
                    raise Rejected(f"{kind} rejected: {d.verdict}")
                if d.verdict != "accepted":
                    # a failure further along is invisible to the client, as over TCP
                    log.info("%s dropped at %s", d.kind, d.dst)
        return replies

    def close(self) -> None:
        if self.session is not None:
            self.session.close()
        if self.site is not None:
            self.cs.stores.save(self.site.cs_dir)
            self.as_.stores.save(self.site.as_dir)


def _login_exchange(link: _Link, client: Client, frame: bytes, kind: str) -> int:
    replies = link.request(frame, kind)
    if len(replies) != 1:
        raise Rejected(f"expected one login response, got {len(replies)}")
    ack = client.process_login_response(replies[0])
    link.request(ack, "CLIENT_ACK")
    print("authenticated")
    return EXIT_OK


def cmd_client(args) -> int:
    profile = ClientProfile.load(args.profile)
    probe = _probe(args)
    probe_device_identity(probe)  # fail early with a device error
    client = Client(profile, probe, delta_ms=args.delta_t_ms)
    link = _Link(args, client)
    try:
        if args.action == "register":
            frame = client.build_registration_login(_password(args.password, "password: "))
            profile.save(args.profile)
            return _login_exchange(link, client, frame, "REG_LOGIN_REQ")
        if args.action == "login":
            frame = client.build_login(_password(args.password, "password: "))
            profile.save(args.profile)
            return _login_exchange(link, client, frame, "LOGIN_REQ")
        if args.action == "passwd":
            old = _password(args.password, "current password: ")
            new = _password(args.new_password, "new password: ", env="RAMHU_NEW_PASSWORD")
            frame = client.build_password_update(old, new)
            profile.save(args.profile)
            link.request(frame, "PW_UPDATE_REQ")
            print("password update submitted")
            return EXIT_OK
        frame = client.build_revocation(_password(args.password, "password: "), args.reason)
        profile.save(args.profile)
        link.request(frame, "REVOKE_REQ")
        print("revocation submitted")
        return EXIT_OK
    finally:
        profile.save(args.profile)
        link.close()


# -- harness -------------------------------------------------------------------

def cmd_harness(args) -> int:
    from .harness import ALL_SCENARIOS, format_reports, run_all

    names = ALL_SCENARIOS if args.scenario == "all" else (args.scenario,)
    reports = run_all(args.seed, names)
    text = format_reports(reports)
    if args.report:
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)
    failed = [r.scenario for r in reports if not r.passed]
    for r in reports:
        print(f"{r.scenario}: {'pass' if r.passed else 'FAIL'}", file=sys.stderr)
    return EXIT_HARNESS if failed else EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ramhu", description="Anonymous mutual authentication: servers, clients and attack harness.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("provision", help="generate keys, stores and client profiles")
    p.add_argument("--users", required=True, help="file with 'uid mid password [role]' lines")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="deterministic output (test fixtures only)")
    p.set_defaults(func=cmd_provision)

    def server_flags(p, name):
        p.add_argument("--store-dir", help="provisioned directory (default $RAMHU_STORE_DIR)")
        p.add_argument("--stores", help=f"store directory (default <store-dir>/{name})")
        p.add_argument("--keys", help=f"key file (default <stores>/{name}.keys)")
        p.add_argument("--public", help="broadcast public key file (default <store-dir>/public.keys)")

    cs = sub.add_parser("cs", help="central server").add_subparsers(dest="cs_command", required=True)
    p = cs.add_parser("serve")
    server_flags(p, "cs")
    p.add_argument("--listen", default="127.0.0.1:7400")
    p.add_argument("--as", dest="as_addr", default="127.0.0.1:7401", help="attributes server address")
    p.add_argument("--delta-t-ms", type=int, default=DEFAULT_DELTA_MS)
    p.set_defaults(func=cmd_cs_serve)

    as_ = sub.add_parser("as", help="attributes server").add_subparsers(dest="as_command", required=True)
    p = as_.add_parser("serve")
    server_flags(p, "as")
    p.add_argument("--listen", default="127.0.0.1:7401")
    p.add_argument("--delta-t-ms", type=int, default=DEFAULT_DELTA_MS)
    p.set_defaults(func=cmd_as_serve)
    p = as_.add_parser("revoke", help="revoke a user without a client request")
    server_flags(p, "as")
    p.add_argument("--uid", required=True)
    p.add_argument("--mid", required=True)
    p.add_argument("--cs", help="central server address; without it the CS stores are updated in-process")
    p.set_defaults(func=cmd_as_revoke)

    p = sub.add_parser("client", help="act as a user device")
    p.add_argument("action", choices=("register", "login", "passwd", "revoke"))
    p.add_argument("--profile", required=True)
    p.add_argument("--server", help="central server host:port")
    p.add_argument("--transport", choices=("tcp", "inprocess"), default="tcp")
    p.add_argument("--store-dir", help="provisioned directory for the inprocess transport")
    p.add_argument("--password", help="password (default $RAMHU_PASSWORD or a prompt)")
    p.add_argument("--new-password", help="new password for passwd (default $RAMHU_NEW_PASSWORD or a prompt)")
    p.add_argument("--reason", type=int, default=0, help="revocation reason index")
    p.add_argument("--simulate-mac", help="use this hardware address instead of probing the host")
    p.add_argument("--fake-mac", action="store_true", help="report the address as changed")
    p.add_argument("--interface", help="network interface to probe")
    p.add_argument("--delta-t-ms", type=int, default=DEFAULT_DELTA_MS)
    p.set_defaults(func=cmd_client)

    h = sub.add_parser("harness", help="attack scenarios").add_subparsers(dest="harness_command", required=True)
    p = h.add_parser("run")
    p.add_argument("--scenario", default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_harness)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (RamhuError, OSError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
