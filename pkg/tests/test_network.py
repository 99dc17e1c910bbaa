import socket
import struct

import pytest

from ramhu.errors import MalformedMessage
from ramhu.harness import World, outcome
from ramhu.network import (
    MAX_FRAME,
    Capture,
    EntityServer,
    Network,
    Packet,
    Reorder,
    TcpSession,
    drop_if,
    duplicate_if,
    edit_if,
    exchange,
    parse_addr,
    read_frame,
    serve_in_thread,
    write_frame,
)


class Echo:
    name = "echo"

    def __init__(self):
        self.seen = []

    def handle(self, frame, peer):
        self.seen.append(frame)
        return []


def _net():
    net = Network()
    echo = Echo()
    net.add(echo)
    return net, echo


def test_fifo_delivery_and_transcript():
    net, echo = _net()
    for f in (b"a", b"b", b"c"):
        net.send("x", "echo", f, "K")
    assert [d.verdict for d in net.run()] == ["accepted"] * 3
    assert echo.seen == [b"a", b"b", b"c"]
    assert [e.direction for e in net.transcript] == ["x>echo"] * 3


def test_unknown_destination():
    net, _ = _net()
    net.send("x", "nowhere", b"a")
    assert net.run()[0].verdict == "undeliverable"


def test_hooks():
    net, echo = _net()
    cap = Capture()
    for hook in (cap, drop_if(lambda p: p.frame == b"drop"), duplicate_if(lambda p: p.frame == b"twice"),
                 edit_if(lambda p: p.frame == b"edit", lambda f: f.upper())):
        net.channel_intercept(hook)
    for f in (b"drop", b"twice", b"edit", b"plain"):
        net.send("x", "echo", f)
    net.run()
    assert echo.seen == [b"twice", b"twice", b"EDIT", b"plain"]
    assert [p.frame for p in cap.packets] == [b"drop", b"twice", b"edit", b"plain"]


def test_inject_skips_hooks():
    net, echo = _net()
    net.channel_intercept(drop_if(lambda p: True))
    net.send("x", "echo", b"lost")
    net.inject("x", "echo", b"kept")
    net.run()
    assert echo.seen == [b"kept"]


def test_reorder():
    r = Reorder(lambda p: True, count=3)
    pkts = [Packet("a", "b", bytes([i])) for i in range(3)]
    assert r(pkts[0]) == [] and r(pkts[1]) == []
    assert r(pkts[2]) == pkts[::-1]


def test_rejections_are_recorded(registered):
    w = registered
    out = w.inject("cs", b"\x00" * 40)
    assert outcome(out) == ("cs", "malformed")


# -- framing -----------------------------------------------------------------

def test_frames_over_a_socket_pair():
    a, b = socket.socketpair()
    with a, b:
        write_frame(a, b"hello")
        write_frame(a, b"")
        assert read_frame(b) == b"hello"
        assert read_frame(b) == b""
        a.close()
        assert read_frame(b) is None


def test_oversized_and_truncated_frames():
    a, b = socket.socketpair()
    with a, b:
        a.sendall(struct.pack(">I", MAX_FRAME + 1))
        with pytest.raises(MalformedMessage):
            read_frame(b)
    a, b = socket.socketpair()
    with a, b:
        a.sendall(struct.pack(">I", 10) + b"abc")
        a.close()
        with pytest.raises(MalformedMessage):
            read_frame(b)


def test_parse_addr():
    assert parse_addr("10.0.0.1:7400") == ("10.0.0.1", 7400)
    assert parse_addr(":7400") == ("127.0.0.1", 7400)


# -- TCP ---------------------------------------------------------------------

@pytest.fixture
def servers():
    started = []

    def start(w):
        as_srv = EntityServer(("127.0.0.1", 0), w.as_)
        cs_srv = EntityServer(("127.0.0.1", 0), w.cs, upstream={"as": as_srv.server_address})
        for s in (as_srv, cs_srv):
            serve_in_thread(s)
            started.append(s)
        return cs_srv, as_srv

    yield start
    for s in started:
        s.shutdown()
        s.server_close()


def test_rejection_closes_the_connection(servers):
    w = World(seed=2)
    cs_srv, _ = servers(w)
    assert exchange(cs_srv.server_address, [b"\x00" * 40]) is None


def _by_link(entries):
    links = {}
    for e in entries:
        links.setdefault(e.direction, []).append(e.frame)
    return links


def test_transport_equivalence(servers):
    """Same seed and clock: the TCP run puts byte-identical frames on every link."""
    local = World(seed=21)
    local.register(0)
    local.clock.advance(1)
    local.login(0)

    remote = World(seed=21)
    cs_srv, _ = servers(remote)
    wire = []
    cs_srv.recorder = wire
    c = remote.clients[0]
    with TcpSession(cs_srv.server_address, recorder=wire, name=c.address) as s:
        for build in (lambda: c.build_registration_login(remote.passwords[0]),
                      lambda: c.build_login(remote.passwords[0])):
            (resp,) = s.request(build(), "REQ")
            assert s.request(c.process_login_response(resp), "ACK") == []
            remote.clock.advance(1)

    want, got = _by_link(local.net.transcript), _by_link(wire)
    assert set(want) == set(got) == {f"{c.address}>cs", "cs>as", "as>cs", f"cs>{c.address}"}
    for link in want:
        assert got[link] == want[link], link
    assert remote.cs.authenticated == local.cs.authenticated == [local.fp(0)] * 2
