"""Both servers on localhost TCP ports, a client logging in through them.

    python3 demos/tcp_deployment.py

Everything lives in a temporary directory and uses the wall clock.
"""

import random
import tempfile
from pathlib import Path

from ramhu import ecies
from ramhu.attributes_server import AttributesServer
from ramhu.central_server import CentralServer
from ramhu.client import Client, ClientProfile, SimulatedProbe
from ramhu.datasets import AsStores, CsStores, Identity, client_public_keys, provision, write_provisioned
from ramhu.network import EntityServer, TcpSession, serve_in_thread

USERS = [Identity("uid-demo-user", "mid-demo-clinic", "correct-horse-battery", "patient")]
MAC = bytes.fromhex("3c22fb1a7701")


def main():
    root = Path(tempfile.mkdtemp(prefix="ramhu-demo-"))
    write_provisioned(provision(USERS, random.Random(1)), root)
    print(f"provisioned into {root}")

    keys = ecies.read_key_file(root / "public.keys")
    as_entity = AttributesServer(ecies.read_key_file(root / "as" / "as.keys")["as"], keys["cs"][1],
                                 AsStores.load(root / "as"))
    cs_entity = CentralServer(ecies.read_key_file(root / "cs" / "cs.keys")["cs"], keys["as"][1],
                              client_public_keys(root / "public.keys"), CsStores.load(root / "cs"))

    as_srv = EntityServer(("127.0.0.1", 0), as_entity)
    cs_srv = EntityServer(("127.0.0.1", 0), cs_entity, upstream={"as": as_srv.server_address})
    wire = []
    cs_srv.recorder = wire
    for srv in (as_srv, cs_srv):
        serve_in_thread(srv)
        print(f"{srv.entity.name} listening on {srv.server_address[0]}:{srv.server_address[1]}")

    profile_path = root / "profiles" / "uid-demo-user.profile"
    client = Client(ClientProfile.load(profile_path), SimulatedProbe(MAC))
    try:
        with TcpSession(cs_srv.server_address, recorder=wire, name="client") as s:
            for label, build in (("register", client.build_registration_login), ("login", client.build_login)):
                (resp,) = s.request(build(USERS[0].password), label)
                s.request(client.process_login_response(resp), "ack")
                print(f"{label}: authenticated={client.authenticated}")
        client.profile.save(profile_path)
    finally:
        for srv in (cs_srv, as_srv):
            srv.shutdown()
            srv.server_close()

    print("\nframes seen by the central server:")
    for e in wire:
        print(f"  {e.direction.split(':')[0]:<12} {len(e.frame):4d} bytes  {e.frame[:12].hex()}...")


if __name__ == "__main__":
    main()
