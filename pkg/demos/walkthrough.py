"""One user's life cycle on an in-process network, printed hop by hop.

    python3 demos/walkthrough.py [seed]
"""

import sys

from ramhu.harness import World, outcome


def show(title, deliveries):
    print(f"\n== {title}")
    for d in deliveries:
        src, dst = d.src.split(":")[0], d.dst.split(":")[0]
        print(f"   {src:>6} -> {dst:<6} {d.kind:<15} {d.verdict}")
    return outcome(deliveries)


def main(seed=0):
    w = World(seed)
    who = w.users[0]
    print(f"provisioned {len(w.users)} users; following {who.uid} ({who.role})")
    print(f"profile on the device holds pseudonyms and a masked key, recipe={w.clients[0].profile.recipe}")

    show("first registration (consumes the one-time password)", w.register(0))
    w.clock.advance(5)
    show("ordinary login, ending with the client's acknowledgement", w.login(0))
    print(f"   central server has completed {len(w.cs.authenticated)} mutual authentications")

    w.clock.advance(5)
    show("password update", w.update_password(0, "a-brand-new-passphrase"))
    w.clock.advance(5)
    show("login with the new password", w.login(0))

    w.clock.advance(5)
    show("revocation, reason 'changing a health institution'", w.revoke(0, 3))
    w.clock.advance(5)
    where, verdict = show("login after revocation", w.login(0))
    print(f"\nlast attempt stopped at {where}: {verdict}")

    frames = [e.frame for e in w.net.transcript]
    print(f"{len(frames)} frames crossed the network, {sum(map(len, frames))} bytes in total")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
