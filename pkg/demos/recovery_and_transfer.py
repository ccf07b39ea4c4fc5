"""Crash recovery from sealed state, then a lagging peer catching up.

A peer is killed and restarted: its ledger enclave resumes from the latest
sealed snapshot and its chaincode enclave from its sealed identity, so the
registered key keeps endorsing without a new attestation.  A second peer
misses 20 blocks and fast-forwards through an attested state delta.

    python3 demos/recovery_and_transfer.py
"""

from fabtee.errors import ValueHashMismatch
from fabtee.network import Network, NetworkSettings


def main() -> None:
    net = Network(NetworkSettings(seed=3, block_size=1, snapshot_interval=5)).setup()
    mallory = net.clients["mallory"]
    mallory.invoke("create", "vase")
    net.flush()
    for i in range(7):
        net.clients[("alice", "bob")[i % 2]].invoke("bid", i, "vase")
    net.flush()

    peer = net.reference
    key = peer.enclave_keys["auction"]
    peer.crash()
    used = peer.restart()
    print(f"{peer.peer_id} restarted from snapshot {used}, height {peer.store.height}")
    res = net.clients["alice"].invoke("bid", 40, "vase")
    net.flush()
    print("same enclave key:", res.endorsements[0].endorser_id == key,
          "| committed:", net.reference.commits[-1].flags)

    lagging, server = net.peers[2], net.peers[1]
    for i in range(20):
        net.clients["bob"].invoke("bid", 41 + i, "vase")
        net.deliver(net.orderer.cut_block(), peers=net.peers[:2])
    print(f"{lagging.peer_id} at height {lagging.store.height}, {server.peer_id} at {server.store.height}")

    delta, quote = server.ledger.transfer_serve(lagging.genesis.hash, lagging.ledger.metadata())
    verdict = net.service.verify(quote)
    values = [server.store.get(k)[0] for k, _, _ in delta.entries]
    try:
        lagging.ledger.transfer_apply(delta, (b"forged",) + tuple(values[1:]), verdict, quote)
    except ValueHashMismatch as exc:
        print("tampered value rejected:", exc)
    lagging.transfer_from(server)
    same = lagging.ledger.metadata() == server.ledger.metadata()
    print(f"after transfer: height {lagging.store.height}, metadata identical: {same}")


if __name__ == "__main__":
    main()
