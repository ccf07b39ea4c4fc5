"""A sealed-bid auction on three peers, start to finish.

Bids travel encrypted to the chaincode enclaves and are stored encrypted on
the ledger; only the evaluate result (winner and price) becomes public.

    python3 demos/sealed_bid_auction.py
"""

from fabtee.auction import BidRecord
from fabtee.encoding import encode
from fabtee.network import Network, NetworkSettings


def main() -> None:
    net = Network(NetworkSettings(seed=1)).setup()
    mallory, alice, bob, carol = (net.clients[c] for c in ("mallory", "alice", "bob", "carol"))
    print("peers:", ", ".join(p.peer_id for p in net.peers), "| endorsing at", net.reference.peer_id)

    mallory.invoke("create", "lamp", "a brass lamp")
    net.flush()
    for client, amount in ((alice, 10), (bob, 25), (carol, 25)):
        res = client.invoke("bid", amount, "lamp")
        print(f"{client.client_id:8s} bids {amount:3d} -> {res.status}")
    net.flush()

    early = mallory.invoke("evaluate", "lamp")
    print("evaluate before close ->", early.status, early.value)

    mallory.invoke("close", "lamp")
    net.flush()
    late = alice.invoke("bid", 99, "lamp")
    print("bid after close ->", late.status, late.value)

    result = mallory.invoke("evaluate", "lamp")
    net.flush()
    print("result:", result.value)

    stored = net.reference.store.get("auction/lamp.bob")[0]
    plain = encode(BidRecord("lamp", "bob", 25))
    print(f"bob's bid on the ledger: {len(stored)} bytes, plaintext visible: {plain in stored}")
    print("replica state hashes agree:", len(set(net.state_hashes())) == 1)


if __name__ == "__main__":
    main()
