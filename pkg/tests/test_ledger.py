from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from fabtee import crypto
from fabtee.encoding import ABSENT
from fabtee.errors import BadOrdererSignature, HashChainBreak, MissingField, SequenceGap
from fabtee.ledger import (
    ChaincodePolicy,
    Endorsement,
    GenesisConfig,
    Orderer,
    ReadSet,
    Transaction,
    TransactionProposal,
    Version,
    VersionedStore,
    WriteSet,
    check_block_header,
    commit_block,
    genesis_config,
    make_genesis,
    plain_policy_satisfied,
    read_block_stream,
    validate_block,
    write_block_stream,
)


class Chain:
    """A one-peer, one-client plain-chaincode ledger for substrate tests."""

    def __init__(self, seed=1, block_size=3):
        rng = crypto.Rng(seed)
        self.orderer_kp = crypto.keygen(rng)
        self.peer_kp = crypto.keygen(rng)
        self.client_kp = crypto.keygen(rng)
        self.rng = rng
        self.config = GenesisConfig(self.orderer_kp.public, b"svc", b"le",
                                    peers=(("p0", self.peer_kp.public),),
                                    clients=(("c", self.client_kp.public),),
                                    chaincodes=(ChaincodePolicy("kv", False, None, 1),))
        self.genesis = make_genesis(self.config)
        self.orderer = Orderer(self.orderer_kp, self.genesis, block_size)
        self.store = VersionedStore()
        self.store.last_hash = self.genesis.hash

    def tx(self, reads=(), writes=(), client_kp=None, endorser_kp=None):
        p = TransactionProposal("c", "kv", b"op", None, self.rng.bytes(8))
        p = p.signed_by(client_kp or self.client_kp)
        kp = endorser_kp or self.peer_kp
        e = Endorsement(p.digest(), "kv", "ok", ReadSet(tuple(reads)),
                        WriteSet(tuple((f"kv/{k}", v) for k, v in writes)), b"", kp.public)
        return Transaction(p, (e.signed_by(kp),))

    def policy(self, tx, store):
        return plain_policy_satisfied(tx, self.config)

    def commit(self, block):
        flags = validate_block(self.store, block, self.config, self.policy)
        return commit_block(self.store, block, flags)


def test_version_order_and_genesis_reserved():
    assert Version(1, 5) < Version(2, 0) < Version(2, 1)
    with pytest.raises(ValueError):
        Version(-1, 0)


def test_read_and_write_sets_reject_duplicates():
    with pytest.raises(ValueError):
        ReadSet((("a", ABSENT), ("a", ABSENT)))
    with pytest.raises(ValueError):
        WriteSet((("a", b"1"), ("a", b"2")))


def test_write_set_preserves_order():
    assert WriteSet((("b", b""), ("a", b""))).keys() == ["b", "a"]


def test_genesis_round_trip_and_missing_fields():
    chain = Chain()
    assert genesis_config(chain.genesis) == chain.config
    with pytest.raises(MissingField):
        make_genesis(replace(chain.config, peers=()))


def test_orderer_chains_and_signs_blocks():
    chain = Chain(block_size=2)
    for _ in range(5):
        chain.orderer.submit(chain.tx(writes=[("k", b"v")]))
    blocks = chain.orderer.cut_all()
    assert [b.seq for b in blocks] == [1, 2, 3]
    assert [len(b.transactions) for b in blocks] == [2, 2, 1]
    prev = chain.genesis
    for b in blocks:
        assert b.prev_hash == prev.hash and b.signature_valid(chain.orderer_kp.public)
        prev = b
    assert chain.orderer.cut_block() is None


def test_absent_reads_and_versions():
    chain = Chain()
    assert chain.store.get("kv/x") is ABSENT and chain.store.version("kv/x") is ABSENT
    chain.orderer.submit(chain.tx(reads=[("kv/x", ABSENT)], writes=[("x", b"1")]))
    rec = chain.commit(chain.orderer.cut_block())
    assert rec.flags == (True,)
    assert chain.store.get("kv/x") == (b"1", Version(1, 0))


def test_read_write_conflict_within_block():
    chain = Chain()
    chain.orderer.submit(chain.tx(reads=[("kv/x", ABSENT)], writes=[("x", b"1")]))
    chain.orderer.submit(chain.tx(reads=[("kv/x", ABSENT)], writes=[("x", b"2")]))
    rec = chain.commit(chain.orderer.cut_block())
    assert rec.flags == (True, False)
    assert chain.store.get("kv/x")[0] == b"1"


def test_invalid_signatures_and_namespaces_fail_validation():
    chain = Chain()
    rogue = crypto.keygen(crypto.Rng(99))
    chain.orderer.submit(chain.tx(writes=[("a", b"")], client_kp=rogue))
    chain.orderer.submit(chain.tx(writes=[("b", b"")], endorser_kp=rogue))
    bad_ns = chain.tx()
    e = bad_ns.endorsements[0]
    e = replace(e, write_set=WriteSet((("other/x", b""),))).signed_by(chain.peer_kp)
    chain.orderer.submit(Transaction(bad_ns.proposal, (e,)))
    assert chain.commit(chain.orderer.cut_block()).flags == (False, False, False)


def test_block_header_checks():
    chain = Chain()
    chain.orderer.submit(chain.tx())
    b1 = chain.orderer.cut_block()
    chain.orderer.submit(chain.tx())
    b2 = chain.orderer.cut_block()
    key = chain.orderer_kp.public
    with pytest.raises(SequenceGap):
        check_block_header(b2, 0, chain.genesis.hash, key)
    with pytest.raises(HashChainBreak):
        check_block_header(replace(b1, seq=1, prev_hash=bytes(32),
                                   orderer_signature=crypto.sign(chain.orderer_kp.secret,
                                                                 replace(b1, prev_hash=bytes(32)).header())),
                           0, chain.genesis.hash, key)
    with pytest.raises(BadOrdererSignature):
        check_block_header(replace(b1, data=b"x"), 0, chain.genesis.hash, key)


def test_block_stream_round_trip(tmp_path):
    chain = Chain()
    for _ in range(4):
        chain.orderer.submit(chain.tx(writes=[("k", b"v")]))
    blocks = chain.orderer.cut_all()
    path = tmp_path / "blocks.bin"
    write_block_stream(path, blocks)
    assert list(read_block_stream(path)) == blocks


ops = st.lists(st.tuples(st.sampled_from("abcd"), st.booleans(), st.binary(max_size=4)),
               min_size=1, max_size=25)


@given(ops, st.integers(min_value=1, max_value=5))
def test_replicas_agree_and_versions_only_advance(script, block_size):
    """Two stores fed the same block stream end with equal hashes; versions never regress."""
    chain = Chain(block_size=block_size)
    replica = VersionedStore()
    replica.last_hash = chain.genesis.hash
    for key, read, value in script:
        reads = [(f"kv/{key}", chain.store.version(f"kv/{key}"))] if read else []
        chain.orderer.submit(chain.tx(reads=reads, writes=[(key, value)]))
    for block in chain.orderer.cut_all():
        before = dict(chain.store.entries)
        chain.commit(block)
        flags = validate_block(replica, block, chain.config, chain.policy)
        commit_block(replica, block, flags)
        assert replica.state_hash() == chain.store.state_hash()
        for k, (_, ver) in before.items():
            assert chain.store.version(k) >= ver
