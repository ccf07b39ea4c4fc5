from fabtee.encoding import ABSENT
from fabtee.errors import AlreadyRegistered, ReportDataMismatch
from fabtee.registry import ERCC, RegistryEntry, ercc_lookup, registry_entry_ok, registry_key
from fabtee.tee import Platform
from fabtee.weaken import weakened


def test_setup_registers_every_enclave(net):
    policy = net.config.policy("auction")
    for peer in net.peers:
        pk = peer.enclave_keys["auction"]
        entry = ercc_lookup(net.reference.store, pk)
        assert isinstance(entry, RegistryEntry) and entry.peer_id == peer.peer_id
        assert registry_entry_ok(entry, policy.measurement, net.config.attestation_service_key)
        assert net.reference.store.get(registry_key(pk)) is not ABSENT
    assert ercc_lookup(net.reference.store, b"\x00" * 64) is ABSENT


def test_duplicate_registration_is_rejected(net):
    peer = net.peers[0]
    cce = peer.spawn_chaincode_enclave("auction", "per-chaincode")
    pk, quote = cce.setup()
    assert net.admin.register(peer, quote, pk).status == "ok"
    net.flush()
    res = net.admin.register(peer, quote, pk)
    assert (res.status, res.value) == ("rejected", AlreadyRegistered.__name__)


def test_quote_must_bind_presented_key(net):
    peer = net.peers[0]
    cce = peer.spawn_chaincode_enclave("auction", "per-chaincode")
    _, quote = cce.setup()
    other = peer.spawn_chaincode_enclave("auction", "per-chaincode")
    pk2, _ = other.setup()
    res = net.admin.register(peer, quote, pk2)
    assert res.value == ReportDataMismatch.__name__


def test_entries_from_uncertified_platforms_fail_validation(net):
    """A rogue platform's quote gets an invalid verdict; a peer-signed entry carrying it is not committed."""
    peer = net.peers[0]
    rogue = Platform("rogue", net.rng.fork("rogue"))
    cce = peer.spawn_chaincode_enclave("auction", "per-chaincode", platform=rogue)
    pk, quote = cce.setup()
    assert net.admin.register(peer, quote, pk).value == "InvalidAttestation"
    with weakened("attestation"):
        assert net.admin.register(peer, quote, pk).status == "ok"
    net.flush()
    assert ercc_lookup(net.reference.store, pk) is ABSENT


def test_registry_namespace():
    assert registry_key(b"\x01").startswith(ERCC + "/")
