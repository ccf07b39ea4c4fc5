"""Peers, clients, the admin, and a deterministic network fixture.

A :class:`Peer` is the untrusted host: it owns the committed store, the
block log, sealed snapshots, and the enclave instances it runs.  Its commit
pipeline validates every block itself and has the ledger enclave crosscheck
the per-transaction decisions before applying them.

:class:`Network` wires a genesis configuration, a solo orderer, peers on
certified platforms, and clients together, and runs the bootstrap
(ledger-enclave init, chaincode-enclave setup, registration, binding, key
provisioning).  Everything is driven by one seed.
"""

from __future__ import annotations

import contextlib
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import crypto
from .chaincode_enclave import (
    ChaincodeEnclaveClient,
    Operation,
    OperationPayload,
    Shim,
    chaincode_enclave_code,
    execute,
    open_result,
    operation_ad,
    CHAINCODE_PROGRAMS,
)
from .auction import ModelTx
from .encoding import ABSENT, decode, decode_as, encode
from .errors import CrosscheckMismatch, FabteeError, NotReady
from .ledger import (
    Block,
    ChaincodePolicy,
    CommitRecord,
    Endorsement,
    GenesisConfig,
    Orderer,
    Transaction,
    TransactionProposal,
    VersionedStore,
    commit_block,
    make_genesis,
    validate_block,
)
from .ledger_enclave import LEDGER_ENCLAVE_CODE, LedgerEnclaveClient, MetaResponse
from .registry import (
    ERCC,
    RegistryEntry,
    client_verify_enclave,
    ercc_lookup,
    ercc_register,
    make_peer_policy,
    register_operation,
)
from .tee import AttestationService, Platform, Profiler, SealedBlob, enclave_create

# -- host-side state access ----------------------------------------------------


class HostView:
    """Honest answers to a chaincode enclave's host calls."""

    def __init__(self, store: VersionedStore, ledger: LedgerEnclaveClient | None,
                 profiler: Profiler | None = None):
        self.store = store
        self.ledger = ledger
        self.profiler = profiler

    def get_state(self, key: str):
        entry = self.store.get(key)
        return ABSENT if entry is ABSENT else entry[0]

    def get_range(self, prefix: str) -> tuple:
        return tuple((k, v) for k, v, _ in self.store.range(prefix))

    def get_meta(self, keys: tuple, nonce: bytes):
        if self.ledger is None:
            # native path: unsigned metadata straight from the store
            return MetaResponse(tuple((k, ABSENT, self.store.version(k)) for k in keys), nonce, 0)
        span = self.profiler.span("ledger_enclave") if self.profiler else contextlib.nullcontext()
        with span:
            return self.ledger.get_meta(keys, nonce)


def make_ocall(host):
    """Adapt a host object to the byte-level ocall interface of :func:`tee.call`."""
    def ocall(name: str, args: bytes) -> bytes:
        decoded = decode(args)
        if name == "get_state":
            return encode(host.get_state(*decoded))
        if name == "get_range":
            return encode(host.get_range(*decoded))
        if name == "get_meta":
            return encode(host.get_meta(*decoded))
        raise FabteeError(f"unknown ocall {name!r}")
    return ocall


# -- peers ---------------------------------------------------------------------


class Peer:
    def __init__(self, peer_id: str, platform: Platform, keypair: crypto.KeyPair, genesis: Block,
                 service: AttestationService, rng: crypto.Rng, snapshot_interval: int = 10,
                 data_dir: str | Path | None = None):
        if snapshot_interval < 1:
            raise ValueError("snapshot_interval must be positive")
        self.peer_id = peer_id
        self.platform = platform
        self.keypair = keypair
        self.genesis = genesis
        self.config: GenesisConfig = decode_as(genesis.data, GenesisConfig)
        self.service = service
        self.rng = rng
        self.snapshot_interval = snapshot_interval
        self.data_dir = Path(data_dir) if data_dir else None
        self.store = VersionedStore()
        self.store.last_hash = genesis.hash
        self.policy = make_peer_policy(self.config)
        self.blocks: list[Block] = []
        self.commits: list[CommitRecord] = []
        self.halted = False
        self.fault: Exception | None = None
        self.profiler: Profiler | None = None
        self.ledger: LedgerEnclaveClient | None = None
        self.enclaves: dict[str, ChaincodeEnclaveClient] = {}
        self.enclave_keys: dict[str, bytes] = {}
        self.sealed_identities: dict[str, SealedBlob] = {}
        self.modes: dict[str, str] = {}
        self._snapshots: dict[int, SealedBlob] = {}
        self._spawned = 0

    def __repr__(self) -> str:
        return f"Peer({self.peer_id!r}, height={self.store.height})"

    def _rng(self, label: str) -> crypto.Rng:
        self._spawned += 1
        return self.rng.fork(f"{label}#{self._spawned}")

    # -- ledger enclave --

    def spawn_ledger_enclave(self) -> LedgerEnclaveClient:
        inst = enclave_create(self.platform, LEDGER_ENCLAVE_CODE, self._rng("le"))
        inst.profiler = self.profiler
        return LedgerEnclaveClient(inst)

    def bootstrap(self) -> bytes:
        self.ledger = self.spawn_ledger_enclave()
        pk = self.ledger.init(self.genesis)
        self._snapshot(0)
        return pk

    def _snapshot(self, seq: int) -> None:
        blob = self.ledger.snapshot()
        self._snapshots[seq] = blob
        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            (self.data_dir / f"snapshot_{seq}.sealed").write_bytes(encode(blob))

    def snapshot_seqs(self) -> list[int]:
        if self.data_dir is not None and self.data_dir.exists():
            return sorted(int(p.stem.split("_")[1]) for p in self.data_dir.glob("snapshot_*.sealed"))
        return sorted(self._snapshots)

    def load_snapshot(self, seq: int) -> SealedBlob:
        if self.data_dir is not None:
            path = self.data_dir / f"snapshot_{seq}.sealed"
            if path.exists():
                return decode_as(path.read_bytes(), SealedBlob)
        return self._snapshots[seq]

    # -- chaincode enclaves --

    def spawn_chaincode_enclave(self, chaincode: str, mode: str,
                                platform: Platform | None = None) -> ChaincodeEnclaveClient:
        code = chaincode_enclave_code(chaincode, self.config.ledger_enclave_measurement, mode)
        inst = enclave_create(platform or self.platform, code, self._rng(f"cce-{chaincode}"))
        inst.profiler = self.profiler
        return ChaincodeEnclaveClient(inst)

    def install(self, chaincode: str, mode: str) -> tuple:
        """Create, set up and bind a chaincode enclave; returns ``(PK_CC, quote)``."""
        cce = self.spawn_chaincode_enclave(chaincode, mode)
        pk, quote = cce.setup()
        report, le_key = self.ledger.attest_local()
        cce.bind_ledger(report, le_key)
        self.enclaves[chaincode] = cce
        self.enclave_keys[chaincode] = pk
        self.modes[chaincode] = mode
        return pk, quote

    def seal_identities(self) -> None:
        """Persist each chaincode enclave's sealed identity (once, after provisioning)."""
        for name, cce in self.enclaves.items():
            self.sealed_identities[name] = cce.seal_identity()

    def set_profiler(self, profiler: Profiler | None) -> None:
        self.profiler = profiler
        if self.ledger is not None:
            self.ledger.instance.profiler = profiler
        for cce in self.enclaves.values():
            cce.instance.profiler = profiler

    # -- commit pipeline --

    def deliver(self, block: Block) -> CommitRecord:
        if self.halted:
            raise CrosscheckMismatch(f"{self.peer_id} halted")
        flags = validate_block(self.store, block, self.config, self.policy)
        le_flags = self.ledger.process_block(block)
        if tuple(flags) != tuple(le_flags):
            self.halted = True
            raise CrosscheckMismatch(f"{self.peer_id}: block {block.seq} decisions differ")
        record = commit_block(self.store, block, flags)
        self.blocks.append(block)
        self.commits.append(record)
        if block.seq % self.snapshot_interval == 0:
            self._snapshot(block.seq)
        return record

    def store_at(self, seq: int) -> VersionedStore:
        """Committed store as of height ``seq``, rebuilt from the block log."""
        store = VersionedStore()
        store.last_hash = self.genesis.hash
        for block, rec in zip(self.blocks, self.commits):
            if block.seq > seq:
                break
            commit_block(store, block, rec.flags)
        return store

    # -- endorsement --

    def host_view(self, ledger: LedgerEnclaveClient | None = None) -> HostView:
        return HostView(self.store, ledger or self.ledger, self.profiler)

    def endorse(self, proposal: TransactionProposal) -> Endorsement:
        if proposal.chaincode_id == ERCC:
            return ercc_register(proposal, self.store, self.config, self.service,
                                 self.peer_id, self.keypair)
        cce = self.enclaves.get(proposal.chaincode_id)
        if cce is None:
            raise NotReady(f"{self.peer_id} hosts no enclave for {proposal.chaincode_id}")
        return cce.invoke(proposal, make_ocall(self.host_view()))

    def endorse_native(self, proposal: TransactionProposal) -> Endorsement:
        """Unprotected baseline: plaintext operation, no enclave, no state verification."""
        payload = decode_as(proposal.operation, OperationPayload)
        program = CHAINCODE_PROGRAMS[proposal.chaincode_id]()
        shim = Shim(proposal.chaincode_id, HostView(self.store, None), self.rng,
                    None, None, self.profiler.span if self.profiler else None)
        status, result, write_set = execute(program, shim, proposal.client_id, payload.operation)
        e = Endorsement(proposal.digest(), proposal.chaincode_id, status, shim.read_set(),
                        write_set, result, self.keypair.public)
        return e.signed_by(self.keypair)

    # -- crash / recovery --

    def crash(self) -> None:
        """Kill all enclaves; host storage (store, blocks, sealed blobs) survives."""
        if self.ledger is not None:
            self.ledger.instance.destroy()
        for cce in self.enclaves.values():
            cce.instance.destroy()

    def restart(self) -> int:
        """Restore the ledger enclave from the latest snapshot and catch it up
        from the block log; restore chaincode enclaves from sealed identities.

        Returns the snapshot height used.
        """
        seq = self.snapshot_seqs()[-1]
        le = self.spawn_ledger_enclave()
        le.restore(self.load_snapshot(seq))
        for block, rec in zip(self.blocks, self.commits):
            if block.seq <= seq:
                continue
            if tuple(le.process_block(block)) != rec.flags:
                self.halted = True
                raise CrosscheckMismatch(f"{self.peer_id}: replay of block {block.seq} differs")
        self.ledger = le
        for name, blob in self.sealed_identities.items():
            cce = self.spawn_chaincode_enclave(name, self.modes[name])
            cce.restore(blob)
            self.enclaves[name] = cce
        return seq

    # -- trusted state transfer --

    def transfer_from(self, server: "Peer") -> tuple:
        """Fast-forward this peer's ledger enclave and store from ``server``.

        The serving host supplies values from its own store; the requesting
        enclave accepts them only if they hash to what the serving enclave
        attested.
        """
        delta, report = server.ledger.transfer_serve(self.genesis.hash, self.ledger.metadata())
        verdict = self.service.verify(report)
        values = tuple(server.store.get(k)[0] for k, _, _ in delta.entries)
        summary = self.ledger.transfer_apply(delta, values, verdict, report)
        self.adopt_transfer(delta, values, server)
        return summary

    def adopt_transfer(self, delta, values, server: "Peer") -> None:
        for (key, _, version), value in zip(delta.entries, values):
            self.store.entries[key] = (value, version)
        self.store.height = delta.to_seq
        self.store.last_hash = delta.to_block_hash
        missing = [b for b in server.blocks if b.seq > len(self.blocks)]
        records = [r for r in server.commits if r.seq > len(self.commits)]
        self.blocks.extend(missing)
        self.commits.extend(records)


# -- clients -------------------------------------------------------------------


@dataclass
class InvokeResult:
    status: str  # "ok", "error", or "rejected" (enclave refused)
    value: Any
    proposal: TransactionProposal | None = field(default=None, repr=False)
    transaction: Transaction | None = field(default=None, repr=False)
    endorsements: tuple = field(default=(), repr=False)

    @property
    def submitted(self) -> bool:
        return self.transaction is not None


class Client:
    def __init__(self, client_id: str, keypair: crypto.KeyPair, network: "Network"):
        self.client_id = client_id
        self.keypair = keypair
        self.network = network
        self.rng = network.rng.fork(f"client/{client_id}")
        self.data_key = self.rng.bytes(crypto.KEY_SIZE)

    def __repr__(self) -> str:
        return f"Client({self.client_id!r})"

    def enclave_key(self, peer: Peer, chaincode: str) -> bytes:
        """The peer's advertised enclave key, accepted only if committed and verified."""
        pk = peer.enclave_keys[chaincode]
        entry = ercc_lookup(self.network.reference.store, pk)
        policy = self.network.config.policy(chaincode)
        if not isinstance(entry, RegistryEntry) or not client_verify_enclave(
                entry, policy.measurement, self.network.config.attestation_service_key):
            raise NotReady(f"enclave at {peer.peer_id} is not registered")
        return pk

    def proposal(self, function: str, *args, targets=(), encrypt_result: bool = True,
                 chaincode: str = "auction") -> TransactionProposal:
        nonce = self.rng.bytes(16)
        result_key = self.keypair.public if encrypt_result else None
        payload = encode(OperationPayload(Operation(function, tuple(args)), self.data_key))
        if self.network.native:
            operation = payload
        else:
            ad = operation_ad(chaincode, self.client_id, nonce, result_key)
            operation = tuple(crypto.hybrid_encrypt(pk, payload, self.rng, ad) for pk in targets)
        proposal = TransactionProposal(self.client_id, chaincode, operation, result_key, nonce)
        proposal = proposal.signed_by(self.keypair)
        self.network.note_plaintext(proposal, function, tuple(args))
        return proposal

    def open(self, endorsement: Endorsement):
        return open_result(endorsement, self.keypair)

    def invoke(self, function: str, *args, peers=None, submit: bool = True,
               encrypt_result: bool | None = None) -> InvokeResult:
        net = self.network
        peers = list(peers) if peers is not None else net.endorsers()
        if encrypt_result is None:
            encrypt_result = not (function == "evaluate" and net.settings.public_outcome)
        targets = () if net.native else tuple(self.enclave_key(p, "auction") for p in peers)
        proposal = self.proposal(function, *args, targets=targets, encrypt_result=encrypt_result)
        endorsements = []
        for peer in peers:
            try:
                e = peer.endorse_native(proposal) if net.native else peer.endorse(proposal)
            except FabteeError as exc:
                return InvokeResult("rejected", type(exc).__name__, proposal)
            endorsements.append(e)
        tag, value = self.open(endorsements[0])
        if tag != "ok":
            return InvokeResult("error", value, proposal, None, tuple(endorsements))
        tx = Transaction(proposal, tuple(endorsements))
        if submit:
            net.orderer.submit(tx)
        return InvokeResult("ok", value, proposal, tx, tuple(endorsements))


class Admin(Client):
    """Registers enclaves and provisions per-chaincode state keys."""

    def __init__(self, client_id: str, keypair: crypto.KeyPair, network: "Network"):
        super().__init__(client_id, keypair, network)
        self.state_key = self.rng.bytes(crypto.KEY_SIZE)
        self.provisioned: set[bytes] = set()

    def register(self, peer: Peer, quote, public_key: bytes, chaincode: str = "auction",
                 submit: bool = True) -> InvokeResult:
        op = register_operation(quote, public_key, chaincode)
        proposal = TransactionProposal(self.client_id, ERCC, op, None, self.rng.bytes(16))
        proposal = proposal.signed_by(self.keypair)
        try:
            e = peer.endorse(proposal)
        except FabteeError as exc:
            return InvokeResult("rejected", type(exc).__name__, proposal)
        tx = Transaction(proposal, (e,))
        if submit:
            self.network.orderer.submit(tx)
        return InvokeResult("ok", None, proposal, tx, (e,))

    def provision(self, cce: ChaincodeEnclaveClient, public_key: bytes,
                  chaincode: str = "auction") -> bool:
        """Hand the state key to an enclave whose registration is committed and valid."""
        entry = ercc_lookup(self.network.reference.store, public_key)
        policy = self.network.config.policy(chaincode)
        if not isinstance(entry, RegistryEntry) or not client_verify_enclave(
                entry, policy.measurement, self.network.config.attestation_service_key):
            raise NotReady("enclave is not registered")
        env = crypto.hybrid_encrypt(public_key, self.state_key, self.rng, b"provision")
        cce.provision_key(env)
        self.provisioned.add(public_key)
        return True


# -- fixture -------------------------------------------------------------------


@dataclass
class NetworkSettings:
    seed: int = 42
    peers: int = 3
    clients: tuple = ("alice", "bob", "carol", "dave", "mallory")
    block_size: int = 10
    snapshot_interval: int = 10
    endorsements: int = 1
    mode: str = "per-chaincode"  # or "none", "client-based", "native"
    public_outcome: bool = True
    data_dir: str | None = None

    @property
    def native(self) -> bool:
        return self.mode == "native"


class Network:
    """Genesis, orderer, peers and clients for one deterministic run."""

    def __init__(self, settings: NetworkSettings | None = None, **overrides):
        settings = dataclasses.replace(settings or NetworkSettings(), **overrides)
        if settings.peers < 1:
            raise ValueError("at least one peer is required")
        if settings.endorsements > max(1, settings.peers - 1) and settings.peers > 1:
            raise ValueError("endorsement policy needs more honest peers than configured")
        self.settings = settings
        self.native = settings.native
        self.rng = crypto.Rng(settings.seed)
        self.service = AttestationService(self.rng.fork("attestation-service"))
        self.orderer_keypair = crypto.keygen(self.rng.fork("orderer"))
        self.platforms = []
        peer_keys = []
        for i in range(settings.peers):
            platform = Platform(f"platform-{i}", self.rng.fork(f"platform-{i}"))
            self.service.certify(platform)
            self.platforms.append(platform)
            peer_keys.append((f"p{i}", crypto.keygen(self.rng.fork(f"peer-key-{i}"))))
        client_ids = ("admin",) + tuple(settings.clients)
        client_keys = {c: crypto.keygen(self.rng.fork(f"client-key/{c}")) for c in client_ids}
        self.ledger_measurement = LEDGER_ENCLAVE_CODE.measurement
        if self.native:
            cc_policy = ChaincodePolicy("auction", False, None, settings.endorsements)
        else:
            code = chaincode_enclave_code("auction", self.ledger_measurement, settings.mode)
            cc_policy = ChaincodePolicy("auction", True, code.measurement, settings.endorsements)
        self.config = GenesisConfig(
            orderer_public_key=self.orderer_keypair.public,
            attestation_service_key=self.service.public_key,
            ledger_enclave_measurement=self.ledger_measurement,
            peers=tuple((pid, kp.public) for pid, kp in peer_keys),
            clients=tuple((c, kp.public) for c, kp in client_keys.items()),
            chaincodes=(ChaincodePolicy(ERCC, False, None, 1), cc_policy),
        )
        self.genesis = make_genesis(self.config)
        self.orderer = Orderer(self.orderer_keypair, self.genesis, settings.block_size)
        self.peers: list[Peer] = []
        for i, (pid, kp) in enumerate(peer_keys):
            data_dir = Path(settings.data_dir) / pid if settings.data_dir else None
            self.peers.append(Peer(pid, self.platforms[i], kp, self.genesis, self.service,
                                   self.rng.fork(f"peer/{pid}"), settings.snapshot_interval,
                                   data_dir))
        self.plaintext: dict[bytes, ModelTx] = {}
        self.admin = Admin("admin", client_keys["admin"], self)
        self.clients = {c: Client(c, client_keys[c], self) for c in settings.clients}
        self.ready = False

    # -- helpers --

    @property
    def reference(self) -> Peer:
        """Honest peer whose committed state serves as ground truth."""
        return self.peers[1] if len(self.peers) > 1 else self.peers[0]

    def endorsers(self) -> list[Peer]:
        honest = self.peers[1:] if len(self.peers) > 1 else self.peers
        return honest[:self.settings.endorsements]

    def client(self, name: str) -> Client:
        return self.admin if name == "admin" else self.clients[name]

    def note_plaintext(self, proposal: TransactionProposal, function: str, args: tuple) -> None:
        """Ground truth for the security oracle; never visible to the adversary."""
        self.plaintext[proposal.digest()] = ModelTx(proposal.client_id, function, args)

    # -- bootstrap --

    def setup(self) -> "Network":
        for peer in self.peers:
            peer.bootstrap()
        if not self.native:
            installed = [(peer, *peer.install("auction", self.settings.mode)) for peer in self.peers]
            for peer, pk, quote in installed:
                res = self.admin.register(peer, quote, pk)
                if res.status != "ok":
                    raise NotReady(f"registration at {peer.peer_id} failed: {res.value}")
            self.flush()
            if self.settings.mode == "per-chaincode":
                for peer, pk, _ in installed:
                    self.admin.provision(peer.enclaves["auction"], pk)
            for peer in self.peers:
                peer.seal_identities()
        self.ready = True
        return self

    # -- ordering / delivery --

    def flush(self) -> list[Block]:
        """Cut every pending transaction into blocks and deliver them to all live peers."""
        blocks = self.orderer.cut_all()
        for block in blocks:
            self.deliver(block)
        return blocks

    def deliver(self, block: Block, peers=None) -> None:
        """Deliver to each live peer; a peer whose pipeline rejects the block halts."""
        for peer in peers if peers is not None else self.peers:
            if peer.halted:
                continue
            try:
                peer.deliver(block)
            except FabteeError as exc:
                peer.halted = True
                peer.fault = exc

    def committed_ops(self, peer: Peer | None = None) -> list[ModelTx]:
        """Valid auction transactions in commit order, as plaintext operations."""
        peer = peer or self.reference
        out = []
        for block, rec in zip(peer.blocks, peer.commits):
            for tx, ok in zip(block.transactions, rec.flags):
                if ok and tx.chaincode_id == "auction":
                    out.append(self.plaintext[tx.proposal.digest()])
        return out

    def state_hashes(self) -> list[bytes]:
        return [p.store.state_hash() for p in self.peers]
