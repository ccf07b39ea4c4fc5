"""Malicious-peer harness and the "secure up to resets" oracle.

The adversary controls peer ``p0`` completely: its store, block delivery,
sealed blobs, the enclave instances it runs and every host call those
enclaves make.  It colludes with one client (``mallory``) whose keys it
therefore holds.  It cannot read enclave memory or forge signatures of keys
it does not hold.

Everything the adversary obtains is recorded in an :class:`ObservationLog`.
:func:`check_security_up_to_resets` then asks, for every chaincode output in
the log, whether it equals ``F(s_k, t*)`` for the probe ``t*`` and some
committed prefix state ``s_k``; ``F`` is :class:`fabtee.auction.AuctionModel`.

Scripts are JSON documents (see ``docs/attack-schema.md``).  The shipped
corpus lives in ``fabtee/corpus``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable

from . import crypto
from .auction import AuctionModel, AuctionResult, ModelTx, Outcome
from .chaincode_enclave import ChaincodeEnclaveClient, open_result
from .encoding import ABSENT, encode, record
from .errors import ConfigError, FabteeError, ScriptReferenceError
from .ledger import (
    Endorsement,
    GENESIS_VERSION,
    ReadSet,
    Transaction,
    TransactionProposal,
    VersionedStore,
    WriteSet,
    commit_block,
    namespaced,
)
from .ledger_enclave import LedgerEnclaveClient, MetaResponse
from .network import Network, NetworkSettings, Peer, make_ocall
from .registry import ERCC, RegistryEntry, register_operation, registry_key
from .tee import EnclaveProgram, Platform, call, enclave_create, entry_point, local_attest, EnclaveCode

CHAINCODE = "auction"


class _Hidden:
    """Placeholder for a result the adversary cannot decrypt."""

    def __repr__(self) -> str:
        return "<hidden>"


HIDDEN = _Hidden()


# -- script format -------------------------------------------------------------


@dataclass(frozen=True)
class AttackAction:
    op: str
    params: dict = field(default_factory=dict)

    def get(self, name: str, default=None):
        return self.params.get(name, default)


@dataclass(frozen=True)
class AttackScript:
    name: str
    seed: int = 0
    description: str = ""
    settings: dict = field(default_factory=dict)
    steps: tuple = ()
    expect: tuple = ()  # error names that must be observed
    detects: tuple = ()  # weakening switches under which this script should expose a leak

    @classmethod
    def from_dict(cls, data: dict) -> "AttackScript":
        if not isinstance(data, dict) or "steps" not in data:
            raise ConfigError("attack script needs a 'steps' list")
        steps = []
        for i, raw in enumerate(data["steps"]):
            if not isinstance(raw, dict) or "op" not in raw:
                raise ConfigError(f"step {i}: expected an object with an 'op' field")
            params = {k: v for k, v in raw.items() if k != "op"}
            steps.append(AttackAction(raw["op"], params))
        return cls(name=data.get("name", "unnamed"), seed=int(data.get("seed", 0)),
                   description=data.get("description", ""), settings=dict(data.get("settings", {})),
                   steps=tuple(steps), expect=tuple(data.get("expect", ())),
                   detects=tuple(data.get("detects", ())))

    @classmethod
    def from_json(cls, text: str, source: str = "<script>") -> "AttackScript":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "AttackScript":
        path = Path(path)
        return cls.from_json(path.read_text(), str(path))

    def to_dict(self) -> dict:
        return {"name": self.name, "seed": self.seed, "description": self.description,
                "settings": self.settings, "expect": list(self.expect),
                "detects": list(self.detects),
                "steps": [{"op": a.op, **a.params} for a in self.steps]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def corpus_paths() -> list[Path]:
    root = resources.files("fabtee") / "corpus"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


def load_corpus() -> list[AttackScript]:
    return [AttackScript.load(p) for p in corpus_paths()]


# -- observations ----------------------------------------------------------------


@dataclass(frozen=True)
class Observation:
    step: int
    action: str
    kind: str  # "output", "rejected", "accepted", "tx"
    channel: str  # provenance: enclave / ledger view / call that produced it
    prefix: int  # committed valid chaincode transactions at observation time
    probe: ModelTx | None = None
    outcome: Outcome | None = None
    error: str | None = None

    def to_json(self) -> dict:
        out = {"step": self.step, "action": self.action, "kind": self.kind,
               "channel": self.channel, "prefix": self.prefix}
        if self.probe is not None:
            out["probe"] = {"client": self.probe.client, "function": self.probe.function,
                            "args": _jsonable(self.probe.args)}
        if self.outcome is not None:
            out["outcome"] = {"status": self.outcome.status,
                              "value": _jsonable(self.outcome.value),
                              "write_keys": sorted(self.outcome.write_keys)}
        if self.error is not None:
            out["error"] = self.error
        return out


def _jsonable(x):
    if x is HIDDEN:
        return "<hidden>"
    if isinstance(x, AuctionResult):
        return {"auction": x.auction, "winner": x.winner, "amount": x.amount}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, bytes):
        return x.hex()
    return x


@dataclass
class ObservationLog:
    script: str
    observations: list = field(default_factory=list)
    committed: list = field(default_factory=list)  # final committed ModelTx sequence

    def outputs(self) -> list[Observation]:
        return [o for o in self.observations if o.kind == "output"]

    def errors(self) -> set[str]:
        return {o.error for o in self.observations if o.error}

    def to_jsonl(self) -> str:
        return "".join(json.dumps(o.to_json(), sort_keys=True) + "\n" for o in self.observations)


# -- the oracle ------------------------------------------------------------------


def allowed_set(txs: Iterable[ModelTx], probe: ModelTx, model=AuctionModel) -> set[Outcome]:
    """``{F(s_k, probe) : k = 0..m}`` by sequential application from genesis."""
    state = model.initial()
    allowed = {model.apply(state, probe)[1]}
    for tx in txs:
        state, _ = model.apply(state, tx)
        allowed.add(model.apply(state, probe)[1])
    return allowed


def _reachable_states(txs, probes, depth, model):
    states = [model.initial()]
    for tx in txs:
        states.append(model.apply(states[-1], tx)[0])
    frontier = list(states)
    for _ in range(depth):
        nxt = []
        for s in frontier:
            for p in probes:
                nxt.append(model.apply(s, p)[0])
        states.extend(nxt)
        frontier = nxt
    return states


def outcome_matches(observed: Outcome, allowed: Outcome) -> bool:
    if observed.status != allowed.status or observed.write_keys != allowed.write_keys:
        return False
    return observed.value is HIDDEN or observed.value == allowed.value


@dataclass(frozen=True)
class Verdict:
    passed: bool
    checked: int
    violation: Observation | None = None
    allowed: frozenset = frozenset()

    def __bool__(self) -> bool:
        return self.passed

    def describe(self) -> str:
        if self.passed:
            return f"PASS ({self.checked} outputs checked)"
        v = self.violation
        return (f"FAIL at step {v.step} ({v.action} via {v.channel}): observed "
                f"{v.outcome}, allowed {sorted(map(repr, self.allowed))}")


def check_security_up_to_resets(log: ObservationLog, allowed: Callable = allowed_set,
                                mode: str = "single", depth: int = 1,
                                model=AuctionModel) -> Verdict:
    """Every chaincode output the adversary learned must be ``F(s_k, t*)`` for
    a committed prefix ``s_k`` at the time of observation.

    ``mode="chained"`` additionally admits states reached by applying up to
    ``depth`` earlier probes of the same log to a prefix state.
    """
    checked = 0
    seen_probes: list[ModelTx] = []
    for obs in log.outputs():
        prefix = log.committed[:obs.prefix]
        if mode == "single":
            candidates = allowed(prefix, obs.probe)
        else:
            candidates = {model.apply(s, obs.probe)[1]
                          for s in _reachable_states(prefix, seen_probes, depth, model)}
        checked += 1
        if not any(outcome_matches(obs.outcome, a) for a in candidates):
            return Verdict(False, checked, obs, frozenset(candidates))
        seen_probes.append(obs.probe)
    return Verdict(True, checked)


# -- impostor enclave ------------------------------------------------------------


class ImpostorLedger(EnclaveProgram):
    """Adversary-written enclave posing as a ledger enclave: it signs any
    metadata the host asks for.  Its measurement differs from the genuine one."""

    CODE_ID = "impostor-ledger"
    VERSION = "1.0"

    def __init__(self, ctx):
        super().__init__(ctx)
        self._keypair = crypto.keygen(ctx.rng)

    @entry_point
    def attest_local(self) -> tuple:
        return local_attest(self.ctx, crypto.digest(self._keypair.public)), self._keypair.public

    @entry_point
    def sign_meta(self, entries: tuple, nonce: bytes, block_seq: int) -> MetaResponse:
        resp = MetaResponse(entries, nonce, block_seq)
        return dataclasses.replace(resp, signature=crypto.sign(self._keypair.secret, resp.body()))


# -- the malicious host ----------------------------------------------------------


class AdversarialHost:
    """Answers host calls for one probe, optionally lying."""

    def __init__(self, adversary: "Adversary", le_name: str):
        self.adv = adversary
        self.le_name = le_name

    @property
    def ledger(self) -> LedgerEnclaveClient:
        return self.adv.ledger(self.le_name)

    @property
    def view(self) -> VersionedStore:
        return self.adv.view(self.le_name)

    def _served(self, key: str):
        if key in self.adv.substitutions:
            return self.adv.substitutions[key]
        entry = self.view.get(key)
        return ABSENT if entry is ABSENT else entry[0]

    def get_state(self, key: str):
        return self._served(key)

    def get_range(self, prefix: str) -> tuple:
        keys = {k for k, _, _ in self.view.range(prefix)}
        keys |= {k for k in self.adv.substitutions if k.startswith(prefix)}
        pairs = {k: self._served(k) for k in keys}
        pairs.update({k: v for k, v in self.adv.injections.items() if k.startswith(prefix)})
        return tuple(sorted(pairs.items()))

    def get_meta(self, keys: tuple, nonce: bytes):
        mode = self.adv.meta_mode
        if mode == "honest":
            resp = self.ledger.get_meta(keys, nonce)
            self.adv.meta_log.append(resp)
            return resp
        if mode == "replay":
            try:
                return self.adv.meta_log[self.adv.meta_index]
            except IndexError:
                raise ScriptReferenceError(f"no recorded meta response {self.adv.meta_index}") from None
        entries = []
        for key in keys:
            value = self._served(key)
            if value is ABSENT:
                entries.append((key, ABSENT, ABSENT))
            else:
                version = self.view.version(key)
                entries.append((key, crypto.digest(value),
                                GENESIS_VERSION if version is ABSENT else version))
        seq = self.ledger.status()[0]
        if mode == "impostor":
            return call(self.adv.impostor, "sign_meta", tuple(entries), nonce, seq)
        return MetaResponse(tuple(entries), nonce, seq, bytes(crypto.SIGNATURE_SIZE))


class Adversary:
    """State of the malicious peer across one script."""

    def __init__(self, net: Network, peer: Peer | None = None, colluder: str = "mallory",
                 seed: int = 0):
        self.net = net
        self.peer = peer or net.peers[0]
        self.colluder = net.client(colluder)
        self.rng = crypto.Rng(seed).fork("adversary")
        self.log = ObservationLog("")
        self.step = 0
        self.action = ""
        self._les: dict[str, tuple[LedgerEnclaveClient, VersionedStore]] = {}
        self._cces: dict[str, dict] = {}
        self.speculative: dict[str, Endorsement] = {}
        self.meta_log: list[MetaResponse] = []
        self.meta_mode = "honest"
        self.meta_index = -1
        self.substitutions: dict[str, bytes] = {}
        self.injections: dict[str, bytes] = {}
        self.pending_txs: list[tuple[int, str, bytes]] = []
        self._impostor = None
        self.rogue_platform = Platform("platform-rogue", self.rng.fork("rogue"))

    # -- artifact lookup --

    def ledger(self, name: str) -> LedgerEnclaveClient:
        if name == "main":
            return self.peer.ledger
        try:
            return self._les[name][0]
        except KeyError:
            raise ScriptReferenceError(f"no ledger enclave named {name!r}") from None

    def view(self, name: str) -> VersionedStore:
        if name == "main":
            return self.peer.store
        try:
            return self._les[name][1]
        except KeyError:
            raise ScriptReferenceError(f"no ledger enclave named {name!r}") from None

    def enclave(self, name: str) -> tuple[ChaincodeEnclaveClient, bytes]:
        if name == "main":
            return self.peer.enclaves[CHAINCODE], self.peer.enclave_keys[CHAINCODE]
        try:
            e = self._cces[name]
        except KeyError:
            raise ScriptReferenceError(f"no chaincode enclave named {name!r}") from None
        return e["client"], e["pk"]

    @property
    def impostor(self):
        if self._impostor is None:
            code = EnclaveCode.of(ImpostorLedger)
            self._impostor = enclave_create(self.peer.platform, code, self.rng.fork("impostor"))
        return self._impostor

    def full_key(self, key: str) -> str:
        return namespaced(CHAINCODE, key)

    # -- observations --

    def _prefix(self) -> int:
        return len(self.net.committed_ops())

    def observe(self, kind: str, channel: str, probe=None, outcome=None, error=None) -> None:
        self.log.observations.append(Observation(self.step, self.action, kind, channel,
                                                 self._prefix(), probe, outcome, error))

    def reject(self, channel: str, exc: Exception, probe=None) -> None:
        self.observe("rejected", channel, probe=probe, error=type(exc).__name__)

    # -- value sources --

    def resolve_value(self, source: dict, key: str) -> bytes:
        if not isinstance(source, dict):
            raise ScriptReferenceError("value source must be an object")
        if "hex" in source:
            return bytes.fromhex(source["hex"])
        if "speculative" in source:
            e = self.speculative.get(source["speculative"])
            if e is None:
                raise ScriptReferenceError(f"no speculative endorsement {source['speculative']!r}")
            wanted = self.full_key(source.get("key", key))
            for k, v in e.write_set.entries:
                if k == wanted:
                    return v
            raise ScriptReferenceError(f"speculative endorsement did not write {wanted!r}")
        if "stale" in source:
            entry = self.peer.store_at(self._snapshot_seq(source["stale"])).get(self.full_key(key))
            if entry is ABSENT:
                raise ScriptReferenceError(f"{key!r} was absent at that height")
            return entry[0]
        if "from_key" in source:
            entry = self.peer.store.get(self.full_key(source["from_key"]))
            if entry is ABSENT:
                raise ScriptReferenceError(f"{source['from_key']!r} is not committed")
            return entry[0]
        raise ScriptReferenceError(f"unknown value source {sorted(source)}")

    def _snapshot_seq(self, ref) -> int:
        seqs = self.peer.snapshot_seqs()
        if ref == "latest":
            return seqs[-1]
        if ref == "random":
            return self.rng.choice(seqs)
        if ref not in seqs:
            raise ScriptReferenceError(f"peer stored no snapshot at height {ref}")
        return ref

    def _block(self, ref, le_name: str):
        blocks = self.net.orderer.blocks
        if ref == "next":
            ref = self.ledger(le_name).status()[0] + 1
        elif ref == "random":
            ref = self.rng.randint(1, max(1, len(blocks) - 1))
        if not isinstance(ref, int) or not 1 <= ref < len(blocks):
            raise ScriptReferenceError(f"orderer emitted no block {ref!r}")
        return blocks[ref]

    # -- probing --

    def probe(self, proposal: TransactionProposal, enclave: str, le_name: str,
              probe: ModelTx, keypair=None, label: str | None = None) -> Endorsement | None:
        cce, _ = self.enclave(enclave)
        channel = f"cce:{enclave} le:{le_name}"
        try:
            e = cce.invoke(proposal, make_ocall(AdversarialHost(self, le_name)))
        except FabteeError as exc:
            self.reject(channel, exc, probe)
            return None
        if label:
            self.speculative[label] = e
        try:
            status, value = open_result(e, keypair)
        except FabteeError:
            status, value = e.status, HIDDEN
        keys = frozenset(k.split("/", 1)[1] for k in e.write_set.keys())
        self.observe("output", channel, probe=probe, outcome=Outcome(status, value, keys))
        return e

    # -- actions --

    def run(self, script: AttackScript) -> ObservationLog:
        self.log = ObservationLog(script.name)
        for i, action in enumerate(script.steps):
            self.step, self.action = i, action.op
            handler = getattr(self, f"do_{action.op}", None)
            if handler is None:
                raise ConfigError(f"step {i}: unknown op {action.op!r}")
            try:
                handler(action)
            except ScriptReferenceError as exc:
                if not action.get("optional"):
                    raise
                self.observe("rejected", "script", error=type(exc).__name__)
        self.log.committed = self.net.committed_ops()
        return self.log

    # honest background

    def do_invoke(self, a: AttackAction) -> None:
        client = self.net.client(a.get("client"))
        peers = None
        if a.get("peers"):
            peers = [self._peer(p) for p in a.get("peers")]
        client.invoke(a.get("fn"), *a.get("args", []), peers=peers, submit=a.get("submit", True))

    def _peer(self, pid: str) -> Peer:
        for p in self.net.peers:
            if p.peer_id == pid:
                return p
        raise ScriptReferenceError(f"no peer {pid!r}")

    def do_cut(self, a: AttackAction) -> None:
        self.net.flush()
        ref = self.net.reference
        done = []
        for entry in self.pending_txs:
            step, channel, digest = entry
            flag = _commit_flag(ref, digest)
            if flag is None:
                continue
            done.append(entry)
            if flag:
                self.observe("tx", channel, error=None)
            else:
                self.observe("tx", channel, error="InvalidTransaction")
        for entry in done:
            self.pending_txs.remove(entry)

    def do_admin_provision(self, a: AttackAction) -> None:
        cce, pk = self.enclave(a.get("enclave", "main"))
        try:
            self.net.admin.provision(cce, pk)
            self.observe("accepted", "admin:provision")
        except FabteeError as exc:
            self.reject("admin:provision", exc)

    def do_restart_peer(self, a: AttackAction) -> None:
        self.peer.crash()
        self.peer.restart()
        self.observe("accepted", "peer:restart")

    # colluding client

    def do_collude_invoke(self, a: AttackAction) -> None:
        fn, args = a.get("fn"), tuple(a.get("args", []))
        enclave, le_name = a.get("enclave", "main"), a.get("le", "main")
        _, pk = self.enclave(enclave)
        proposal = self.colluder.proposal(fn, *args, targets=(pk,), encrypt_result=True)
        probe = ModelTx(self.colluder.client_id, fn, args)
        e = self.probe(proposal, enclave, le_name, probe, self.colluder.keypair, a.get("label"))
        if e is not None and a.get("submit") and e.status == "ok":
            self.net.orderer.submit(Transaction(proposal, (e,)))
            self.pending_txs.append((self.step, f"submit:{fn}", proposal.digest()))

    def do_sweep(self, a: AttackAction) -> None:
        """Probe once against every stored snapshot (each a reset)."""
        for seq in self.peer.snapshot_seqs():
            name = f"sweep@{seq}"
            self._rollback(seq, name)
            self.do_collude_invoke(AttackAction("collude_invoke", {**a.params, "le": name}))
        self.do_collude_invoke(AttackAction("collude_invoke", {**a.params, "le": "main"}))

    def do_replay_proposal(self, a: AttackAction) -> None:
        txs = [tx for b in self.net.orderer.blocks[1:] for tx in b.transactions
               if tx.chaincode_id == CHAINCODE]
        try:
            tx = txs[a.get("index", -1)]
        except IndexError:
            raise ScriptReferenceError(f"orderer carried no proposal {a.get('index')}") from None
        probe = self.net.plaintext[tx.proposal.digest()]
        self.probe(tx.proposal, a.get("enclave", "main"), a.get("le", "main"), probe)

    # ledger-enclave manipulation

    def _rollback(self, seq: int, name: str) -> None:
        le = self.peer.spawn_ledger_enclave()
        le.restore(self.peer.load_snapshot(seq))
        self._les[name] = (le, self.peer.store_at(seq))

    def do_rollback_ledger_enclave(self, a: AttackAction) -> None:
        seq = self._snapshot_seq(a.get("snapshot", "latest"))
        name = a.get("as", f"old@{seq}")
        try:
            self._rollback(seq, name)
            self.observe("accepted", f"le:{name} restored@{seq}")
        except FabteeError as exc:
            self.reject(f"le:{name}", exc)

    def _feed(self, le_name: str, block, variant: str = "orderer") -> None:
        if variant == "forged":
            block = dataclasses.replace(block, orderer_signature=crypto.sign(
                self.peer.keypair.secret, block.header()))
        elif variant == "tampered":
            block = dataclasses.replace(block, transactions=block.transactions[:-1],
                                        data=block.data + b"\x00")
        elif variant != "orderer":
            raise ConfigError(f"unknown block variant {variant!r}")
        le = self.ledger(le_name)
        channel = f"le:{le_name} block {block.seq} ({variant})"
        try:
            flags = le.process_block(block)
        except FabteeError as exc:
            self.reject(channel, exc)
            return
        if le_name != "main":
            commit_block(self.view(le_name), block, flags)
        self.observe("accepted", channel)

    def do_feed_block(self, a: AttackAction) -> None:
        le_name = a.get("le", "main")
        self._feed(le_name, self._block(a.get("block", "next"), le_name), a.get("variant", "orderer"))

    def do_reorder_delivery(self, a: AttackAction) -> None:
        le_name = a.get("le", "main")
        for ref in a.get("blocks", []):
            self._feed(le_name, self._block(ref, le_name))

    def do_drop_message(self, a: AttackAction) -> None:
        le_name = a.get("le", "main")
        lo, hi = a.get("blocks")
        drop = set(a.get("drop") if isinstance(a.get("drop"), list) else [a.get("drop")])
        for ref in range(lo, hi + 1):
            if ref not in drop:
                self._feed(le_name, self._block(ref, le_name))

    # host-side lies

    def do_substitute_state_value(self, a: AttackAction) -> None:
        if a.get("clear"):
            self.substitutions.clear()
            self.injections.clear()
            return
        key = a.get("key")
        self.substitutions[self.full_key(key)] = self.resolve_value(a.get("source", {}), key)

    def do_inject_range_pair(self, a: AttackAction) -> None:
        key = a.get("key")
        self.injections[self.full_key(key)] = self.resolve_value(a.get("source", {}), key)

    def do_replay_meta_response(self, a: AttackAction) -> None:
        self.meta_mode, self.meta_index = "replay", a.get("index", -1)

    def do_meta(self, a: AttackAction) -> None:
        mode = a.get("mode", "honest")
        if mode not in ("honest", "replay", "forge", "impostor"):
            raise ConfigError(f"unknown meta mode {mode!r}")
        self.meta_mode, self.meta_index = mode, a.get("index", -1)

    # enclave lifecycle

    def do_restart_chaincode_enclave(self, a: AttackAction) -> None:
        old = self.peer.enclaves[CHAINCODE]
        old.instance.destroy()
        cce = self.peer.spawn_chaincode_enclave(CHAINCODE, self.peer.modes[CHAINCODE])
        try:
            cce.restore(self.peer.sealed_identities[CHAINCODE])
        except FabteeError as exc:
            self.reject("cce:main restore", exc)
            return
        self.peer.enclaves[CHAINCODE] = cce
        self.observe("accepted", "cce:main restored")

    def do_new_enclave(self, a: AttackAction) -> None:
        name = a.get("as")
        platform = self.rogue_platform if a.get("platform") == "rogue" else self.peer.platform
        cce = self.peer.spawn_chaincode_enclave(CHAINCODE, self.peer.modes[CHAINCODE], platform)
        pk, quote = cce.setup()
        self._cces[name] = {"client": cce, "pk": pk, "quote": quote}

    def do_register(self, a: AttackAction) -> None:
        """Registration through the honest admin and an honest peer; ``quote_of``
        splices another enclave's quote onto this enclave's key."""
        name = a.get("enclave")
        _, pk = self.enclave(name)
        donor = a.get("quote_of", name)
        if donor not in self._cces:
            raise ScriptReferenceError(f"host retained no quote for enclave {donor!r}")
        quote = self._cces[donor]["quote"]
        res = self.net.admin.register(self.net.reference, quote, pk)
        if res.status == "ok":
            self.observe("accepted", f"ercc:register {name}")
            self.pending_txs.append((self.step, f"register:{name}", res.proposal.digest()))
        else:
            self.observe("rejected", f"ercc:register {name}", error=res.value)

    def do_forge_registry_entry(self, a: AttackAction) -> None:
        """The malicious peer endorses a registry write itself, pairing
        ``enclave``'s key with the report and verdict of ``verdict_of``."""
        _, pk = self.enclave(a.get("enclave"))
        donor = ercc_entry_for(self.net, self.enclave(a.get("verdict_of", "main"))[1])
        if donor is None:
            raise ScriptReferenceError("donor enclave has no committed registry entry")
        entry = RegistryEntry(CHAINCODE, pk, donor.measurement, donor.report, donor.verdict,
                              self.peer.peer_id)
        op = register_operation(donor.report, pk, CHAINCODE)
        proposal = TransactionProposal(self.colluder.client_id, ERCC, op, None, self.rng.bytes(16))
        proposal = proposal.signed_by(self.colluder.keypair)
        key = registry_key(pk)
        e = Endorsement(proposal.digest(), ERCC, "ok", ReadSet(((key, ABSENT),)),
                        WriteSet(((key, encode(entry)),)), b"registered", self.peer.keypair.public)
        self.net.orderer.submit(Transaction(proposal, (e.signed_by(self.peer.keypair),)))
        self.pending_txs.append((self.step, "ercc:forged entry", proposal.digest()))

    def do_bind(self, a: AttackAction) -> None:
        name, target = a.get("enclave"), a.get("to", "main")
        cce, _ = self.enclave(name)
        if target == "impostor":
            report, key = call(self.impostor, "attest_local")
        elif target == "remote":
            report, key = self.net.reference.ledger.attest_local()
        else:
            report, key = self.ledger(target).attest_local()
        try:
            cce.bind_ledger(report, key)
            self.observe("accepted", f"cce:{name} bind {target}")
        except FabteeError as exc:
            self.reject(f"cce:{name} bind {target}", exc)

    def do_forge_endorsement(self, a: AttackAction) -> None:
        """Submit a transaction whose endorsement was not produced by a registered enclave."""
        fn, args = a.get("fn"), tuple(a.get("args", []))
        _, pk = self.enclave("main")
        proposal = self.colluder.proposal(fn, *args, targets=(pk,))
        signer = self.peer.keypair if a.get("signer") == "peer" else crypto.keygen(self.rng)
        writes = tuple((self.full_key(k), self.resolve_value(src, k))
                       for k, src in sorted(a.get("writes", {}).items()))
        e = Endorsement(proposal.digest(), CHAINCODE, "ok", ReadSet(), WriteSet(writes),
                        encode(("ok", None)), signer.public).signed_by(signer)
        self.net.orderer.submit(Transaction(proposal, (e,)))
        self.pending_txs.append((self.step, f"forged endorsement:{fn}", proposal.digest()))


def ercc_entry_for(net: Network, pk: bytes):
    from .registry import ercc_lookup
    entry = ercc_lookup(net.reference.store, pk)
    return entry if isinstance(entry, RegistryEntry) else None


def _commit_flag(peer: Peer, digest: bytes):
    for block, rec in zip(peer.blocks, peer.commits):
        for tx, ok in zip(block.transactions, rec.flags):
            if tx.proposal.digest() == digest:
                return ok
    return None


# -- entry points ------------------------------------------------------------------


def network_for(script: AttackScript) -> Network:
    settings = NetworkSettings(seed=script.seed)
    known = {f.name for f in dataclasses.fields(NetworkSettings)}
    unknown = set(script.settings) - known
    if unknown:
        raise ConfigError(f"unknown settings: {sorted(unknown)}")
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in script.settings.items()}
    return Network(settings, **kwargs).setup()


def run_attack(network: Network | None, script: AttackScript) -> ObservationLog:
    """Run ``script`` against ``network`` (built from the script if ``None``)."""
    net = network if network is not None else network_for(script)
    return Adversary(net, seed=script.seed).run(script)


# -- random scripts ------------------------------------------------------------------


BIDDERS = ("alice", "bob", "carol", "dave")


def random_script(seed: int, length: int = 24) -> AttackScript:
    """A well-formed script mixing honest traffic with adversarial actions.

    References to snapshots and blocks are symbolic (``random``/``next``) and
    resolved at run time from the script seed, so any script is replayable.
    """
    rng = crypto.Rng(seed).fork("generator")
    steps: list[dict] = [{"op": "invoke", "client": "mallory", "fn": "create", "args": ["m1"]},
                         {"op": "cut"}]
    shadow = 0
    closed = False
    for _ in range(length):
        r = rng.randint(0, 99)
        if r < 25:
            steps.append({"op": "invoke", "client": rng.choice(BIDDERS), "fn": "bid",
                          "args": [rng.randint(0, 50), "m1"]})
        elif r < 40:
            steps.append({"op": "cut"})
        elif r < 45 and not closed:
            steps += [{"op": "invoke", "client": "mallory", "fn": "close", "args": ["m1"]},
                      {"op": "cut"}]
            closed = True
        elif r < 60:
            fn = rng.choice(["evaluate", "bid", "close", "create", "noop"])
            args = {"evaluate": ["m1"], "bid": [rng.randint(0, 60), "m1"], "close": ["m1"],
                    "create": [rng.choice(["m1", "m2"])], "noop": []}[fn]
            le = f"s{rng.randint(0, shadow - 1)}" if shadow and rng.randint(0, 1) else "main"
            steps.append({"op": "collude_invoke", "fn": fn, "args": args, "le": le})
        elif r < 70:
            steps.append({"op": "rollback_ledger_enclave", "snapshot": "random", "as": f"s{shadow}"})
            shadow += 1
        elif r < 78 and shadow:
            le = f"s{rng.randint(0, shadow - 1)}"
            steps.append({"op": "feed_block", "le": le,
                          "block": rng.choice(["next", "random", "next"]),
                          "variant": rng.choice(["orderer", "orderer", "forged", "tampered"]),
                          "optional": True})
        elif r < 84:
            steps.append({"op": "substitute_state_value", "key": "m1",
                          "source": {"stale": "random"}, "optional": True})
            steps.append({"op": "collude_invoke", "fn": "evaluate", "args": ["m1"]})
            steps.append({"op": "substitute_state_value", "clear": True})
        elif r < 90:
            steps.append({"op": "collude_invoke", "fn": "bid", "args": [1, "m1"]})
            steps.append({"op": "replay_meta_response", "index": 0})
            steps.append({"op": "collude_invoke", "fn": "evaluate", "args": ["m1"]})
            steps.append({"op": "meta", "mode": "honest"})
        else:
            steps.append({"op": "sweep", "fn": "evaluate", "args": ["m1"]})
    steps.append({"op": "cut"})
    return AttackScript.from_dict({"name": f"random-{seed}", "seed": seed,
                                   "settings": {"snapshot_interval": 1, "block_size": 3},
                                   "steps": steps})
