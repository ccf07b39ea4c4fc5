"""Sealed-bid auction chaincode and its functional model.

State layout under the ``auction`` namespace:

* ``<name>``          AuctionRecord (status active -> closed -> evaluated)
* ``<name>/bids``     empty placeholder written at creation
* ``<name>.<client>`` BidRecord, one per bidder; a later bid overwrites
* ``<name>/result``   AuctionResult written by evaluate

Closing is the barrier: a bid endorsed before the close but ordered after it
read the old auction record and fails the version check, and evaluate only
runs once a committed, ledger-verified record says ``closed``.

:class:`AuctionModel` restates the same rules as a pure function on plain
dictionaries.  It shares no code with :class:`AuctionChaincode` and is used
as the reference when checking what an adversary could have learned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .chaincode_enclave import ChaincodeProgram, Shim, register_chaincode
from .encoding import decode_as, encode, record
from .errors import ChaincodeError

CHAINCODE_ID = "auction"

ACTIVE, CLOSED, EVALUATED = "active", "closed", "evaluated"
_FORBIDDEN = set("./#")


@record
@dataclass(frozen=True)
class AuctionRecord:
    name: str
    description: str
    status: str
    auctioneer: str


@record
@dataclass(frozen=True)
class BidRecord:
    auction: str
    bidder: str
    amount: int


@record
@dataclass(frozen=True)
class AuctionResult:
    auction: str
    winner: str | None  # None when nobody bid
    amount: int | None


def bid_key(auction: str, client: str) -> str:
    return f"{auction}.{client}"


def placeholder_key(auction: str) -> str:
    return f"{auction}/bids"


def result_key(auction: str) -> str:
    return f"{auction}/result"


def pick_winner(bids) -> tuple[str, int] | None:
    """First price; ties go to the lexicographically smallest client id."""
    best = None
    for bidder, amount in bids:
        if best is None or amount > best[1] or (amount == best[1] and bidder < best[0]):
            best = (bidder, amount)
    return best


def _valid_name(name) -> bool:
    return isinstance(name, str) and bool(name) and not (_FORBIDDEN & set(name))


def _valid_amount(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 0


@register_chaincode
class AuctionChaincode(ChaincodeProgram):
    name = CHAINCODE_ID
    version = "1.0"

    def invoke(self, shim: Shim, caller: str, function: str, args: tuple) -> Any:
        handler = getattr(self, f"_op_{function}", None)
        if handler is None:
            raise ChaincodeError("UnknownOperation", function)
        try:
            return handler(shim, caller, *args)
        except TypeError:
            raise ChaincodeError("InvalidArguments", function) from None

    def _load(self, shim: Shim, auction) -> AuctionRecord:
        if not _valid_name(auction):
            raise ChaincodeError("NoSuchAuction", repr(auction))
        raw = shim.get_state(auction)
        if raw is None:
            raise ChaincodeError("NoSuchAuction", auction)
        return decode_as(raw, AuctionRecord)

    def _op_noop(self, shim, caller):
        return None

    def _op_create(self, shim, caller, name, description=""):
        if not _valid_name(name) or not isinstance(description, str):
            raise ChaincodeError("InvalidName", repr(name))
        if shim.get_state(name) is not None:
            raise ChaincodeError("AlreadyExists", name)
        shim.put_state(name, encode(AuctionRecord(name, description, ACTIVE, caller)))
        shim.put_state(placeholder_key(name), encode(()))
        return name

    def _op_bid(self, shim, caller, amount, auction):
        if not _valid_amount(amount):
            raise ChaincodeError("InvalidBid", repr(amount))
        rec = self._load(shim, auction)
        if rec.status != ACTIVE:
            raise ChaincodeError("Closed", auction)
        shim.put_state(bid_key(auction, caller), encode(BidRecord(auction, caller, amount)))
        return None

    def _op_close(self, shim, caller, auction):
        rec = self._load(shim, auction)
        if caller != rec.auctioneer:
            raise ChaincodeError("NotAuctioneer", caller)
        if rec.status != ACTIVE:
            raise ChaincodeError("NotActive", rec.status)
        shim.put_state(auction, encode(AuctionRecord(rec.name, rec.description, CLOSED,
                                                     rec.auctioneer)))
        return None

    def _op_evaluate(self, shim, caller, auction):
        rec = self._load(shim, auction)
        if rec.status == EVALUATED:
            raise ChaincodeError("AlreadyEvaluated", auction)
        if rec.status != CLOSED:
            raise ChaincodeError("BarrierAbsent", auction)
        bids = [decode_as(raw, BidRecord) for _, raw in shim.get_range(auction + ".")]
        best = pick_winner((b.bidder, b.amount) for b in bids)
        result = AuctionResult(auction, *(best or (None, None)))
        shim.put_state(auction, encode(AuctionRecord(rec.name, rec.description, EVALUATED,
                                                     rec.auctioneer)))
        shim.put_state(result_key(auction), encode(result))
        return result


# -- functional model ---------------------------------------------------------


@dataclass(frozen=True)
class ModelTx:
    client: str
    function: str
    args: tuple = ()


@dataclass(frozen=True)
class Outcome:
    """What one execution reveals: status, result value (or error code), keys written."""

    status: str
    value: Any
    write_keys: frozenset = frozenset()


class AuctionModel:
    """Pure transition function ``F(state, tx) -> (state', outcome)``.

    A state is ``{auction: {"desc", "status", "owner", "bids": {client: amount}}}``;
    inputs are never mutated.
    """

    @staticmethod
    def initial() -> dict:
        return {}

    @staticmethod
    def apply(state: dict, tx: ModelTx) -> tuple[dict, Outcome]:
        try:
            new, value, writes = AuctionModel._step(state, tx)
        except _Reject as r:
            return state, Outcome("error", r.code)
        return new, Outcome("ok", value, frozenset(writes))

    @staticmethod
    def _step(state, tx):
        fn, args, who = tx.function, tx.args, tx.client
        arity = {"noop": (0, 0), "create": (1, 2), "bid": (2, 2), "close": (1, 1),
                 "evaluate": (1, 1)}
        if fn not in arity:
            raise _Reject("UnknownOperation")
        lo, hi = arity[fn]
        if not lo <= len(args) <= hi:
            raise _Reject("InvalidArguments")
        if fn == "noop":
            return state, None, []
        if fn == "create":
            name = args[0]
            desc = args[1] if len(args) > 1 else ""
            if not _valid_name(name) or not isinstance(desc, str):
                raise _Reject("InvalidName")
            if name in state:
                raise _Reject("AlreadyExists")
            new = dict(state)
            new[name] = {"desc": desc, "status": ACTIVE, "owner": who, "bids": {}}
            return new, name, [name, placeholder_key(name)]
        if fn == "bid":
            amount, name = args
            if not _valid_amount(amount):
                raise _Reject("InvalidBid")
        else:
            name = args[0]
        if not _valid_name(name) or name not in state:
            raise _Reject("NoSuchAuction")
        a = state[name]
        if fn == "bid":
            if a["status"] != ACTIVE:
                raise _Reject("Closed")
            bids = dict(a["bids"])
            bids[who] = amount
            return {**state, name: {**a, "bids": bids}}, None, [bid_key(name, who)]
        if fn == "close":
            if who != a["owner"]:
                raise _Reject("NotAuctioneer")
            if a["status"] != ACTIVE:
                raise _Reject("NotActive")
            return {**state, name: {**a, "status": CLOSED}}, None, [name]
        # evaluate
        if a["status"] == EVALUATED:
            raise _Reject("AlreadyEvaluated")
        if a["status"] != CLOSED:
            raise _Reject("BarrierAbsent")
        ranked = sorted(a["bids"].items(), key=lambda kv: (-kv[1], kv[0]))
        winner, amount = ranked[0] if ranked else (None, None)
        result = AuctionResult(name, winner, amount)
        return {**state, name: {**a, "status": EVALUATED}}, result, [name, result_key(name)]

    @staticmethod
    def run(txs, state=None) -> tuple[dict, list[Outcome]]:
        state = AuctionModel.initial() if state is None else state
        outcomes = []
        for tx in txs:
            state, out = AuctionModel.apply(state, tx)
            outcomes.append(out)
        return state, outcomes


class _Reject(Exception):
    def __init__(self, code: str):
        self.code = code
