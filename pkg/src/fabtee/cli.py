"""Command-line entry point.

    fabtee run --scenario FILE [--attack FILE] [--out DIR]
    fabtee auction --bids 10,25,7
    fabtee bench --clients 16 [--transactions 1000] [--out DIR]
    fabtee corpus [--attack FILE] [--weaken SWITCH] [--out DIR]

The flat form (``fabtee --scenario FILE``, ``fabtee --bench``) is accepted too.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import crypto
from .adversary import (
    AttackScript,
    check_security_up_to_resets,
    load_corpus,
    run_attack,
)
from .auction import AuctionModel
from .bench import run_bench, to_csv
from .errors import ConfigError
from .network import Network, NetworkSettings
from .weaken import SWITCHES, weakened

DEFAULT_BLOCK_SIZE = 10


# -- scenarios -------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 42
    peers: int = 3
    block_size: int = DEFAULT_BLOCK_SIZE
    snapshot_interval: int = 10
    endorsements: int = 1
    mode: str = "per-chaincode"
    auctions: int = 2
    bidders: int = 4
    bids_per_bidder: int = 2
    attack: str | None = None

    @classmethod
    def from_json(cls, text: str, source: str = "<scenario>") -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{source}: line 1: scenario must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{source}: unknown field(s) {unknown}")
        try:
            config = cls(**data)
        except TypeError as exc:
            raise ConfigError(f"{source}: {exc}") from None
        for name in ("peers", "block_size", "snapshot_interval", "endorsements", "bidders"):
            if not isinstance(getattr(config, name), int) or getattr(config, name) < 1:
                raise ConfigError(f"{source}: {name} must be a positive integer")
        return config

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        return cls.from_json(text, str(path))


def _bidder_ids(n: int) -> tuple:
    return tuple(f"bidder{i:02d}" for i in range(n))


def cmd_run(config: ScenarioConfig, attack: str | None = None) -> dict:
    """Deterministic auction workload; returns the run report."""
    bidders = _bidder_ids(config.bidders)
    net = Network(NetworkSettings(seed=config.seed, peers=config.peers,
                                  clients=("auctioneer",) + bidders, block_size=config.block_size,
                                  snapshot_interval=config.snapshot_interval,
                                  endorsements=config.endorsements, mode=config.mode)).setup()
    rng = crypto.Rng(config.seed).fork("workload")
    auctioneer = net.clients["auctioneer"]
    plan: list[tuple] = []
    for a in range(config.auctions):
        name = f"lot{a}"
        plan.append((auctioneer, "create", (name,)))
        bids = [(net.clients[b], "bid", (rng.randint(0, 999), name))
                for b in bidders for _ in range(config.bids_per_bidder)]
        rng.shuffle(bids)
        plan += bids
        plan += [(auctioneer, "close", (name,)), (auctioneer, "evaluate", (name,))]
    outcomes = []
    for client, fn, args in plan:
        res = client.invoke(fn, *args)
        outcomes.append({"client": client.client_id, "function": fn, "args": list(args),
                         "endorsement": res.status,
                         "digest": res.proposal.digest().hex() if res.proposal else None})
        # a phase change is a barrier: wait for commitment before going on
        if fn in ("create", "close"):
            net.flush()
    net.flush()
    ref = net.reference
    flags = {}
    for block, rec in zip(ref.blocks, ref.commits):
        for tx, ok in zip(block.transactions, rec.flags):
            flags[tx.proposal.digest().hex()] = ok
    for o in outcomes:
        o["committed"] = flags.get(o.pop("digest"), False)
    _, model_out = AuctionModel.run(net.committed_ops())
    winners = {}
    for tx, out in zip(net.committed_ops(), model_out):
        if tx.function == "evaluate" and out.status == "ok":
            winners[out.value.auction] = [out.value.winner, out.value.amount]
    hashes = {p.peer_id: p.store.state_hash().hex() for p in net.peers}
    report = {
        "seed": config.seed,
        "committed_height": ref.store.height,
        "state_hash": ref.store.state_hash().hex(),
        "replicas_agree": len(set(hashes.values())) == 1,
        "peer_state_hashes": hashes,
        "winners": winners,
        "transactions": outcomes,
    }
    attack = attack or config.attack
    if attack:
        script = AttackScript.load(attack)
        log = run_attack(None, script)
        verdict = check_security_up_to_resets(log)
        report["attack"] = {"script": script.name, "verdict": "PASS" if verdict else "FAIL",
                            "detail": verdict.describe(), "observations": len(log.observations),
                            "rejections": sorted(log.errors())}
    return report


# -- auction transcript ----------------------------------------------------------


def parse_bids(text: str) -> list[tuple[str, int]]:
    """``"10,25,7"`` or ``"alice=10,bob=25"``; empty string means no bids."""
    bids = []
    for i, item in enumerate(x.strip() for x in text.split(",") if x.strip()):
        name, _, amount = item.rpartition("=")
        name = name or f"bidder{i:02d}"
        try:
            value = int(amount)
        except ValueError:
            raise ConfigError(f"bid {i + 1}: {item!r} is not an integer amount") from None
        if value < 0:
            raise ConfigError(f"bid {i + 1}: amounts must be non-negative")
        bids.append((name, value))
    names = [n for n, _ in bids]
    if len(set(names)) != len(names):
        raise ConfigError("each bidder may appear once")
    return bids


def cmd_auction(bids: list[tuple[str, int]], seed: int = 42,
                block_size: int = DEFAULT_BLOCK_SIZE) -> dict:
    names = tuple(n for n, _ in bids)
    net = Network(NetworkSettings(seed=seed, clients=("auctioneer",) + names,
                                  block_size=block_size)).setup()
    auctioneer = net.clients["auctioneer"]
    phases = []

    def step(client, fn, *args):
        res = client.invoke(fn, *args)
        phases.append({"phase": fn, "client": client.client_id,
                       "tx_id": res.transaction.tx_id if res.transaction else None,
                       "status": res.status})
        return res

    step(auctioneer, "create", "lot")
    net.flush()
    for name, amount in bids:
        step(net.clients[name], "bid", amount, "lot")
    net.flush()
    step(auctioneer, "close", "lot")
    net.flush()
    res = step(auctioneer, "evaluate", "lot")
    net.flush()
    result = res.value
    return {"winner": result.winner, "amount": result.amount, "phases": phases,
            "state_hash": net.reference.store.state_hash().hex()}


# -- corpus ----------------------------------------------------------------------


def cmd_corpus(scripts: list[AttackScript], out: Path | None = None,
               switch: str | None = None) -> dict:
    results = []
    for script in scripts:
        if switch:
            with weakened(switch):
                log = run_attack(None, script)
        else:
            log = run_attack(None, script)
        verdict = check_security_up_to_resets(log)
        missing = sorted(set(script.expect) - log.errors())
        results.append({"script": script.name, "verdict": "PASS" if verdict else "FAIL",
                        "detail": verdict.describe(), "missing_rejections": missing})
        if out is not None:
            (out / f"{script.name}.jsonl").write_text(log.to_jsonl())
    return {"weakened": switch, "results": results}


# -- argument parsing ------------------------------------------------------------


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fabtee", description=__doc__.splitlines()[0] if __doc__ else None)
    p.add_argument("command", nargs="?", choices=("run", "auction", "bench", "corpus"))
    p.add_argument("--scenario", metavar="FILE")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--attack", metavar="FILE")
    p.add_argument("--bench", action="store_true", help="same as the bench command")
    p.add_argument("--clients", type=_positive, nargs="+", default=[16])
    p.add_argument("--block-size", type=_positive, default=DEFAULT_BLOCK_SIZE)
    p.add_argument("--transactions", type=_positive, default=1000)
    p.add_argument("--bids", default="10,25,7", help="auction bids, e.g. 10,25,7 or alice=10,bob=25")
    p.add_argument("--weaken", choices=SWITCHES, help="corpus only: enable a test-only switch")
    p.add_argument("--out", metavar="DIR")
    return p


def _emit(report: dict, out: Path | None, name: str = "report.json") -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out is not None:
        (out / name).write_text(text)
    sys.stdout.write(text)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command or ("bench" if args.bench else "run" if args.scenario else None)
    if command is None:
        build_parser().print_usage(sys.stderr)
        return 2
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    try:
        if command == "run":
            if not args.scenario:
                raise ConfigError("run needs --scenario FILE")
            config = ScenarioConfig.load(args.scenario)
            overrides = {"block_size": args.block_size} if args.block_size != DEFAULT_BLOCK_SIZE else {}
            if args.seed is not None:
                overrides["seed"] = args.seed
            config = dataclasses.replace(config, **overrides)
            _emit(cmd_run(config, args.attack), out)
        elif command == "auction":
            _emit(cmd_auction(parse_bids(args.bids), 42 if args.seed is None else args.seed,
                              args.block_size), out)
        elif command == "bench":
            rows, ratios = run_bench(clients=tuple(args.clients), transactions=args.transactions,
                                     block_size=args.block_size,
                                     seed=42 if args.seed is None else args.seed)
            table = to_csv(rows)
            if out is not None:
                (out / "bench.csv").write_text(table)
            sys.stdout.write(table)
            _emit({"throughput_ratio_enclave_over_native": ratios}, out)
        else:
            scripts = [AttackScript.load(args.attack)] if args.attack else load_corpus()
            report = cmd_corpus(scripts, out, args.weaken)
            for r in report["results"]:
                print(f"{r['verdict']}  {r['script']}: {r['detail']}", file=sys.stderr)
            _emit(report, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
