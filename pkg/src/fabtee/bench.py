"""Throughput and latency measurements: enclave path versus native path.

Latency is wall-clock time around one endorsement call.  The per-category
breakdown comes from spans recorded while a profiler is attached:

* ``decrypt_tx``      opening the proposal envelope
* ``get_state``       host calls fetching values
* ``cc2cc``           metadata round trip to the ledger enclave, excluding its own work
* ``ledger_enclave``  time spent inside the ledger enclave answering it
* ``verify_state``    signature/hash checks on metadata and value decryption
* ``sign_response``   building and signing the endorsement

The categories are disjoint, so their sum never exceeds the total.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass

from .network import Network, NetworkSettings
from .tee import Profiler

CATEGORIES = ("decrypt_tx", "get_state", "cc2cc", "ledger_enclave", "verify_state", "sign_response")
WORKLOADS = ("noop", "submit", "evaluate")
MODES = ("enclave", "native")


@dataclass
class BenchRow:
    workload: str
    mode: str
    clients: int
    transactions: int
    throughput_tps: float
    latency: list  # seconds per invocation
    breakdown: dict  # category -> list of seconds per invocation

    def as_dict(self) -> dict:
        row = {"workload": self.workload, "mode": self.mode, "clients": self.clients,
               "transactions": self.transactions, "throughput_tps": round(self.throughput_tps, 3)}
        row.update(_stats("latency", self.latency))
        for cat in CATEGORIES:
            row.update(_stats(cat, self.breakdown.get(cat, [])))
        return row


def _stats(prefix: str, samples: list) -> dict:
    ms = [s * 1e3 for s in samples] or [0.0]
    return {f"{prefix}_mean_ms": round(statistics.fmean(ms), 4),
            f"{prefix}_std_ms": round(statistics.pstdev(ms), 4),
            f"{prefix}_min_ms": round(min(ms), 4),
            f"{prefix}_max_ms": round(max(ms), 4)}


def csv_columns() -> list[str]:
    cols = ["workload", "mode", "clients", "transactions", "throughput_tps"]
    for prefix in ("latency",) + CATEGORIES:
        cols += [f"{prefix}_{s}_ms" for s in ("mean", "std", "min", "max")]
    return cols


def to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=csv_columns(), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.as_dict())
    return buf.getvalue()


def _breakdown(samples: dict) -> dict:
    out = {cat: sum(samples.get(cat, ())) for cat in CATEGORIES if cat != "cc2cc"}
    out["cc2cc"] = max(0.0, sum(samples.get("meta_query", ())) - out["ledger_enclave"])
    return out


class _Meter:
    def __init__(self, net: Network):
        self.net = net
        self.profiler = Profiler()
        for peer in net.peers:
            peer.set_profiler(self.profiler)
        self.latency: list[float] = []
        self.breakdown: dict[str, list[float]] = {c: [] for c in CATEGORIES}

    def invoke(self, client, function, *args, submit=True):
        self.profiler.samples.clear()
        start = time.perf_counter()
        result = client.invoke(function, *args, submit=submit)
        self.latency.append(time.perf_counter() - start)
        for cat, value in _breakdown(self.profiler.samples).items():
            self.breakdown[cat].append(value)
        return result


def client_ids(n: int) -> tuple:
    return tuple(f"c{i:02d}" for i in range(n))


def run_workload(workload: str, mode: str, clients: int = 16, transactions: int = 1000,
                 peers: int = 3, block_size: int = 10, seed: int = 42,
                 evaluate_bids: int = 100) -> BenchRow:
    if workload not in WORKLOADS or mode not in MODES:
        raise ValueError(f"unknown workload/mode {workload}/{mode}")
    ids = client_ids(max(clients, 1))
    settings = NetworkSettings(seed=seed, peers=peers, clients=ids, block_size=block_size,
                               snapshot_interval=10,
                               mode="native" if mode == "native" else "per-chaincode")
    net = Network(settings).setup()
    owner = net.clients[ids[0]]
    owner.invoke("create", "bench")
    net.flush()
    meter = _Meter(net)
    if workload == "evaluate":
        for i in range(evaluate_bids):
            net.clients[ids[i % len(ids)]].invoke("bid", (i * 7919) % 1000, "bench")
            if i % block_size == block_size - 1:
                net.flush()
        owner.invoke("close", "bench")
        net.flush()
        meter = _Meter(net)
        start = time.perf_counter()
        for _ in range(transactions):
            meter.invoke(owner, "evaluate", "bench", submit=False)
        elapsed = time.perf_counter() - start
    else:
        start = time.perf_counter()
        for i in range(transactions):
            client = net.clients[ids[i % len(ids)]]
            if workload == "noop":
                meter.invoke(client, "noop")
            else:
                meter.invoke(client, "bid", i, "bench")
            if len(net.orderer.pending) >= block_size:
                net.flush()
        net.flush()
        elapsed = time.perf_counter() - start
        if len(set(net.state_hashes())) != 1:
            raise AssertionError("replicas diverged during benchmark")
    return BenchRow(workload, mode, clients, transactions, transactions / elapsed,
                    meter.latency, meter.breakdown)


def run_bench(clients=(16,), transactions: int = 1000, peers: int = 3, block_size: int = 10,
              seed: int = 42, workloads=WORKLOADS, evaluate_runs: int = 20,
              evaluate_bids: int = 100) -> tuple[list[BenchRow], dict]:
    """All (workload, mode, client-count) rows plus enclave/native throughput ratios."""
    rows = []
    for workload in workloads:
        for n in clients:
            for mode in MODES:
                count = evaluate_runs if workload == "evaluate" else transactions
                rows.append(run_workload(workload, mode, n, count, peers, block_size, seed,
                                         evaluate_bids))
    ratios = {}
    for workload in workloads:
        for n in clients:
            enc = next(r for r in rows if (r.workload, r.mode, r.clients) == (workload, "enclave", n))
            nat = next(r for r in rows if (r.workload, r.mode, r.clients) == (workload, "native", n))
            ratios[f"{workload}/{n}"] = round(enc.throughput_tps / nat.throughput_tps, 4)
    return rows, ratios
