"""Many replications: seed derivation, optional process fan-out, aggregation."""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor

from .engine import CompiledNet, Simulator
from .model import Net
from .stats import SensorReport, aggregate


def stream_seed(seed: int, replication: int) -> int:
    """Seed of replication ``r``: first 8 bytes (little endian) of
    BLAKE2b-64 over ``seed`` and ``r``, each as 8 little-endian bytes.

    Replications therefore do not depend on how work is split across processes.
    """
    data = (seed % 2 ** 64).to_bytes(8, "little") + replication.to_bytes(8, "little")
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


_worker_net: CompiledNet | None = None


def _init_worker(net: Net) -> None:
    global _worker_net
    _worker_net = CompiledNet(net)


def _run_chunk(args):
    seed, start, stop, horizon, window = args
    cn = _worker_net
    names = [s.name for s in cn.net.sensors]
    rows = []
    for r in range(start, stop):
        rep = Simulator(cn, stream_seed(seed, r), horizon, window=window).run()
        rows.append([rep.values[n] for n in names])
    return rows


def sample_replications(net: Net, replications: int, seed: int, horizon: float,
                        window=None, jobs: int = 1) -> list[list[float]]:
    """Per-replication sensor values, rows in replication order, columns in
    sensor-name order."""
    if replications < 1:
        raise ValueError("replications must be >= 1")
    jobs = max(1, min(jobs, replications))
    if jobs == 1:
        _init_worker(net)
        return _run_chunk((seed, 0, replications, horizon, window))
    n_chunks = jobs * 4
    bounds = [replications * i // n_chunks for i in range(n_chunks + 1)]
    tasks = [(seed, a, b, horizon, window) for a, b in zip(bounds, bounds[1:]) if b > a]
    rows = []
    with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(net,)) as pool:
        for chunk in pool.map(_run_chunk, tasks):
            rows.extend(chunk)
    return rows


def run_replications(net: Net, replications: int, seed: int, horizon: float,
                     window=None, jobs: int | None = None) -> SensorReport:
    """Run and aggregate; the report is identical for every ``jobs`` value."""
    if jobs is None:
        jobs = os.cpu_count() or 1
    rows = sample_replications(net, replications, seed, horizon, window, jobs)
    report = aggregate([s.name for s in net.sensors], rows)
    report.meta = {"seed": seed, "horizon": horizon,
                   "window": list(window) if window is not None else None}
    return report


def run_traced(net: Net, replications: int, seed: int, horizon: float, on_trace,
               window=None) -> SensorReport:
    """Sequential run that hands every replication's trace to ``on_trace(r, records)``.

    Uses the same per-replication seeds as :func:`run_replications`, so the
    report is identical to an untraced run.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    cn = CompiledNet(net)
    names = [s.name for s in net.sensors]
    rows = []
    for r in range(replications):
        rep = Simulator(cn, stream_seed(seed, r), horizon, window=window, trace=True).run()
        on_trace(r, rep.trace)
        rows.append([rep.values[n] for n in names])
    report = aggregate(names, rows)
    report.meta = {"seed": seed, "horizon": horizon,
                   "window": list(window) if window is not None else None}
    return report
