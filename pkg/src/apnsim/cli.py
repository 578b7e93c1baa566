"""``apn`` command line: validate, run, trace, count-states, markov.

Exit codes: 0 success, 1 unexpected error, 2 usage, 3 invalid model
(parse or validation), 4 file I/O, 5 livelock, 6 model not supported by
the Markov oracle.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import gallery, markov, model, modelio, runner
from .engine import LivelockError, Simulator

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_IO = 4
EXIT_LIVELOCK = 5
EXIT_UNSUPPORTED = 6


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _window(text: str) -> tuple[float, float]:
    try:
        a, b = text.split(":")
        return float(a), float(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must look like t1:t2, got {text!r}") from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _resolve_path(ref: str) -> Path:
    p = Path(ref)
    if p.exists() or os.sep in ref or ref.endswith(".apn"):
        return p
    try:
        return gallery.path(ref)
    except FileNotFoundError:
        return p


def _load(ref: str) -> modelio.Document:
    path = _resolve_path(ref)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        return modelio.parse_document(text)
    except modelio.ParseError as exc:
        raise CliError(EXIT_INVALID, f"{path}: {exc}") from None
    except model.ValidationError as exc:
        lines = "\n".join(f"  {v.element}: {v.rule}" for v in exc.violations)
        raise CliError(EXIT_INVALID, f"{path}: invalid model\n{lines}") from None
    except (model.ColorLeak, ValueError) as exc:
        raise CliError(EXIT_INVALID, f"{path}: {exc}") from None


def _settings(net, args):
    sim = net.simulation or model.SimulationSettings()
    horizon = args.horizon if args.horizon is not None else sim.horizon
    if not horizon > 0:
        raise CliError(EXIT_USAGE, "horizon must be > 0")
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = sim.seed
    window = args.window
    if window is None and sim.window is not None and args.horizon is None:
        window = sim.window
    if window is not None and not 0 <= window[0] < window[1] <= horizon:
        raise CliError(EXIT_USAGE, f"window {window[0]}:{window[1]} is not inside [0, {horizon}]")
    for s in net.sensors:
        if s.window is not None and s.window[1] > horizon:
            raise CliError(EXIT_USAGE, f"sensor {s.name} window ends after the horizon")
    return horizon, seed, window


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    try:
        return open(path, "w", encoding="utf-8", newline=""), True
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}") from None


def _print_report(report, out) -> None:
    width = max([len(n) for n in report.names] + [6])
    out.write(f"{'sensor':<{width}}  {'mean':>12}  {'std error':>12}\n")
    for s in report.sensors:
        err = "undefined" if report.undefined_variance else f"{s.std_error:.6g}"
        out.write(f"{s.name:<{width}}  {s.mean:>12.6g}  {err:>12}\n")
    out.write(f"replications: {report.replications}\n")


# -- subcommands --------------------------------------------------------------------

def cmd_validate(args) -> int:
    doc = _load(args.model)
    net = doc.net
    print(f"OK ({len(net.places)} places, {len(net.transitions)} transitions, "
          f"{len(net.triggers)} triggers)")
    return EXIT_OK


def cmd_run(args) -> int:
    doc = _load(args.model)
    net = doc.net
    horizon, seed, window = _settings(net, args)
    reps = args.reps if args.reps is not None else (net.simulation.replications
                                                    if net.simulation else 1000)
    if args.trace:
        tdir = Path(args.trace)
        try:
            tdir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot create {tdir}: {exc.strerror or exc}") from None

        def save(r, records):
            try:
                with open(tdir / f"replication_{r:06d}.csv", "w", encoding="utf-8",
                          newline="") as fh:
                    modelio.write_trace(records, fh)
            except OSError as exc:
                raise CliError(EXIT_IO, f"cannot write trace: {exc.strerror or exc}") from None

        report = runner.run_traced(net, reps, seed, horizon, save, window)
    else:
        report = runner.run_replications(net, reps, seed, horizon, window, args.jobs)
    if args.out:
        sink, close = _open_out(args.out)
        try:
            modelio.write_results(report, sink)
        finally:
            if close:
                sink.close()
    _print_report(report, sys.stdout)
    return EXIT_OK


def cmd_trace(args) -> int:
    doc = _load(args.model)
    # sensors are not part of a trace; dropping them lets any horizon be used
    net = doc.net.replace(sensors=())
    horizon, seed, window = _settings(net, args)
    sim = Simulator(net, runner.stream_seed(seed, args.replication), horizon,
                    window=window, trace=True)
    rep = sim.run()
    sink, close = _open_out(args.out)
    try:
        modelio.write_trace(rep.trace, sink)
    finally:
        if close:
            sink.close()
    return EXIT_OK


def cmd_count_states(args) -> int:
    if args.customers < 0 or args.cars < 0:
        raise CliError(EXIT_USAGE, "counts must be non-negative")
    print(markov.count_states(args.customers, args.cars))
    return EXIT_OK


def cmd_markov(args) -> int:
    doc = _load(args.model)
    net = doc.net
    horizon, _, window = _settings(net, args)
    t1, t2 = window if window is not None else (horizon / 2.0, horizon)
    try:
        ctmc = markov.explore(net)
    except markov.UnsupportedModel as exc:
        raise CliError(EXIT_UNSUPPORTED, f"not supported by the Markov oracle: {exc}") from None
    print(f"{ctmc.size} states")
    avg = markov.window_average(ctmc, t1, t2, args.points)
    print(f"time-averaged probabilities over [{t1:g}, {t2:g}]:")
    for i, state in enumerate(ctmc.states):
        print(f"  {i:>4}  {avg[i]:.6f}  {markov.describe_state(state)}")
    place_sensors = [s for s in net.sensors if s.kind in ("time_average", "threshold")]
    if place_sensors:
        print("sensors:")
        for s in place_sensors:
            print(f"  {s.name}  {float(avg @ ctmc.sensor_values(s)):.6f}")
    if args.export:
        sink, close = _open_out(args.export)
        try:
            markov.write_generator(ctmc, sink)
        finally:
            if close:
                sink.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apn", description="Abridged Petri net simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_arg(p):
        p.add_argument("model", help="model file, or the name of a bundled model")

    def timing(p):
        p.add_argument("--horizon", type=float, help="simulated time (default: from the model)")
        p.add_argument("--window", type=_window, help="measurement window t1:t2")

    p = sub.add_parser("validate", help="check a model file")
    model_arg(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="Monte Carlo replications")
    model_arg(p)
    timing(p)
    p.add_argument("--reps", type=_positive_int, help="number of replications")
    p.add_argument("--seed", type=int, help="master seed (default: from the model)")
    p.add_argument("--jobs", type=_positive_int, default=None,
                   help="worker processes (default: all cores)")
    p.add_argument("--out", help="write the results document (JSON) here")
    p.add_argument("--trace", metavar="DIR", help="write one trace CSV per replication to DIR")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("trace", help="full event trace of one replication")
    model_arg(p)
    timing(p)
    p.add_argument("--seed", type=int, help="master seed (default: from the model)")
    p.add_argument("--replication", type=int, default=0,
                   help="replication index, as numbered by 'run' (default 0)")
    p.add_argument("--out", help="trace CSV path (default: standard output)")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("count-states", help="Markov state count for n customers and k cars")
    p.add_argument("customers", type=int)
    p.add_argument("cars", type=int)
    p.set_defaults(func=cmd_count_states)

    p = sub.add_parser("markov", help="exact CTMC solution of an exponential model")
    model_arg(p)
    timing(p)
    p.add_argument("--points", type=_positive_int, default=401,
                   help="grid points for window averaging")
    p.add_argument("--export", help="write the generator as 'row col rate' lines")
    p.set_defaults(func=cmd_markov)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"apn: {exc}", file=sys.stderr)
        return exc.code
    except LivelockError as exc:
        print(f"apn: livelock: {exc}", file=sys.stderr)
        return EXIT_LIVELOCK
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
