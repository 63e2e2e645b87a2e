"""Command-line front end: simulation, estimation, Monte-Carlo sweeps, bounds and beam patterns.

Exit codes: 0 success, 1 configuration or usage error, 2 estimation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys

import numpy as np

from .beamspace import beampattern, mainlobe_angle, sparse_support
from .bench import (
    ORACLE_ESTIMATOR,
    SWEEPS,
    ConfigError,
    crb_row,
    load_config,
    run_monte_carlo,
    snr_to_noise_power,
    four_source_scenario,
)
from .crb import UnidentifiableScenarioError
from .estimators import ESTIMATORS, run_estimator
from .mlcost import DegenerateGeometryError, concentrate_amplitudes
from .model import ArrayConfig, SnapshotBlock, generate_snapshots

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for estimation failure here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def parse_range(text: str) -> list:
    """``a:s:b`` (inclusive) or a comma separated list of numbers."""
    try:
        if ":" in text:
            a, s, b = (float(v) for v in text.split(":"))
            if s == 0 or (b - a) / s < 0:
                raise ValueError
            n = int(math.floor((b - a) / s + 1e-9)) + 1
            return [round(a + i * s, 12) for i in range(n)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad range {text!r}; use a:step:b or a comma list") from None


def _scenario(args):
    sc = load_config(args.config) if getattr(args, "config", None) else four_source_scenario()
    if getattr(args, "seed", None) is not None:
        sc = sc.with_(seed=args.seed)
    return sc


def _emit(text: str, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _block_csv(block: SnapshotBlock) -> str:
    r = block.data.reshape(block.N, block.M)
    rows = [(n, m, repr(float(v.real)), repr(float(v.imag))) for n in range(block.N) for m, v in enumerate(r[n])]
    return _csv(["snapshot", "sensor", "re", "im"], rows)


def read_block(path: str, cfg: ArrayConfig) -> SnapshotBlock:
    """Read a block written by ``simulate`` and check it against the array."""
    try:
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        n = np.array([int(r["snapshot"]) for r in rows])
        m = np.array([int(r["sensor"]) for r in rows])
        v = np.array([complex(float(r["re"]), float(r["im"])) for r in rows])
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot read snapshot block {path}: {exc}") from exc
    if v.size != cfg.size or n.max(initial=-1) != cfg.N - 1 or m.max(initial=-1) != cfg.M - 1:
        raise ConfigError(f"{path} does not hold {cfg.N} snapshots of {cfg.M} sensors")
    data = np.zeros(cfg.size, dtype=complex)
    data[n * cfg.M + m] = v
    return SnapshotBlock(data, cfg.M, cfg.N)


def _simulated(sc, snr, seed) -> SnapshotBlock:
    return generate_snapshots(sc.array, sc.sources, snr_to_noise_power(snr), np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    snr = args.snr if args.snr is not None else sc.snr_db[0]
    _emit(_block_csv(_simulated(sc, snr, sc.seed)), args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    sc = _scenario(args)
    estimator = args.estimator or sc.estimator
    if estimator not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {estimator!r}; choose from {', '.join(sorted(ESTIMATORS))}")
    if args.input:
        x = read_block(args.input, sc.array)
    else:
        x = _simulated(sc, args.snr if args.snr is not None else sc.snr_db[0], sc.seed)
    report = run_estimator(estimator, x, sc.array, sc.K, sc.L, sc.ransac)
    if report.failed:
        print(f"estimation failed: {report.message}", file=sys.stderr)
        return EXIT_FAILED
    est = report.estimates
    try:
        amps = concentrate_amplitudes(sc.array, est, x)
    except DegenerateGeometryError:
        amps = np.full(est.i, np.nan, dtype=complex)
    header = ["source", "theta_deg"] + [f"phi{k}_{'rad_s' if k == 1 else f'rad_s{k}'}" for k in range(1, sc.K + 1)]
    header += ["amp_re", "amp_im"]
    rows = []
    for l in range(est.i):
        rows.append([l + 1, repr(math.degrees(est.thetas[l]))] + [repr(float(v)) for v in est.phis[:, l]]
                    + [repr(float(amps[l].real)), repr(float(amps[l].imag))])
    _emit(_csv(header, rows), args.out)
    return EXIT_OK


def cmd_mc(args) -> int:
    sc = _scenario(args)
    changes = {}
    if args.snr:
        changes["snr_db"] = tuple(parse_range(args.snr))
    if args.runs is not None:
        changes["runs"] = args.runs
    if args.estimator:
        changes["estimator"] = args.estimator
    if args.sweep:
        changes["sweep"] = args.sweep
    if args.values:
        changes["sweep_values"] = tuple(parse_range(args.values))
    try:
        sc = sc.with_(**changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if sc.sweep != "snr" and not sc.sweep_values:
        raise ConfigError(f"sweep {sc.sweep} needs --values")
    table = run_monte_carlo(sc, workers=args.workers)
    _emit(table.to_csv(timing=args.timing), args.out)
    return EXIT_OK


def cmd_crb(args) -> int:
    sc = _scenario(args)
    snrs = parse_range(args.snr) if args.snr else list(sc.snr_db)
    rows, header = [], None
    for snr in snrs:
        header, values = crb_row(sc, snr)
        rows.append([repr(float(v)) for v in values])
    _emit(_csv(header, rows), args.out)
    return EXIT_OK


def cmd_beampattern(args) -> int:
    # the curves depend on omega only through omega/omega0, so d and c are nominal
    cfg = ArrayConfig(M=args.sensors, d=1.0, c=1.0, delta=1.0, N=2)
    if args.mainlobe:
        ratios = np.linspace(0.0, 2.0, args.points)
        header = ["omega_ratio"]
        cols = []
        for b in np.arange(0, args.sensors, 0.5):
            header.append(f"theta_b{b:g}_deg")
            cols.append(np.degrees(mainlobe_angle(ratios * cfg.omega0, b, cfg)) + 0.0)
        rows = [[repr(float(r))] + ["" if np.isnan(c[i]) else repr(float(c[i])) for c in cols]
                for i, r in enumerate(ratios)]
        _emit(_csv(header, rows), args.out)
        return EXIT_OK
    theta = np.linspace(-math.pi / 2, math.pi / 2, args.points)
    gain = beampattern(theta, args.omega_ratio * cfg.omega0, args.beam, cfg)
    rows = [[repr(float(math.degrees(t))), repr(float(g))] for t, g in zip(theta, gain)]
    _emit(_csv(["theta_deg", f"gain_b{args.beam}"], rows), args.out)
    return EXIT_OK


def cmd_support(args) -> int:
    sc = _scenario(args)
    if args.sensors is not None:
        sc = sc.with_(array=sc.array.replace(M=args.sensors))
    x = read_block(args.input, sc.array) if args.input else _simulated(
        sc, args.snr if args.snr is not None else sc.snr_db[0], sc.seed)
    o = sc.ransac
    res = sparse_support(x, sc.array.delta, o.H, o.F, o.epsilon_percentile, strict=o.strict_maxima)
    s = res.support if args.stage == "support" else res.maxima
    t = res.z.time_of(s.p)
    w = res.z.omega_of(s.q) + sc.array.omega_c
    rows = [[int(b), int(p), int(q), repr(float(tt)), repr(float(ww)), repr(float(m))]
            for b, p, q, tt, ww, m in zip(s.beam, s.p, s.q, t, w, s.mag)]
    _emit(_csv(["beam", "frame", "bin", "time_s", "omega_rad_s", "magnitude"], rows), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ppsdoa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_args(sp, snr_help="SNR in dB (default: from config)"):
        sp.add_argument("--config", help="key=value scenario file (default: built-in four-source scenario)")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--snr", type=float, help=snr_help)
        sp.add_argument("--out", help="output file (default: stdout)")

    sp = sub.add_parser("simulate", help="write a noisy snapshot block as CSV")
    scenario_args(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("estimate", help="run one estimator and print the estimates")
    scenario_args(sp)
    sp.add_argument("--input", help="snapshot block written by simulate (default: simulate one)")
    sp.add_argument("--estimator", choices=sorted(ESTIMATORS))
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("mc", help="Monte-Carlo RMSE sweep to CSV")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--snr", help="SNR values, a:step:b or a,b,c")
    sp.add_argument("--sweep", choices=SWEEPS)
    sp.add_argument("--values", help="sweep values, a:step:b or a,b,c")
    sp.add_argument("--runs", type=int)
    sp.add_argument("--estimator", choices=sorted(ESTIMATORS) + [ORACLE_ESTIMATOR])
    sp.add_argument("--workers", type=int, help="parallel worker processes (default: $PPSDOA_WORKERS or 1)")
    sp.add_argument("--timing", action="store_true", help="add the mean_time_s column")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_mc)

    sp = sub.add_parser("crb", help="per-source bounds to CSV")
    sp.add_argument("--config")
    sp.add_argument("--snr", help="SNR values, a:step:b or a,b,c")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_crb, seed=None)

    sp = sub.add_parser("beampattern", help="beamformer response or mainlobe curves to CSV")
    sp.add_argument("--sensors", type=int, default=4)
    sp.add_argument("--omega-ratio", type=float, default=0.9, help="omega / omega0")
    sp.add_argument("--beam", type=int, default=0)
    sp.add_argument("--mainlobe", action="store_true", help="mainlobe and crossover angles vs omega/omega0")
    sp.add_argument("--points", type=int, default=361)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_beampattern)

    sp = sub.add_parser("support", help="time-frequency support points per beam to CSV")
    scenario_args(sp)
    sp.add_argument("--input")
    sp.add_argument("--sensors", type=int, help="override the sensor count")
    sp.add_argument("--stage", choices=("maxima", "support"), default="support",
                    help="local maxima before or after thresholding")
    sp.set_defaults(func=cmd_support)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "sensors", None) is not None and args.sensors < 2:
            raise ConfigError("need at least 2 sensors")
        if getattr(args, "points", 2) < 2:
            raise ConfigError("need at least 2 points")
        return args.func(args)
    except (ConfigError, UnidentifiableScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
