"""Command-line interface.

Subcommands: fit, fading, simulate, evaluate, qq. Global flags --config,
--seed and --out apply to every subcommand; a config file holds key=value
lines whose keys mirror the long flag names (flags override the file).
Exit codes: 0 success, 1 computation failure, 2 usage or I/O error.

Every command is a pure function of its inputs, flags and seed: outputs are
written with round-trip float formatting and rerunning a command reproduces
its files byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fading as fading_mod
from . import pathloss, simulate, trace
from .stats import qq_gaussian

USAGE_ERROR = 2
COMPUTE_ERROR = 1


def _fmt(value: float) -> str:
    return repr(float(value))


def _load_config(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    out: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {line_no}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _collect_actions(parser: argparse.ArgumentParser) -> dict[str, argparse.Action]:
    out: dict[str, argparse.Action] = {}
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                out.update(_collect_actions(sub))
        elif action.dest != "help":
            out.setdefault(action.dest, action)
    return out


def _apply_config(args: argparse.Namespace, config: dict[str, str], parser) -> None:
    # Config supplies values only where the command line used the default.
    actions = _collect_actions(parser)
    for key, value in config.items():
        action = actions.get(key)
        if action is None or not hasattr(args, key):
            continue
        if getattr(args, key) != action.default:
            continue  # explicit flag wins
        if isinstance(action.default, bool):
            setattr(args, key, value.lower() in ("1", "true", "yes", "on"))
        elif action.type is not None:
            setattr(args, key, action.type(value))
        else:
            setattr(args, key, value)


def _parse_float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_scatter_csv(path: Path, samples) -> None:
    lines = ["distance_m,pl_db"]
    for s in samples:
        lines.append(f"{_fmt(s.distance)},{_fmt(s.pl)}")
    path.write_text("\n".join(lines) + "\n")


def cmd_fit(args) -> int:
    dataset = trace.parse_trace(args.trace, format=args.format)
    samples = trace.to_pathloss(dataset)
    tx_power = dataset.tx_power
    noise_floor = dataset.noise_floor
    if args.mode_fit and tx_power is None:
        raise ValueError("--mode-fit needs tx_power_dbm in the trace metadata")
    config = pathloss.FitConfig(
        segment1=args.segment1,
        h=args.antenna_height,
        lam=args.wavelength,
        d0=args.d0,
        breakpoints=_parse_float_list(args.breakpoints),
        mode_fit=args.mode_fit,
        tx_power=tx_power,
        noise_floor=noise_floor if noise_floor is not None else args.noise_floor,
        mode_margin_db=args.mode_margin,
    )
    # Raw grid search supplies the rms-vs-breakpoint diagnostic table; the
    # reported model additionally applies the mode-fit correction when asked.
    search = pathloss.search_breakpoint(
        samples,
        config.breakpoints,
        seg1_kind=config.segment1,
        h=config.h,
        lam=config.lam,
        d0=config.d0,
        noise_floor=config.noise_floor,
        debias=config.debias,
    )
    model = pathloss.fit_model(samples, config) if config.mode_fit else search.model
    out = _out_dir(args)
    pathloss.save_model(model, out / "model.json")

    _write_scatter_csv(out / "scatter.csv", samples)

    d_arr = np.asarray([s.distance for s in samples])
    grid = np.logspace(
        np.log10(max(config.d0, float(d_arr.min()))), np.log10(float(d_arr.max())), 200
    )
    lines = ["distance_m,pl_db"]
    for dv, pv in zip(grid, model.median_db(grid)):
        lines.append(f"{_fmt(dv)},{_fmt(pv)}")
    (out / "curve.csv").write_text("\n".join(lines) + "\n")

    lines = ["d_br_m,rms_db"]
    for cand in sorted(search.rms_by_candidate):
        lines.append(f"{_fmt(cand)},{_fmt(search.rms_by_candidate[cand])}")
    (out / "rms_by_breakpoint.csv").write_text("\n".join(lines) + "\n")

    edges = np.arange(0.0, float(d_arr.max()) + args.bin, args.bin)
    lines = ["bin_lo_m,bin_hi_m,count,sigma_db"]
    for row in pathloss.sigma_by_bin(samples, model, edges):
        lines.append(f"{_fmt(row.lo)},{_fmt(row.hi)},{row.count},{_fmt(row.sigma_db)}")
    (out / "sigma_by_bin.csv").write_text("\n".join(lines) + "\n")

    print(f"model written to {out / 'model.json'} (d_br = {model.d_br} m)")
    return 0


def cmd_fading(args) -> int:
    dataset = trace.parse_trace(args.trace, format=args.format)
    signatures = fading_mod.extract_signatures(
        dataset, min_len=args.min_len, max_loss_fraction=args.max_loss
    )
    out = _out_dir(args)
    if not signatures:
        (out / "fading.json").write_text(
            json.dumps({"note": "no qualifying signatures", "signatures": 0}, indent=2)
            + "\n"
        )
        print("no qualifying signatures; empty result written")
        return 0

    candidates = [int(c) for c in _parse_float_list(args.window_p)]
    longest = max(signatures, key=lambda s: s.samples.size)
    selection = fading_mod.select_window(longest, candidates=candidates)
    # The acceptance gate applies per block: normalized blocks that still
    # carry sample-to-sample correlation are left out of the pooled fit.
    blocks, rejected = [], []
    for sig in signatures:
        try:
            block = fading_mod.normalize_block(sig, selection.window_p)
        except ValueError:
            continue  # signature too short for the selected window
        acf = fading_mod.autocorr(
            block.samples, min(fading_mod.ACF_LAGS, block.samples.size - 1)
        )
        (blocks if float(np.max(np.abs(acf[1:]))) < args.acf_threshold
         else rejected).append(block)
    converged = selection.converged and bool(blocks)
    if not blocks:
        blocks = rejected  # report the best available fit, flagged below
    pooled = np.concatenate([b.samples for b in blocks])
    model = fading_mod.fit_fading(
        fading_mod.NormalizedBlock(samples=pooled, window_p=selection.window_p)
    )

    payload = fading_mod.fading_to_dict(model)
    payload["signatures"] = len(signatures)
    payload["blocks_used"] = len(blocks)
    payload["converged"] = converged
    (out / "fading.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    xs = np.sort(pooled)
    n = xs.size
    emp = np.arange(1, n + 1) / n
    if model.fit.family == "nakagami_power":
        fitted = fading_mod._gamma_power_cdf(model.fit.params["m"])(xs)
    else:
        fitted = fading_mod._gaussian_cdf(
            model.fit.params["mu"], model.fit.params["sigma_lin"]
        )(xs)
    lines = ["power,empirical_cdf,fitted_cdf"]
    step = max(1, n // 2000)  # plot data, not the raw samples
    for i in range(0, n, step):
        lines.append(f"{_fmt(xs[i])},{_fmt(emp[i])},{_fmt(fitted[i])}")
    (out / "fading_cdf.csv").write_text("\n".join(lines) + "\n")

    acf = fading_mod.autocorr(pooled, min(fading_mod.ACF_LAGS, pooled.size - 1))
    lines = ["lag,acf"]
    for lag, value in enumerate(acf):
        lines.append(f"{lag},{_fmt(value)}")
    (out / "fading_acf.csv").write_text("\n".join(lines) + "\n")

    if args.model:
        base = pathloss.load_model(args.model)
        base.fading = model
        base.sigma_sh1 = fading_mod.split_sigma(base.sigma1, model.sigma_mp)
        base.sigma_sh2 = fading_mod.split_sigma(base.sigma2, model.sigma_mp)
        pathloss.save_model(base, out / "model.json")

    print(
        f"fading: family={model.fit.family} sigma_mp={model.sigma_mp:.2f} dB "
        f"window_p={selection.window_p} converged={selection.converged}"
    )
    return 0


def cmd_simulate(args) -> int:
    model = pathloss.load_model(args.model)
    mobility = simulate.MobilityTrace.from_csv(args.mobility)
    phy = simulate.PhyConfig(
        tx_power=args.tx_power,
        rate=args.rate,
        noise_floor=args.noise_floor,
        interference_loss_prob=args.interference_loss_prob,
    )
    log = simulate.simulate_run(
        model,
        mobility,
        phy,
        seed=args.seed,
        decorrelation_distance=args.decorrelation,
    )
    out = _out_dir(args)
    log.to_csv(out / "packets.csv")
    simulate.per_by_bin(log, bin_width=args.bin).to_csv(out / "per.csv")
    simulate.ipg95_by_bin(log, bin_width=args.bin).to_csv(out / "ipg95.csv")
    n_rx = int(log.received.sum())
    print(f"{len(log)} packets simulated, {n_rx} received -> {out / 'packets.csv'}")
    return 0


def _metric_pair(path: str, bin_width: float) -> tuple:
    """Load a packet log or a pre-binned metric file and return (per, ipg)."""
    with open(path, "r", encoding="utf-8") as handle:
        header = handle.readline().strip()
    if header == simulate.PACKET_LOG_HEADER:
        log = simulate.PacketLog.from_csv(path)
        return simulate.per_by_bin(log, bin_width), simulate.ipg95_by_bin(log, bin_width)
    if header == simulate.METRIC_HEADER:
        return simulate.BinnedMetric.from_csv(path), None
    raise ValueError(f"{path}: unrecognized file header {header!r}")


def cmd_evaluate(args) -> int:
    per_a, ipg_a = _metric_pair(args.log_a, args.bin)
    per_b, ipg_b = _metric_pair(args.log_b, args.bin)
    out = _out_dir(args)
    simulate.abs_error(per_a, per_b).to_csv(out / "per_error.csv")
    if ipg_a is not None and ipg_b is not None:
        simulate.abs_error(ipg_a, ipg_b).to_csv(out / "ipg95_error.csv")
        print(f"PER and IPG95 absolute errors written to {out}")
    else:
        print(f"absolute error written to {out / 'per_error.csv'}")
    return 0


def cmd_qq(args) -> int:
    dataset = trace.parse_trace(args.trace, format=args.format)
    samples = trace.to_pathloss(dataset)
    selected = [s for s in samples if args.d_min <= s.distance < args.d_max]
    out = _out_dir(args)

    lines = ["theoretical_db,empirical_db"]
    if len(selected) >= 2:
        for theo, emp in qq_gaussian([s.pl for s in selected]):
            lines.append(f"{_fmt(theo)},{_fmt(emp)}")
    (out / "qq.csv").write_text("\n".join(lines) + "\n")

    lines = ["bin_lo_m,bin_hi_m,received,lost"]
    if dataset.records:
        d_all = np.asarray([r.distance for r in dataset.records])
        lo = np.floor(d_all.min() / args.bin) * args.bin
        hi = np.ceil(d_all.max() / args.bin) * args.bin
        if hi <= lo:
            hi = lo + args.bin
        edges = np.arange(lo, hi + args.bin / 2, args.bin)
        for row in trace.loss_census(dataset, edges):
            lines.append(f"{_fmt(row.lo)},{_fmt(row.hi)},{row.received},{row.lost}")
    (out / "census.csv").write_text("\n".join(lines) + "\n")

    print(f"{len(selected)} samples in [{args.d_min}, {args.d_max}) m -> {out / 'qq.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="v2vprop",
        description="Extract and replay V2V propagation models from RSSI traces",
    )
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--seed", type=int, default=0, help="RNG seed (PCG64)")
    parser.add_argument("--out", default=".", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a path-loss model from a trace")
    p_fit.add_argument("--trace", required=True)
    p_fit.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p_fit.add_argument("--segment1", choices=("two_ray", "linear"), default="two_ray")
    p_fit.add_argument("--antenna-height", type=float, default=1.6)
    p_fit.add_argument("--wavelength", type=float, default=0.0512)
    p_fit.add_argument("--d0", type=float, default=10.0)
    p_fit.add_argument(
        "--breakpoints",
        default=",".join(str(c) for c in pathloss.DEFAULT_BREAKPOINTS),
        help="comma-separated breakpoint candidates in meters",
    )
    p_fit.add_argument("--mode-fit", action="store_true")
    p_fit.add_argument("--mode-margin", type=float, default=3.0)
    p_fit.add_argument("--noise-floor", type=float, default=-96.0)
    p_fit.add_argument("--bin", type=float, default=40.0, help="sigma diagnostic bin width")
    p_fit.set_defaults(func=cmd_fit)

    p_fad = sub.add_parser("fading", help="fit the fast-fading distribution")
    p_fad.add_argument("--trace", required=True)
    p_fad.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p_fad.add_argument("--min-len", type=int, default=500)
    p_fad.add_argument("--max-loss", type=float, default=0.02)
    p_fad.add_argument("--window-p", default="25,50,100,200")
    p_fad.add_argument("--acf-threshold", type=float, default=0.2)
    p_fad.add_argument("--model", default=None, help="model JSON to augment with fading")
    p_fad.set_defaults(func=cmd_fading)

    p_sim = sub.add_parser("simulate", help="replay a fitted model over a mobility trace")
    p_sim.add_argument("--model", required=True)
    p_sim.add_argument("--mobility", required=True)
    p_sim.add_argument("--tx-power", type=float, default=20.0)
    p_sim.add_argument("--rate", type=float, default=10.0)
    p_sim.add_argument("--noise-floor", type=float, default=-96.0)
    p_sim.add_argument("--interference-loss-prob", type=float, default=0.0)
    p_sim.add_argument("--decorrelation", type=float, default=25.0)
    p_sim.add_argument("--bin", type=float, default=40.0)
    p_sim.set_defaults(func=cmd_simulate)

    p_eval = sub.add_parser("evaluate", help="absolute error between two packet logs")
    p_eval.add_argument("log_a")
    p_eval.add_argument("log_b")
    p_eval.add_argument("--bin", type=float, default=40.0)
    p_eval.set_defaults(func=cmd_evaluate)

    p_qq = sub.add_parser("qq", help="Gaussian QQ data and loss census for a trace")
    p_qq.add_argument("--trace", required=True)
    p_qq.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p_qq.add_argument("--d-min", type=float, default=0.0)
    p_qq.add_argument("--d-max", type=float, default=float("inf"))
    p_qq.add_argument("--bin", type=float, default=40.0, help="census bin width")
    p_qq.set_defaults(func=cmd_qq)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        _apply_config(args, config, parser)
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return USAGE_ERROR
    except (trace.TraceFormatError, json.JSONDecodeError) as exc:
        print(f"error: bad input: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except pathloss.FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return COMPUTE_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
