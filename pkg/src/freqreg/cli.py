"""Command-line scenario runner.

    freqreg gen signal KIND --out FILE [--duration S] [--seed N]
    freqreg gen trace (--table NAME | --mean M --variance V --min A --max B) --out FILE
    freqreg simulate [--config FILE] [--out-dir DIR] [--seed N] [--sweep key=a,b,c]
    freqreg grid     [--config FILE] [--out-dir DIR] [--seed N] [--sweep key=a,b,c]
    freqreg report   [--config FILE] [--out-dir DIR]

Exit codes: 0 success, 2 usage or configuration error, 3 missing or stale
inputs, 4 infeasible model, 1 anything else.  Errors are printed to stderr as
one JSON object.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from pathlib import Path

from . import carbon, config, grid, market, pipeline, signals
from .controller import export_records
from .errors import ConfigError, InfeasibleError, ParameterError, ParseError, ValidationError
from .powermodel import GpuModelParams, ServerSpec

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_MISSING, EXIT_INFEASIBLE = 0, 1, 2, 3, 4


class MissingInputError(RuntimeError):
    """Outputs of an earlier command are absent or were made with another config."""


# --- builders --------------------------------------------------------------

def build_spec(cfg) -> ServerSpec:
    g = cfg["gpu"]
    s = cfg["server"]
    return ServerSpec(n_gpus=int(s["n_gpus"]), gpu=GpuModelParams(**g),
                      p_cpu_base=float(s["p_cpu_base"]), gpu_lc_peak=float(s["gpu_lc_peak"]))


def build_signal(cfg) -> signals.RegulationSignal:
    sc = cfg["signal"]
    if sc["file"]:
        return signals.import_series(sc["file"], "signal", ramp_limit=sc["ramp_limit"])
    seed = pipeline.split_seed(cfg["seed"], "signal")
    return signals.generate_signal(sc["kind"], sc["duration_s"], sc["step_s"], sc["ramp_limit"],
                                   seed=seed)


def build_trace(cfg, duration) -> signals.LoadTrace:
    tc = cfg["trace"]
    if tc["file"]:
        return signals.import_series(tc["file"], "trace")
    seed = pipeline.split_seed(cfg["seed"], "trace")
    if tc["mean_pct"] >= 0:
        return signals.generate_load_trace(tc["mean_pct"], tc["variance"], tc["min_pct"],
                                           tc["max_pct"], duration=duration,
                                           step=tc["step_s"], seed=seed)
    return signals.table_trace(tc["table"], duration=duration, step=tc["step_s"], seed=seed)


def build_prices(cfg) -> pipeline.Prices:
    m = cfg["market"]
    return pipeline.Prices(m["cost"], m["rew_up"], m["rew_down"], m["threshold"])


def build_problem(cfg, signal) -> grid.UcProblem:
    gc = cfg["grid"]
    if gc["generators"]:
        gens = tuple(_generator(g) for g in gc["generators"])
    else:
        gens = grid.figure_fleet()
    return grid.UcProblem(gens, tuple(gc["demand_mw"]), gc["reserve_up_mw"],
                          gc["reserve_down_mw"], 0.0,
                          signal if gc["use_signal"] else None)


def _generator(table) -> grid.Generator:
    try:
        return grid.Generator(**table)
    except TypeError as exc:
        raise ConfigError(f"grid.generators entry {table!r}: {exc}") from None


def build_dc(cfg) -> carbon.DcSpec:
    d = dict(cfg["dc"])
    comp = carbon.ServerComponents(int(d.pop("gpus_per_server")), d.pop("gpu_kg"),
                                   d.pop("cpu_kg"), d.pop("dram_kg"), d.pop("disk_kg"))
    return carbon.DcSpec(components=comp, **d)


def validate_config(cfg):
    """Build every embedded spec once so invariant violations surface at load."""
    build_spec(cfg)
    build_prices(cfg)
    build_dc(cfg)
    carbon.TcoPrices(**cfg["tco"])
    for g in cfg["grid"]["generators"]:
        _generator(g)
    for name in cfg["report"]["scenarios"]:
        if name not in carbon.SCENARIOS:
            raise ConfigError(f"unknown scenario {name!r}; expected one of {carbon.SCENARIOS}")
    if not cfg["signal"]["file"]:
        signals.SignalKind.parse(cfg["signal"]["kind"])


# --- commands --------------------------------------------------------------

def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_simulate(cfg, out_dir: Path) -> dict:
    spec = build_spec(cfg)
    sig = build_signal(cfg)
    duration = len(sig.samples) * sig.step_seconds
    trace = build_trace(cfg, duration)
    hours = int(cfg["simulate"]["hours"]) or None
    results = pipeline.simulate(spec, trace, sig, build_prices(cfg), seed=cfg["seed"],
                                hours=hours, symmetric=cfg["market"]["symmetric"])
    out_dir.mkdir(parents=True, exist_ok=True)
    export_records([r for h in results for r in h.records], out_dir / "records.csv")
    market.export_scores([s for h in results for s in h.scores], out_dir / "scores.csv")
    market.export_settlements([(h.hour, h.settlement) for h in results],
                              out_dir / "settlement.csv")
    with (out_dir / "bids.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "band_quantile", "p_fr", "r_up", "r_down", "withdraw"])
        for h in results:
            b = h.decision.bid
            if b is None:
                w.writerow([h.hour, "", "", "", "", 1])
            else:
                w.writerow([h.hour, f"{h.quantile:.2f}", f"{b.p_fr:.6f}", f"{b.r_up:.6f}",
                            f"{b.r_down:.6f}", 0])
    summary = pipeline.summarize(results, spec)
    records = [r for h in results for r in h.records]
    summary["baseline_power_w"] = sum(r.lc_w for r in records) / len(records)
    summary["mean_power_w"] = sum(r.achieved_w for r in records) / len(records)
    summary["config_digest"] = config.digest(cfg, config.SIM_SECTIONS)
    _write_json(out_dir / "summary.json", summary)
    return {"mean_composite": summary["mean_composite"],
            "mean_provision_w": summary["mean_provision_w"], "saving": summary["saving"]}


def cmd_grid(cfg, out_dir: Path) -> dict:
    gc = cfg["grid"]
    sig = build_signal(cfg) if gc["use_signal"] else None
    problem = build_problem(cfg, sig)
    res = grid.mce_resv(problem, gc["r_dc_mw"])
    horizon = len(problem.demand)
    simple = grid.simple_mce(gc["ci_resv"], sig if sig is not None else [0.0], horizon)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid.export_solution(res["without"], problem, out_dir / "uc_without.csv")
    grid.export_solution(res["with"], problem, out_dir / "uc_with.csv")
    data = {"mce": res["mce"], "simple_mce": simple, "r_dc_mw": gc["r_dc_mw"],
            "horizon_h": horizon,
            "without": grid.solution_totals(res["without"]),
            "with": grid.solution_totals(res["with"]),
            "config_digest": config.digest(cfg, config.GRID_SECTIONS)}
    _write_json(out_dir / "grid.json", data)
    return {"mce": res["mce"], "simple_mce": simple,
            "plant_hours_without": res["without"].plant_hours,
            "plant_hours_with": res["with"].plant_hours}


def _read_output(path: Path, cfg, sections, producer) -> dict:
    if not path.is_file():
        raise MissingInputError(f"missing input {path}; run `freqreg {producer}` first")
    data = json.loads(path.read_text(encoding="utf-8"))
    if data.get("config_digest") != config.digest(cfg, sections):
        raise MissingInputError(f"stale input {path}: produced with a different config; "
                                f"rerun `freqreg {producer}`")
    return data


def cmd_report(cfg, out_dir: Path) -> dict:
    sim = _read_output(out_dir / "summary.json", cfg, config.SIM_SECTIONS, "simulate")
    grd = _read_output(out_dir / "grid.json", cfg, config.GRID_SECTIONS, "grid")
    inputs = carbon.ScenarioInputs(
        ci_gen=cfg["report"]["ci_gen"], mce=grd["mce"], mce_horizon_h=grd["horizon_h"],
        baseline_power_w=sim["baseline_power_w"], ecocenter_power_w=sim["mean_power_w"],
        ecocenter_provision_w=sim["mean_provision_w"],
        server_nameplate_w=sim["nameplate_w"],
        be_gpu_hours_lost_per_h=sim["be_gpu_hours_lost"] / sim["hours"])
    t = cfg["tco"]
    prices = carbon.TcoPrices(**t)
    reports = carbon.build_all(build_dc(cfg), inputs, prices, tuple(cfg["report"]["scenarios"]))
    carbon.write_reports(reports, out_dir)
    return {c.scenario + "_c_op_with_rs": c.c_op_with_rs for c, _ in reports}


COMMANDS = {"simulate": cmd_simulate, "grid": cmd_grid, "report": cmd_report}


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.9g}"
    return "" if v is None else str(v)


def run_command(name, cfg, out_dir: Path, sweep=None):
    func = COMMANDS[name]
    if sweep is None:
        return func(cfg, out_dir)
    key, values = config.parse_sweep(sweep)
    rows = []
    for value in values:
        sub = copy.deepcopy(cfg)
        config.set_dotted(sub, key, value)
        config.check_keys(sub, config.DEFAULTS)
        metrics = func(sub, out_dir / f"{key}={value}")
        rows.append((value, metrics))
    out_dir.mkdir(parents=True, exist_ok=True)
    names = sorted({k for _, m in rows for k in m})
    with (out_dir / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([key, *names])
        for value, m in rows:
            w.writerow([_fmt(value), *(_fmt(m.get(n)) for n in names)])
    return rows


def cmd_gen(args) -> Path:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.what == "signal":
        sig = signals.generate_signal(args.kind, args.duration, args.step, args.ramp_limit,
                                      seed=args.seed)
        return signals.export_series(sig, out)
    if args.table:
        trace = signals.table_trace(args.table, args.duration, args.step, seed=args.seed)
    else:
        missing = [n for n in ("mean", "variance", "min", "max") if getattr(args, n) is None]
        if missing:
            raise ConfigError("gen trace needs --table or all of --mean --variance --min --max")
        trace = signals.generate_load_trace(args.mean, args.variance, args.min, args.max,
                                            duration=args.duration, step=args.step,
                                            seed=args.seed)
    return signals.export_series(trace, out)


# --- argument parsing ------------------------------------------------------

SIGNAL_KINDS = ("extreme", "noisy", "high_transition", "E", "N", "HT")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqreg",
        description="Frequency-regulation scenarios for GPU servers.",
        epilog=f"Environment overrides: {config.ENV_PREFIX}<SECTION>__<KEY>=<value>")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a regulation signal or LC load trace")
    gen_sub = gen.add_subparsers(dest="what", required=True)
    gs = gen_sub.add_parser("signal")
    gs.add_argument("kind", choices=SIGNAL_KINDS)
    gs.add_argument("--duration", type=float, default=3600.0)
    gs.add_argument("--step", type=float, default=signals.DEFAULT_STEP_S)
    gs.add_argument("--ramp-limit", type=float, default=signals.DEFAULT_RAMP_LIMIT)
    gs.add_argument("--seed", type=int, default=0)
    gs.add_argument("--out", required=True)
    gt = gen_sub.add_parser("trace")
    gt.add_argument("--table", choices=sorted(signals.TABLE_TRACES))
    for name in ("mean", "variance", "min", "max"):
        gt.add_argument(f"--{name}", type=float)
    gt.add_argument("--duration", type=float, default=3600.0)
    gt.add_argument("--step", type=float, default=60.0)
    gt.add_argument("--seed", type=int, default=0)
    gt.add_argument("--out", required=True)

    for name, text in (("simulate", "run the hourly bid/track/score/settle loop"),
                       ("grid", "solve unit commitment with and without DC provision"),
                       ("report", "carbon and TCO reports from simulate + grid outputs")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="TOML scenario file (schema_version = 1)")
        p.add_argument("--out-dir", help="output directory (default from config)")
        p.add_argument("--seed", type=int, help="root seed (overrides config)")
        p.add_argument("--sweep", metavar="KEY=A,B,C",
                       help="repeat the command for each value of a dotted config key")
    return parser


def _error(exc, code) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("path", "line", "index", "hour", "constraint"):
        value = getattr(exc, attr, None)
        if value is not None:
            payload[attr] = str(value) if attr == "path" else value
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen":
            path = cmd_gen(args)
            print(path)
            return EXIT_OK
        overrides = {"seed": args.seed} if args.seed is not None else None
        cfg = config.load_config(args.config, overrides=overrides)
        validate_config(cfg)
        out_dir = Path(args.out_dir or cfg["out_dir"])
        run_command(args.command, cfg, out_dir, args.sweep)
        print(out_dir)
        return EXIT_OK
    except MissingInputError as exc:
        return _error(exc, EXIT_MISSING)
    except InfeasibleError as exc:
        return _error(exc, EXIT_INFEASIBLE)
    except FileNotFoundError as exc:
        return _error(exc, EXIT_USAGE)
    except (ConfigError, ParameterError, ParseError, ValidationError) as exc:
        return _error(exc, EXIT_USAGE)
    except Exception as exc:  # noqa: BLE001 - report any module failure, structured
        return _error(exc, EXIT_FAIL)


if __name__ == "__main__":
    sys.exit(main())
