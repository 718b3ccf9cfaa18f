"""Command-line interface: ``sarpricing {network,simulate,slope,report}``.

Exit codes are 0 on success, 2 for configuration errors, 3 for numeric
failures and 4 for file-system errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericError, SarPricingError
from .harness import (
    POLICIES,
    PRESETS,
    ScenarioConfig,
    build_table,
    export_results,
    load_scenario,
    loglog_slope,
    read_results_csv,
    run_experiment,
)
from .network import build_rbf_network, network_to_csv_text, read_feature_csv, warn_if_not_psd

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

log = logging.getLogger("sarpricing")


def _policies(text: str) -> tuple:
    names = tuple(p.strip() for p in text.split(",") if p.strip())
    bad = [p for p in names if p not in POLICIES]
    if bad or not names:
        raise ConfigurationError(f"unknown policies {bad}; choose from {', '.join(POLICIES)}")
    return names


def cmd_network(args) -> int:
    ids, X, _ = read_feature_csv(Path(args.features).read_text(encoding="utf-8"), args.columns)
    net = build_rbf_network(X, args.width, args.threshold, labels=ids, self_loops=args.self_loops)
    warn_if_not_psd(net)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(network_to_csv_text(net), encoding="utf-8")
    lo, hi = net.omega_min, net.omega_max
    print(f"wrote {out} ({net.size} segments, omega_min={lo:.6g}, omega_max={hi:.6g})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    overrides = {}
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    cfg = load_scenario(args.scenario, **overrides)
    policies = _policies(args.policies) if args.policies else cfg.policies
    seeds = cfg.seeds if args.seeds is None else args.seeds
    if seeds < 1:
        raise ConfigurationError("--seeds must be at least 1")
    res = run_experiment(cfg, policies, seeds, parallelism=args.parallel, master_seed=args.seed)
    export_results(res.rows, res.trajectories, args.out, scenario=res.scenario, plots=not args.no_plots)
    for pol in policies:
        if not res.seeds_for(pol):
            continue
        R = res.mean_trajectory(pol)
        print(f"{res.scenario.name} {pol}: mean R_T={R[-1]:.6g} over {len(res.seeds_for(pol))} seeds")
    if res.failures:
        for f in res.failures:
            print(f"failed: {f}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _mean_curve(trajs, scenario: str, policy: str) -> np.ndarray:
    sel = [tr.cum_regret for tr in trajs if tr.scenario == scenario and tr.policy == policy]
    if not sel:
        raise ConfigurationError(f"no rows for scenario {scenario!r} and policy {policy!r}")
    n = min(r.size for r in sel)
    return np.mean([r[:n] for r in sel], axis=0), len(sel)


def cmd_slope(args) -> int:
    trajs = read_results_csv(args.input)
    R, n = _mean_curve(trajs, args.scenario, args.policy)
    est = loglog_slope(R, window=args.window)
    print(f"slope={est.slope:.6f} stderr={est.stderr:.6f} seeds={n} points={est.points}")
    return EXIT_OK


def _scenario_for(out_dir: Path, name: str) -> ScenarioConfig:
    path = out_dir / "scenario.json"
    if path.exists():
        try:
            cfg = ScenarioConfig.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: malformed JSON ({exc})") from exc
        if cfg.name == name:
            return cfg
    if name in PRESETS:
        return PRESETS[name]
    raise ConfigurationError(f"no scenario.json or preset for {name!r}")


def cmd_report(args) -> int:
    out_dir = Path(args.in_dir)
    if not out_dir.is_dir():
        raise FileNotFoundError(f"{out_dir}: not a directory")
    trajs = read_results_csv(out_dir / "results.csv")
    names = sorted({tr.scenario for tr in trajs})
    rows, scenario = [], None
    for name in names:
        cfg = _scenario_for(out_dir, name)
        scenario = cfg if len(names) == 1 else None
        sub = sorted((tr for tr in trajs if tr.scenario == name), key=lambda tr: (POLICIES.index(tr.policy), tr.seed))
        rows.extend(build_table(cfg, sub))
    # results.csv is rewritten from what was read, so the bytes are unchanged
    export_results(rows, trajs, out_dir, scenario=scenario)
    print(f"regenerated summary.csv and plots in {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sarpricing", description="Network-shrunken dynamic pricing simulations.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    net = sub.add_parser("network", help="network construction")
    net_sub = net.add_subparsers(dest="action", required=True)
    b = net_sub.add_parser("build", help="RBF contiguity matrix from node features")
    b.add_argument("--features", required=True, help="CSV with a segment id column then feature columns")
    b.add_argument("--width", type=float, required=True, help="RBF kernel width")
    b.add_argument("--threshold", type=float, default=0.0, help="weights below this are zeroed")
    b.add_argument("--columns", type=lambda s: s.split(","), default=None, help="comma-separated feature subset")
    b.add_argument("--self-loops", action="store_true", help="keep the unit kernel diagonal")
    b.add_argument("--out", required=True, help="output matrix CSV")
    b.set_defaults(func=cmd_network)

    s = sub.add_parser("simulate", help="run replications and export results")
    s.add_argument("--scenario", required=True, help=f"preset name or JSON file; presets: {', '.join(PRESETS)}")
    s.add_argument("--policies", default=None, help="comma-separated subset of " + ",".join(POLICIES))
    s.add_argument("--seeds", type=int, default=None, help="number of replications")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--parallel", type=int, default=1, help="worker processes")
    s.add_argument("--seed", type=int, default=None, help="master seed")
    s.add_argument("--horizon", type=int, default=None, help="override the scenario horizon")
    s.add_argument("--no-plots", action="store_true", help="skip SVG output")
    s.set_defaults(func=cmd_simulate)

    sl = sub.add_parser("slope", help="tail log-log slope of seed-averaged regret")
    sl.add_argument("--input", required=True, help="results.csv")
    sl.add_argument("--scenario", required=True)
    sl.add_argument("--policy", required=True)
    sl.add_argument("--window", type=float, default=0.5, help="tail fraction used in the fit")
    sl.set_defaults(func=cmd_slope)

    r = sub.add_parser("report", help="regenerate summary.csv and plots from results.csv")
    r.add_argument("--in", dest="in_dir", required=True, help="directory written by simulate")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SarPricingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
