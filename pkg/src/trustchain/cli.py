"""Command-line harness: one subcommand per experiment, CSV plus manifest out.

Exit codes: 0 success, 1 configuration error, 2 ``--check`` failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional

from .config import ExperimentConfig, load_config
from .consensus import ValidationPolicy, min_tx_val, min_validators, p_no_detection, tx_val_count
from .core import DomainError
from .data_trust import tolerable_malicious
from .scenario import ConfigError
from . import simnet

log = logging.getLogger("trustchain")

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2

TABLE1_GOLDEN = {
    5: ([42, 35, 27, 20, 13], 36, 41),
    10: ([36, 30, 24, 17, 11], 24, 29),
    15: ([31, 26, 20, 15, 10], 18, 23),
}
TABLE1_TX_TOTAL = 48


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(simnet._fmt(v) for v in r)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Closed-form tables
# ---------------------------------------------------------------------------

def table1(policy: Optional[ValidationPolicy] = None, tx_total: int = TABLE1_TX_TOTAL) -> list:
    """Rows of (n_val, tx_val at rep 1..5, tx_val for miss < 1e-3, tx_val for miss < 1e-4)."""
    policy = policy or ValidationPolicy()
    rows = []
    for n_val in (5, 10, 15):
        counts = [tx_val_count(tx_total, rep, n_val, policy) for rep in (1, 2, 3, 4, 5)]
        rows.append((n_val, *counts, min_tx_val(tx_total, 1, n_val, 1e-3), min_tx_val(tx_total, 1, n_val, 1e-4)))
    return rows


def check_table1(rows) -> list:
    bad = []
    for n_val, *rest in rows:
        want_counts, want_3, want_4 = TABLE1_GOLDEN[n_val]
        if list(rest[:5]) != want_counts or rest[5] != want_3 or rest[6] != want_4:
            bad.append(f"table1 row N_val={n_val}: got {rest}, want {want_counts + [want_3, want_4]}")
    return bad


def detection_prob_rows(tx_total: int, n_vals, tx_invals) -> list:
    rows = []
    for n in n_vals:
        for inval in tx_invals:
            for v in range(1, tx_total + 1):
                rows.append((tx_total, n, inval, v, v / tx_total, p_no_detection(tx_total, inval, v, n)))
    return rows


def min_validators_rows(tx_total: int, thresholds, tx_inval: int = 1) -> list:
    rows = []
    for th in thresholds:
        for v in range(1, tx_total + 1):
            rows.append((th, v, min_validators(tx_total, tx_inval, v, th)))
    return rows


def tolerable_rows(K: int, conf_m: float, steps: int = 100) -> list:
    rows = [(K, conf_m, 0.0, math.inf, tolerable_malicious(K, math.inf))]
    for i in range(1, steps + 1):
        conf_h = i / steps
        rows.append((K, conf_m, conf_h, conf_m / conf_h, tolerable_malicious(K, conf_m / conf_h)))
    return rows


# ---------------------------------------------------------------------------
# Subcommand bodies. Each returns ({filename: csv text}, summary dict, problems list).
# ---------------------------------------------------------------------------

def _cmd_table1(args, cfg):
    rows = table1(cfg.policy.policy())
    text = _csv(["n_val", "rep1", "rep2", "rep3", "rep4", "rep5", "miss_lt_1e-3", "miss_lt_1e-4"], rows)
    return {"table1.csv": text}, {"rows": len(rows)}, check_table1(rows) if args.check else []


def _cmd_detection(args, cfg):
    rows = detection_prob_rows(args.tx_total, args.n_val, args.tx_inval)
    text = _csv(["tx_total", "n_val", "tx_inval", "tx_val", "fraction", "p_no_detection"], rows)
    problems = []
    if args.check:
        p = p_no_detection(100, 1, 30, 20)
        if not 7.9e-4 <= p <= 8.0e-4:
            problems.append(f"p_no_detection(100,1,30,20)={p:.4e} outside [7.9e-4, 8.0e-4]")
    return {"detection_prob.csv": text}, {"rows": len(rows)}, problems


def _cmd_min_validators(args, cfg):
    rows = min_validators_rows(args.tx_total, args.threshold)
    text = _csv(["threshold", "tx_val", "min_validators"], rows)
    problems = []
    if args.check:
        for v, want in ((25, 25), (40, 14)):
            got = min_validators(100, 1, v, 0.001)
            if got != want:
                problems.append(f"min_validators(100,1,{v},0.001)={got}, want {want}")
    return {"min_validators.csv": text}, {"rows": len(rows)}, problems


def _cmd_tolerable(args, cfg):
    rows = tolerable_rows(args.K, args.conf_m, args.steps)
    text = _csv(["K", "conf_m", "conf_h", "c", "tolerable_malicious"], rows)
    problems = []
    if args.check and tolerable_malicious(100, 1) != 49:
        problems.append("tolerable_malicious(100,1) != 49")
    return {"tolerable.csv": text}, {"rows": len(rows)}, problems


def _cmd_localization(args, cfg):
    trace = simnet.localization_run(cfg, args.seed)
    means = trace.block_means()
    summary_text = _csv(["block", "diverged", "mean_trust_honest", "mean_trust_malicious"], means)
    rate = trace.separation_rate()
    problems = []
    if args.check and not rate >= 0.95:
        problems.append(f"trust separation in {rate:.3f} of diverged blocks, want >= 0.95")
    return ({"localization.csv": trace.to_csv(), "localization_blocks.csv": summary_text},
            {"separation_rate": rate, "diverged_blocks": sum(trace.diverged)}, problems)


def _cmd_invalid_blocks(args, cfg):
    files, summary, problems = {}, {}, []
    rows = []
    for n_val in args.n_val:
        for n_inv in args.n_invalid:
            for dr in args.delta_r:
                tr = simnet.invalid_block_experiment(n_val, n_inv, dr, args.seed, base=cfg, tamper=args.tamper)
                name = f"invalid_blocks_nval{n_val}_ninv{n_inv}_dr{dr:g}.csv"
                files[name] = tr.to_csv()
                rows.append((n_val, n_inv, dr, len(tr.invalid_blocks), tr.detected, tr.missed,
                             tr.false_rejections, tr.reputation()[-1]))
                must_catch_all = n_inv >= 10 or (n_inv >= 2 and n_val >= 15)
                if args.check and must_catch_all and tr.missed:
                    problems.append(f"N_val={n_val}, n_invalid={n_inv}: {tr.missed} invalid blocks missed")
    files["invalid_blocks_summary.csv"] = _csv(
        ["n_val", "n_invalid_tx", "delta_r", "invalid_blocks", "detected", "missed",
         "false_rejections", "final_rep"], rows)
    summary["configurations"] = len(rows)
    return files, summary, problems


def _cmd_delay(args, cfg):
    table = simnet.delay_experiment(cfg, args.seed, args.n_val)
    hi, lo, base = table.row("proposed_high_rep"), table.row("proposed_low_rep"), table.row("baseline")
    problems = []
    if args.check and not hi.validation_latency < base.validation_latency < lo.validation_latency:
        problems.append("validation latency ordering high-rep < baseline < low-rep violated")
    return {"delay.csv": table.to_csv()}, {"e2e_overhead_low_rep": table.e2e_overhead}, problems


def _cmd_run(args, cfg):
    m = simnet.run(cfg, simnet.Mode(args.mode), args.seed)
    problems = []
    if args.check:
        for b in m.blocks:
            if not b.e2e_latency >= b.blockchain_latency >= b.validation_latency:
                problems.append(f"latency ordering violated in block {b.slot}")
    summary = {"blocks": len(m.blocks), "accepted": sum(b.accepted for b in m.blocks),
               "emitted": m.emitted, "discarded": m.discarded, "isolated": m.isolated}
    return {f"run_{args.mode}.csv": m.to_csv()}, summary, problems


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _floats(s: str) -> list:
    return [float(x) for x in s.split(",") if x]


def _ints(s: str) -> list:
    return [int(x) for x in s.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--check", action="store_true", help="verify golden values; exit 2 on mismatch")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key, value parsed as YAML")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="trustchain", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("table1", parents=[common], help="transactions to validate per validator")

    s = sub.add_parser("detection-prob", parents=[common], help="miss probability vs sample size")
    s.add_argument("--tx-total", type=int, default=100)
    s.add_argument("--n-val", type=_ints, default=[1, 5, 10, 20])
    s.add_argument("--tx-inval", type=_ints, default=[1, 5])

    s = sub.add_parser("min-validators", parents=[common], help="validators needed per threshold")
    s.add_argument("--tx-total", type=int, default=100)
    s.add_argument("--threshold", type=_floats, default=[0.01, 0.001, 0.0001])

    s = sub.add_parser("tolerable", parents=[common], help="collusion tolerance vs honest confidence")
    s.add_argument("--K", type=int, default=100)
    s.add_argument("--conf-m", type=float, default=1.0)
    s.add_argument("--steps", type=int, default=100)

    sub.add_parser("localization", parents=[common], help="per-sensor RSSI and trust trace")

    s = sub.add_parser("invalid-blocks", parents=[common], help="205/105/105 detection experiment")
    s.add_argument("--n-val", type=_ints, default=[5, 10, 15])
    s.add_argument("--n-invalid", type=_ints, default=[1, 2, 5, 10])
    s.add_argument("--delta-r", type=_floats, default=[0.01])
    s.add_argument("--tamper", choices=["forge_trust", "tamper_tx"], default="forge_trust")

    s = sub.add_parser("delay", parents=[common], help="latency of proposed vs baseline")
    s.add_argument("--n-val", type=int, default=10)

    s = sub.add_parser("run", parents=[common], help="one full network simulation")
    s.add_argument("--mode", choices=[m.value for m in simnet.Mode], default="proposed")
    return p


COMMANDS: dict = {
    "table1": _cmd_table1,
    "detection-prob": _cmd_detection,
    "min-validators": _cmd_min_validators,
    "tolerable": _cmd_tolerable,
    "localization": _cmd_localization,
    "invalid-blocks": _cmd_invalid_blocks,
    "delay": _cmd_delay,
    "run": _cmd_run,
}


def _apply_sets(cfg: ExperimentConfig, sets: list) -> ExperimentConfig:
    import yaml

    sections: dict = {}
    for item in sets:
        key, sep, raw = item.partition("=")
        section, dot, field_name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        sections.setdefault(section, {})[field_name] = yaml.safe_load(raw)
    return cfg.with_overrides(**sections) if sections else cfg


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_sets(load_config(args.config), args.set)
        if args.seed is None:
            args.seed = cfg.seed
        files, summary, problems = COMMANDS[args.command](args, cfg)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
    argv_used = {k: v for k, v in vars(args).items() if k not in ("out", "verbose")}
    meta = simnet.manifest(cfg, args.seed, command=args.command, arguments=argv_used,
                           outputs=sorted(files), summary=summary)
    (out / f"{args.command}.manifest.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")

    print(json.dumps({"command": args.command, "out": str(out), **summary}, default=str))
    for prob in problems:
        print(f"CHECK FAILED: {prob}", file=sys.stderr)
    if args.check and not problems:
        print("check passed")
    return EXIT_CHECK if problems else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
