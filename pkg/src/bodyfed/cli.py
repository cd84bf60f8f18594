"""``bodyfed`` command line: fit-channel, run, sweep, breakeven, report.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import BUILD_ID
from .channel import ChannelConfigError, ChannelModel, PostureChain, fit_loss_model, read_loss_csv
from .config import ConfigError, ScenarioConfig, set_dotted
from .datasets import DatasetError
from .harness import (SUMMARY_METRICS, aggregate_summaries,
                      compare_against_streaming, run_experiment)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_config(path) -> ScenarioConfig:
    return ScenarioConfig.load(path) if path else ScenarioConfig()


def run_cell(cfg: ScenarioConfig, seed: int, out_dir) -> dict:
    cfg = ScenarioConfig.from_dict({**cfg.to_dict(), "seed": int(seed)})
    return run_experiment(cfg, [seed], out_dir)


def cmd_fit_channel(args) -> int:
    samples = read_loss_csv(args.input)
    model = fit_loss_model(samples, family=args.family)
    chain = PostureChain.sticky(model.postures, args.stay)
    ChannelModel(chain, model).save(args.out)
    print(f"wrote {args.out}: {len(model.groups)} (location, posture) groups")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    summary = run_cell(cfg, seed, args.out)
    s = summary["per_seed"][0]
    print(f"{s['policy']} seed={seed}: final macro-F1 {s['final_macro_f1']:.4f}, "
          f"worst-location F1 {s['final_worst_location_f1']:.4f}, "
          f"rounds-to-target {s['rounds_to_target']}")
    return EXIT_OK


def _parse_value(token: str):
    try:
        return json.loads(token)
    except json.JSONDecodeError:
        return token


def _sweep_job(job):
    doc, seed, out = job
    return run_cell(ScenarioConfig.from_dict(doc), seed, out)


def cmd_sweep(args) -> int:
    base = _load_config(args.config).to_dict()
    values = [_parse_value(v) for v in args.values.split(",") if v != ""]
    seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    if not values or not seeds:
        raise UsageError("--values and --seeds must each list at least one entry")
    out = Path(args.out)
    jobs = []
    for v in values:
        doc = set_dotted(base, args.param, v)
        ScenarioConfig.from_dict(doc)  # validate before running anything
        for s in seeds:
            jobs.append((doc, s, out / f"{args.param}={v}" / f"seed={s}"))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep_summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "value", "seed", "policy"] + list(SUMMARY_METRICS))
        for (doc, s, _), summ in zip(jobs, results):
            row = summ["per_seed"][0]
            v = _get_dotted(doc, args.param)
            w.writerow([args.param, v if isinstance(v, str) else json.dumps(v), s, row["policy"]]
                       + [_cell(row.get(k)) for k in SUMMARY_METRICS])
    print(f"wrote {len(jobs)} runs under {out}")
    return EXIT_OK


def _get_dotted(doc, path):
    for part in path.split("."):
        doc = doc[part]
    return doc


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cmd_breakeven(args) -> int:
    if args.analytic:
        cfg = _load_config(args.config)
        report = compare_against_streaming(cfg, None, args.out)
    else:
        if not args.run_dir:
            raise ConfigError("measured break-even needs --run-dir with a finished run "
                              "(or pass --analytic)")
        run_dir = Path(args.run_dir)
        summ_path = run_dir / "summary.json"
        if not summ_path.exists():
            raise ConfigError(f"no summary.json in {run_dir}")
        summary = json.loads(summ_path.read_text(encoding="utf-8"))
        cfg = _load_config(args.config) if args.config else ScenarioConfig.from_dict(summary["config"])
        report = compare_against_streaming(cfg, summary, args.out)
    print(report["summary_line"])
    return EXIT_OK


def _find_summaries(dirs) -> list[Path]:
    found = []
    for d in dirs:
        p = Path(d)
        if not p.is_dir():
            raise ConfigError(f"not a directory: {p}")
        found.extend(sorted(p.rglob("summary.json")))
    return found


def cmd_report(args) -> int:
    dirs = [d for d in (args.inputs or "").split(",") if d]
    if not dirs:
        raise UsageError("--in needs at least one directory")
    paths = _find_summaries(dirs)
    if not paths:
        raise ConfigError("no summary.json found under the given directories")
    rows: dict[tuple[str, int], dict] = {}
    for p in paths:
        doc = json.loads(p.read_text(encoding="utf-8"))
        for s in doc["per_seed"]:
            rows[(s["policy"], s["seed"])] = s
    header = ["policy", "seed"] + list(SUMMARY_METRICS)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for key in sorted(rows):
            w.writerow([key[0], key[1]] + [_cell(rows[key].get(k)) for k in SUMMARY_METRICS])
        for policy in sorted({p for p, _ in rows}):
            med, _ = aggregate_summaries([rows[k] for k in sorted(rows) if k[0] == policy])
            w.writerow([policy, "median"] + [_cell(med.get(k)) for k in SUMMARY_METRICS])
    print(f"wrote {args.out}: {len(rows)} runs")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bodyfed", description="Body-channel-aware federated learning simulator")
    p.add_argument("--version", action="version", version=BUILD_ID)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit-channel", help="fit loss distributions from location,posture,loss_db CSV")
    f.add_argument("--input", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--family", choices=["lognormal", "empirical"], default="lognormal")
    f.add_argument("--stay", type=float, default=0.9, help="posture self-transition probability")
    f.set_defaults(func=cmd_fit_channel)

    r = sub.add_parser("run", help="run one scenario for one seed")
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="grid over one dotted config path and seeds")
    s.add_argument("--config")
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True)
    s.add_argument("--seeds", default="0")
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("breakeven", help="raw streaming vs FL energy")
    b.add_argument("--config")
    b.add_argument("--analytic", action="store_true")
    b.add_argument("--run-dir")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_breakeven)

    rp = sub.add_parser("report", help="merge run summaries into one table")
    rp.add_argument("--in", dest="inputs", required=True)
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"bodyfed: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ChannelConfigError, DatasetError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"bodyfed: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"bodyfed: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
