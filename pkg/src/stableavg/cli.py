"""Command-line runner: ``stableavg run | list-experiments | validate-config``.

Exit codes: 0 success, 1 a criterion failed (or validation found hypothesis
violations), 2 configuration or infrastructure error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import subprocess
import sys
import time
import warnings
from pathlib import Path

from . import __version__
from .experiments import (EXPERIMENTS, ConfigError, ExperimentConfig, derive_seed,
                          run_experiment)
from .systems import HypothesisWarning

log = logging.getLogger("stableavg")

PRESETS = {"toy": dict(system="toy", overrides={})}
OVERRIDE_FLAGS = (("alpha", "alpha1"), ("alpha1", "alpha1"), ("alpha2", "alpha2"),
                  ("eps", "eps"), ("r0", "r0"))


def _parse_budget(items):
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def build_config(args) -> ExperimentConfig:
    """Merge defaults, the config file and flags (flags win)."""
    d: dict = {}
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        d = d.get("config", d)  # a manifest embeds the config
    if args.preset:
        for k, v in PRESETS[args.preset].items():
            d.setdefault(k, v)
    if args.experiment:
        d["experiment"] = args.experiment
    if args.system:
        d["system"] = args.system
    for k in ("seed", "workers"):
        if getattr(args, k) is not None:
            d[k] = getattr(args, k)
    if args.out:
        d["output_dir"] = args.out
    ov = dict(d.get("overrides", {}))
    for flag, key in OVERRIDE_FLAGS:
        v = getattr(args, flag, None)
        if v is not None:
            ov[key] = v
    d["overrides"] = ov
    d["budgets"] = {**d.get("budgets", {}), **_parse_budget(args.set)}
    return ExperimentConfig.from_dict(d)


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             capture_output=True, text=True, timeout=10,
                             cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_rows(path: Path, rows: list[dict]) -> None:
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: _cell(v) for k, v in r.items()})


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if hasattr(v, "item"):
        return v.item()
    return v


def summary_dict(res) -> dict:
    return {
        "experiment": res.experiment,
        "status": "PASS" if res.passed else "FAIL",
        "criteria": [dict(criterion=c.number, name=c.name, status=c.status,
                          numbers=_jsonable(c.numbers)) for c in res.criteria],
    }


def _check_hypotheses(cfg, force: bool) -> bool:
    msgs = cfg.hypothesis_warnings()
    for m in msgs:
        log.warning("%s", m)
    if msgs and not force:
        log.error("hypothesis checks failed; rerun with --force to proceed anyway")
        return False
    return True


def cmd_run(args) -> int:
    cfg = build_config(args)
    if not _check_hypotheses(cfg, args.force):
        return 2
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        # already reported (and forced) above
        warnings.simplefilter("ignore", HypothesisWarning)
        res = run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    manifest = dict(config=cfg.to_dict(), version=__version__, git=_git_describe(),
                    seed=cfg.seed, stream_seed=derive_seed(cfg.seed, cfg.experiment),
                    seed_rule="stream seed = seed XOR crc32('<experiment>/<unit>'); "
                              "paths keyed by block index", runtime_s=round(elapsed, 3))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    write_rows(out / f"{cfg.experiment}.csv", res.rows)
    summ = summary_dict(res)
    (out / "summary.json").write_text(json.dumps(summ, indent=2, sort_keys=True) + "\n")
    for c in summ["criteria"]:
        print(f"criterion {c['criterion']:>2} {c['status']}: {c['name']}")
    print(f"{cfg.experiment}: {summ['status']} ({elapsed:.1f} s) -> {out}")
    return 0 if res.passed else 1


def cmd_list(args) -> int:
    for e in EXPERIMENTS.values():
        tag = f"criterion {e.criterion}" if e.criterion else "no criterion"
        print(f"{e.name:<20} {tag:<13} {e.anchor}")
    return 0


def cmd_validate(args) -> int:
    cfg = build_config(args)
    msgs = cfg.hypothesis_warnings()
    for m in msgs:
        print(f"warning: {m}")
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return 1 if msgs else 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stableavg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config (or a manifest.json from an earlier run)")
        sp.add_argument("--experiment", choices=sorted(EXPERIMENTS))
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--system", help="coefficient registry key (toy, toy-y, wiggly, ...)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--force", action="store_true", help="run despite hypothesis warnings")
        for flag, _ in OVERRIDE_FLAGS:
            sp.add_argument(f"--{flag}", type=float)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a budget entry (value parsed as JSON)")

    common(sub.add_parser("run", help="run one experiment"))
    common(sub.add_parser("validate-config", help="parse and validate a configuration"))
    sub.add_parser("list-experiments", help="list the built-in experiments")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    handlers = {"run": cmd_run, "list-experiments": cmd_list, "validate-config": cmd_validate}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except Exception as exc:  # infrastructure failure: report and signal exit 2
        log.error("%s: %s", type(exc).__name__, exc)
        if args.verbose:
            raise
        return 2


if __name__ == "__main__":
    sys.exit(main())
