"""Acceptance gate: every criterion at its stated tolerance and default budget.

Each experiment runs once through the command line (so a manifest exists for
the reproducibility check) and the result is cached for the session. One
PASS/FAIL line per criterion is printed in the terminal summary.
"""
import json
import time

import pytest

from conftest import ACCEPTANCE_LINES
from stableavg.cli import main
from stableavg.experiments import CRITERION_TO_EXPERIMENT

pytestmark = pytest.mark.acceptance

RUNTIME_LIMITS = {1: 10.0, 2: 120.0, 5: 300.0, 7: 300.0, 12: 900.0}

_RUNS: dict[str, dict] = {}


@pytest.fixture(scope="session")
def runs_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def run_once(name, root):
    if name not in _RUNS:
        out = root / name
        t0 = time.perf_counter()
        code = main(["run", "--experiment", name, "--out", str(out), "--workers", "1"])
        elapsed = time.perf_counter() - t0
        summary = json.loads((out / "summary.json").read_text())
        _RUNS[name] = dict(code=code, elapsed=elapsed, summary=summary, out=out)
    return _RUNS[name]


def _fmt(numbers):
    parts = []
    for k, v in numbers.items():
        if isinstance(v, float):
            parts.append(f"{k}={v:.4g}")
        elif isinstance(v, dict):
            parts.append(f"{k}=" + ",".join(f"{a}:{b:.4g}" if isinstance(b, float) else f"{a}:{b}"
                                            for a, b in v.items()))
        elif isinstance(v, list) and v and isinstance(v[0], float):
            parts.append(f"{k}=[" + ",".join(f"{x:.4g}" for x in v) + "]")
        else:
            parts.append(f"{k}={v}")
    return " ".join(parts)


def record(number, passed, detail):
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


@pytest.mark.parametrize("number", range(1, 14))
def test_criterion(number, runs_dir):
    name = CRITERION_TO_EXPERIMENT[number]
    run = run_once(name, runs_dir)
    crits = [c for c in run["summary"]["criteria"] if c["criterion"] == number]
    assert crits, f"{name} reported nothing for criterion {number}"
    passed = all(c["status"] == "PASS" for c in crits)
    detail = "; ".join(f"{c['name']}: {c['status']} {_fmt(c['numbers'])}" for c in crits)
    limit = RUNTIME_LIMITS.get(number)
    if limit is not None:
        in_time = run["elapsed"] < limit
        passed &= in_time
        detail += f"; runtime {run['elapsed']:.1f}s (limit {limit:.0f}s)"
    record(number, passed, f"[{name}] {detail}")
    assert all(c["status"] == "PASS" for c in crits), detail
    if limit is not None:
        assert run["elapsed"] < limit, f"{name} took {run['elapsed']:.1f}s"


def test_criterion_14_reproducible_from_manifest(runs_dir):
    names = [CRITERION_TO_EXPERIMENT[k] for k in range(1, 14)]
    mismatched = []
    for name in dict.fromkeys(names):
        first = run_once(name, runs_dir)["out"]
        again = runs_dir / f"{name}-rerun"
        main(["run", "--config", str(first / "manifest.json"), "--out", str(again),
              "--workers", "4", "--force"])
        for fname in (f"{name}.csv", "summary.json"):
            if (first / fname).read_bytes() != (again / fname).read_bytes():
                mismatched.append(f"{name}/{fname}")
    n = len(set(names))
    record(14, not mismatched, f"[all] {n} experiments re-run from manifest with 4 workers: "
           + ("byte-identical" if not mismatched else "differ: " + ", ".join(mismatched)))
    assert not mismatched
