"""
Command-line front end.

    python -m fibered list [--tag TAG]
    python -m fibered run --scenario ID [--out DIR] [--seed S] [--threads T] [--grid-scale G]
    python -m fibered run --config run.json

``--scenario all`` runs the whole registry into one subdirectory per
scenario. The exit status is 0 iff no diagnostic outcome is ``fail``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import __version__
from . import model as md
from . import scenarios as sc
from .errors import ConfigError
from .reports import VERDICTS, digest, jsonable

logger = logging.getLogger(__name__)

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario"],
    "properties": {
        "scenario": {"enum": sorted(sc.REGISTRY) + ["all"]},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
        "grid_scale": {"type": "integer", "minimum": 1},
        "params": {"type": "object"},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scheme": {"enum": ["damped-newton", "gradient-flow"]},
                "step": {"type": "number", "exclusiveMinimum": 0},
                "residual_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iterations": {"type": "integer", "minimum": 1},
                "max_step": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "diagnostics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "select": {"type": "array", "items": {"type": "string"}},
                "tolerances": {"type": "object", "additionalProperties": {"type": "number"}},
            },
        },
    },
}

# keys that may differ between otherwise identical runs without changing results
_NON_SEMANTIC = ("out", "threads")


@dataclass
class RunReport:
    scenario: str
    config: dict
    diagnostics: list
    manifest: list
    timings: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(d["outcome"] == "fail" for d in self.diagnostics)

    def body(self) -> dict:
        cfg = {k: v for k, v in self.config.items() if k not in _NON_SEMANTIC}
        return {"scenario": self.scenario, "config": cfg, "diagnostics": self.diagnostics,
                "manifest": sorted(self.manifest), "version": __version__}

    @property
    def digest(self) -> str:
        return digest(self.body())

    def to_dict(self) -> dict:
        d = self.body()
        d["digest"] = self.digest
        d["timings"] = self.timings
        d["outcome"] = "fail" if self.failed else "pass"
        return d


def validate_config(cfg: dict) -> dict:
    md.validate_document(cfg, CONFIG_SCHEMA)
    out = {"seed": 0, "threads": 1, "grid_scale": 1, "params": {}, "solver": {}, "diagnostics": {}}
    out.update(cfg)
    if out["scenario"] == "all" and out["params"]:
        raise ConfigError("per-scenario params need a single scenario", "/params")
    return out


def _outcome(verdict: str, expected: str | None) -> str:
    if expected is None:
        return verdict
    return "pass" if verdict == expected else "fail"


def run(config: dict) -> RunReport:
    """Execute one scenario and write ``report.json`` plus per-diagnostic files under ``out``."""
    cfg = validate_config(config)
    if cfg["scenario"] == "all":
        raise ConfigError("use run_all for the full registry", "/scenario")
    out = cfg.get("out")
    sel = cfg["diagnostics"].get("select")
    tols = cfg["diagnostics"].get("tolerances", {})
    ctx = sc.Context(seed=cfg["seed"], grid_scale=cfg["grid_scale"], out=out, tolerances=tols,
                     solver=cfg["solver"])
    timings = {}
    t0 = time.perf_counter()
    tasks = sc.build(cfg["scenario"], cfg["params"], ctx)
    timings["build"] = time.perf_counter() - t0
    names = [t.name for t in tasks]
    for key in tols:
        if key not in names:
            raise ConfigError(f"no diagnostic named {key!r} in this scenario", f"/diagnostics/tolerances/{key}")
    if sel is not None:
        for i, key in enumerate(sel):
            if key not in names:
                raise ConfigError(f"no diagnostic named {key!r} in this scenario", f"/diagnostics/select/{i}")
        tasks = [t for t in tasks if t.name in sel]

    def timed(task):
        s = time.perf_counter()
        rep = task.fn()
        return rep, time.perf_counter() - s

    with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
        results = list(pool.map(timed, tasks))

    diags = []
    for task, (rep, dt) in zip(tasks, results):
        assert rep.verdict in VERDICTS
        timings[task.name] = dt
        files = []
        if out:
            for p in rep.write(os.path.join(out, "diagnostics")):
                rel = os.path.relpath(p, out)
                files.append(rel)
                ctx.manifest.append(rel)
        d = rep.to_dict()
        d.update({"expected": task.expected, "outcome": _outcome(rep.verdict, task.expected), "files": files})
        diags.append(jsonable(d))
    timings["total"] = time.perf_counter() - t0
    report = RunReport(cfg["scenario"], jsonable(cfg), diags, ctx.manifest + (["report.json"] if out else []),
                       timings)
    if out:
        with open(os.path.join(out, "report.json"), "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    return report


def run_all(config: dict) -> list:
    cfg = validate_config(config)
    reports = []
    for sid in sc.REGISTRY:
        sub = dict(cfg, scenario=sid)
        if cfg.get("out"):
            sub["out"] = os.path.join(cfg["out"], sid)
        reports.append(run(sub))
    if cfg.get("out"):
        suite = {"scenarios": {r.scenario: r.digest for r in reports},
                 "digest": digest([r.digest for r in reports]),
                 "outcome": "fail" if any(r.failed for r in reports) else "pass"}
        with open(os.path.join(cfg["out"], "suite.json"), "w") as fh:
            json.dump(suite, fh, indent=2, sort_keys=True)
    return reports


def print_summary(report: RunReport, stream=None) -> None:
    stream = stream or sys.stdout
    for d in report.diagnostics:
        exp = f"\texpected={d['expected']}" if d["expected"] else ""
        print(f"{report.scenario}\t{d['name']}\t{d['outcome']}\tverdict={d['verdict']}{exp}", file=stream)
    print(f"{report.scenario}\tRESULT\t{'fail' if report.failed else 'pass'}\tdigest={report.digest}", file=stream)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fibered", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    ls = sub.add_parser("list", help="list registered scenarios")
    ls.add_argument("--tag", default=None)
    r = sub.add_parser("run", help="run a scenario and write reports")
    r.add_argument("--config", help="JSON run configuration; command-line flags override it")
    r.add_argument("--scenario", help="scenario id or 'all'")
    r.add_argument("--out", help="output directory")
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--grid-scale", type=int, dest="grid_scale")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        for s in sc.list_scenarios(args.tag):
            print(f"{s.id}\t{s.description}\t[{s.anchor}]\ttags={','.join(s.tags)}")
        return 0
    cfg = {}
    try:
        if args.config:
            with open(args.config) as fh:
                cfg = json.load(fh)
            if not isinstance(cfg, dict):
                raise ConfigError("configuration must be a JSON object", "/")
        for key in ("scenario", "out", "seed", "threads", "grid_scale"):
            val = getattr(args, key)
            if val is not None:
                cfg[key] = val
        if cfg.get("scenario") == "all":
            reports = run_all(cfg)
        else:
            reports = [run(cfg)]
    except (ConfigError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for rep in reports:
        print_summary(rep)
    return 1 if any(r.failed for r in reports) else 0


if __name__ == "__main__":
    sys.exit(main())
