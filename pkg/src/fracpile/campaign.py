"""Scripted campaigns: an ordered list of CLI invocations with expected outcomes.

A ``campaign.json`` looks like::

    {"master_seed": 7,
     "steps": [{"name": "kernel-oracle",
                "argv": ["kernel", "--dim", "1", "--n", "2", "--alpha", "1", "--check"],
                "expect_exit": 0}]}

Each step's data goes to ``<out_dir>/<name>.<format>``. ``--seed`` is appended
from ``master_seed`` unless the step sets it. Results land in
``<out_dir>/summary.csv``, one line per gate.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from fracpile import cli

log = logging.getLogger(__name__)

STEP_KEYS = {"name", "argv", "expect_exit"}


class CampaignError(RuntimeError):
    pass


@dataclass
class Step:
    name: str
    argv: list[str]
    expect_exit: int = 0


@dataclass
class Campaign:
    steps: list[Step]
    master_seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict) -> Campaign:
        unknown = set(raw) - {"steps", "master_seed"}
        if unknown:
            raise ValueError(f"unknown campaign keys: {sorted(unknown)}")
        steps = []
        for s in raw.get("steps", []):
            bad = set(s) - STEP_KEYS
            if bad:
                raise ValueError(f"unknown step keys: {sorted(bad)}")
            steps.append(Step(s["name"], [str(a) for a in s["argv"]], int(s.get("expect_exit", 0))))
        names = [s.name for s in steps]
        if len(set(names)) != len(names):
            raise ValueError("step names must be unique")
        return cls(steps, int(raw.get("master_seed", 0)))

    @classmethod
    def load(cls, path) -> Campaign:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "steps": [{"name": s.name, "argv": s.argv, "expect_exit": s.expect_exit} for s in self.steps],
        }


@dataclass
class CampaignSummary:
    rows: list[list] = field(default_factory=list)
    mismatched: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatched


def _with_option(argv: list[str], flag: str, value: str) -> list[str]:
    return argv if flag in argv else argv + [flag, value]


def run_campaign(campaign: Campaign, out_dir) -> CampaignSummary:
    """Run every step in order; a configuration or runtime failure aborts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = CampaignSummary()
    for step in campaign.steps:
        argv = _with_option(list(step.argv), "--seed", str(campaign.master_seed))
        fmt = argv[argv.index("--format") + 1] if "--format" in argv else "csv"
        out = out_dir / f"{step.name}.{fmt}"
        argv = _with_option(argv, "--out", str(out))
        log.info("campaign step %s: fracpile %s", step.name, " ".join(argv))
        code = cli.main(argv)
        if code in (cli.EXIT_RUNTIME, cli.EXIT_CONFIG) and code != step.expect_exit:
            raise CampaignError(f"step {step.name!r} failed with exit code {code}: fracpile {' '.join(argv)}")
        if code != step.expect_exit:
            summary.mismatched.append(step.name)
        gates = []
        mpath = cli.manifest_path(out)
        if mpath.exists():
            gates = json.loads(mpath.read_text())["gates"]
        if not gates:
            summary.rows.append([step.name, argv[0], "", "", "", step.expect_exit, code])
        for g in gates:
            measured = json.dumps(g["measured"])
            summary.rows.append(
                [step.name, argv[0], g["gate"], "pass" if g["passed"] else "fail", measured, step.expect_exit, code]
            )
    cols = ["step", "subcommand", "gate", "result", "measured", "expected_exit", "exit_code"]
    cli.atomic_write(out_dir / "summary.csv", cli.render_table(cols, summary.rows, "csv"))
    return summary


def _step(name, sub, *args, check=True):
    argv = [sub, *[str(a) for a in args]]
    if check:
        argv.append("--check")
    return {"name": name, "argv": argv, "expect_exit": 0}


def default_campaign(master_seed: int = 7) -> Campaign:
    """The full reproduction campaign: growth laws, eigenvalue rates, covariance shapes and surfaces."""
    steps = [
        _step("kernel-oracle", "kernel", "--dim", 1, "--n", 2, "--alpha", 1),
        _step("kernel-d2", "kernel", "--dim", 2, "--n", 16, "--alpha", 1.5),
    ]
    for a in (0.5, 1.0, 1.5):
        steps.append(
            _step(f"eigen-rates-a{a}", "eigen-asymptotics", "--dim", 1, "--alpha", a, "--n-ladder", "64,128,256,512,1024")
        )
    steps.append(_step("eigen-log-a2", "spectrum", "--dim", 1, "--alpha", 2, "--n-ladder", "64,128,256,512"))
    steps.append(_step("eigen-membrane-a3", "spectrum", "--dim", 1, "--alpha", 3, "--n-ladder", "64,128,256,512"))
    for d in (1, 2):
        for a in (0.5, 1.0, 1.5, 3.0):
            steps.append(_step(f"dual-route-d{d}-a{a}", "odometer", "--dim", d, "--n", 16, "--alpha", a, "--method", "both"))
    steps.append(
        _step("growth-d2-a1", "odometer-stats", "--dim", 2, "--alpha", 1, "--n-ladder", "16,32,64,128", "--replicates", 200)
    )
    steps.append(
        _step(
            "growth-d1-a1.5", "odometer-stats", "--dim", 1, "--alpha", 1.5, "--n-ladder", "64,128,256,512,1024", "--replicates", 200
        )
    )
    steps.append(
        _step("growth-d2-a0.5", "odometer-stats", "--dim", 2, "--alpha", 0.5, "--n-ladder", "16,32,64,128", "--replicates", 200)
    )
    steps.append(_step("field-cov-d2-a1", "field-cov", "--dim", 2, "--alpha", 1, "--n", 64, "--replicates", 10_000))
    for a in (0.5, 1.0, 1.5, 2.0):
        steps.append(
            _step(f"surface-d2-n60-a{a}", "odometer", "--dim", 2, "--n", 60, "--alpha", a, "--method", "spectral", check=False)
        )
    return Campaign.from_dict({"master_seed": master_seed, "steps": steps})


def quick_campaign(master_seed: int = 7) -> Campaign:
    """A reduced campaign touching every subcommand in seconds."""
    steps = [
        _step("kernel-oracle", "kernel", "--dim", 1, "--n", 2, "--alpha", 1),
        _step("spectrum-n8", "spectrum", "--dim", 2, "--n", 8, "--alpha", 1),
        _step("eigen-rates", "eigen-asymptotics", "--dim", 1, "--alpha", 1, "--n-ladder", "64,128,256,512"),
        _step("stabilize-n8", "stabilize", "--dim", 1, "--n", 8, "--alpha", 1.5),
        _step("dual-route", "odometer", "--dim", 2, "--n", 8, "--alpha", 1, "--method", "both"),
        _step("growth", "odometer-stats", "--dim", 1, "--alpha", 1.5, "--n-ladder", "32,64,128,256", "--replicates", 50),
        _step("field-cov", "field-cov", "--dim", 2, "--alpha", 1, "--n", 32, "--replicates", 4000),
        _step("surface", "odometer", "--dim", 2, "--n", 12, "--alpha", 0.5, check=False),
    ]
    return Campaign.from_dict({"master_seed": master_seed, "steps": steps})


def campaign_main(ns) -> int:
    if ns.script:
        try:
            camp = Campaign.load(ns.script)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: cannot load campaign {ns.script}: {exc}")
            return cli.EXIT_CONFIG
    else:
        camp = quick_campaign() if ns.quick else default_campaign()
    if ns.seed is not None:
        if ns.seed < 0:
            print("error: --seed must be nonnegative")
            return cli.EXIT_CONFIG
        camp.master_seed = ns.seed
    try:
        summary = run_campaign(camp, ns.out_dir)
    except CampaignError as exc:
        log.error("%s", exc)
        return cli.EXIT_RUNTIME
    if not summary.ok:
        log.error("steps with unexpected exit codes: %s", ", ".join(summary.mismatched))
        return cli.EXIT_CHECK
    return cli.EXIT_OK
