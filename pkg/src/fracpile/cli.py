"""Command-line interface.

Every subcommand writes a data file (CSV or JSON, carrying a schema version)
and a JSON run manifest next to it. Exit codes: 0 success, 1 runtime
failure, 2 invalid configuration, 3 a ``--check`` gate failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import scipy

from fracpile import __version__
from fracpile.fields import FieldSpec, phi_reference
from fracpile.kernel import cached_kernel, lattice_constant
from fracpile.montecarlo import ExperimentPlan, default_threads, fit_scaling, run_field_cov, run_odometer_mean, seed_stream
from fracpile.sandpile import SandpileState, init_deterministic, init_gaussian, stabilize
from fracpile.solver import spectral_odometer
from fracpile.spectrum import limit_constant, spectrum_for, verify_rate_lemmas
from fracpile.torus import LatticeSpec

log = logging.getLogger("fracpile")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2, 3
MAX_VOLUME = 1 << 22

SUBCOMMANDS = (
    "kernel",
    "spectrum",
    "stabilize",
    "odometer",
    "odometer-stats",
    "field-cov",
    "eigen-asymptotics",
)
METHODS = {
    "odometer": ("spectral", "topple", "both"),
    "eigen-asymptotics": ("extrapolation", "quadrature"),
    "field-cov": ("extrapolation", "quadrature"),
}
NEEDS_N = ("kernel", "stabilize", "odometer")
NEEDS_LADDER = ("odometer-stats", "eigen-asymptotics")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class RunConfig:
    subcommand: str
    dim: int | None = None
    n: int | None = None
    n_ladder: list[int] | None = None
    alpha: float | None = None
    seed: int = 0
    replicates: int | None = None
    eps: float = 1e-12
    max_steps: int = 1_000_000
    method: str | None = None
    out: str | None = None
    format: str = "csv"
    threads: int | None = None
    check: bool = False
    modes: list[list[int]] | None = None
    weights: str = "gaussian"


CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) and math.isfinite(v)


def validate(cfg: RunConfig) -> list[str]:
    """Every problem with ``cfg``; empty when it is runnable."""
    errs = []
    sub = cfg.subcommand
    if sub not in SUBCOMMANDS:
        return [f"unknown subcommand {sub!r}"]
    if cfg.dim is None:
        errs.append("--dim is required")
    elif not _is_int(cfg.dim) or cfg.dim < 1:
        errs.append(f"--dim must be an integer >= 1, got {cfg.dim!r}")
    if cfg.alpha is None:
        errs.append("--alpha is required")
    elif not _is_real(cfg.alpha) or cfg.alpha <= 0:
        errs.append(f"--alpha must be a finite number > 0, got {cfg.alpha!r}")
    if cfg.n is not None and (not _is_int(cfg.n) or cfg.n < 2):
        errs.append(f"--n must be an integer >= 2, got {cfg.n!r}")
    if cfg.n_ladder is not None:
        lad = cfg.n_ladder
        if not isinstance(lad, list) or not lad or not all(_is_int(v) and v >= 2 for v in lad):
            errs.append(f"--n-ladder must list integers >= 2, got {lad!r}")
        elif any(b <= a for a, b in zip(lad, lad[1:])):
            errs.append("--n-ladder must be strictly increasing")
    if sub in NEEDS_N and cfg.n is None:
        errs.append(f"{sub} needs --n")
    if sub in NEEDS_LADDER and cfg.n_ladder is None:
        errs.append(f"{sub} needs --n-ladder")
    if sub in ("spectrum", "field-cov") and cfg.n is None and cfg.n_ladder is None:
        errs.append(f"{sub} needs --n or --n-ladder")
    if sub in NEEDS_LADDER and isinstance(cfg.n_ladder, list):
        need = 4 if sub == "eigen-asymptotics" else 1
        if len(cfg.n_ladder) < need:
            errs.append(f"{sub} needs at least {need} ladder points")
    if sub == "spectrum" and isinstance(cfg.n_ladder, list) and len(cfg.n_ladder) < 4:
        errs.append("spectrum rate checks need at least 4 ladder points")
    sizes = [cfg.n] if _is_int(cfg.n) else []
    if isinstance(cfg.n_ladder, list):
        sizes += [v for v in cfg.n_ladder if _is_int(v)]
    if _is_int(cfg.dim) and cfg.dim >= 1 and any(v ** cfg.dim > MAX_VOLUME for v in sizes if v >= 2):
        errs.append(f"torus volume n^d above {MAX_VOLUME} sites")
    if not _is_int(cfg.seed) or cfg.seed < 0:
        errs.append(f"--seed must be a nonnegative integer, got {cfg.seed!r}")
    if cfg.replicates is not None and (not _is_int(cfg.replicates) or cfg.replicates < 1):
        errs.append(f"--replicates must be a positive integer, got {cfg.replicates!r}")
    elif sub in ("odometer-stats", "field-cov") and cfg.replicates is not None and cfg.replicates < 30:
        errs.append("--replicates must be at least 30 for variance estimates")
    if not _is_real(cfg.eps) or cfg.eps <= 0:
        errs.append(f"--eps must be a finite number > 0, got {cfg.eps!r}")
    if not _is_int(cfg.max_steps) or cfg.max_steps < 1:
        errs.append(f"--max-steps must be a positive integer, got {cfg.max_steps!r}")
    if cfg.method is not None:
        allowed = METHODS.get(sub)
        if allowed is None:
            errs.append(f"{sub} takes no --method")
        elif cfg.method not in allowed:
            errs.append(f"--method for {sub} must be one of {allowed}, got {cfg.method!r}")
    if cfg.format not in ("csv", "json"):
        errs.append(f"--format must be csv or json, got {cfg.format!r}")
    if cfg.threads is not None and (not _is_int(cfg.threads) or cfg.threads < 1):
        errs.append(f"--threads must be a positive integer, got {cfg.threads!r}")
    if not isinstance(cfg.check, bool):
        errs.append(f"check must be true or false, got {cfg.check!r}")
    if cfg.weights not in ("gaussian", "uniform"):
        errs.append(f"--weights must be gaussian or uniform, got {cfg.weights!r}")
    if cfg.modes is not None:
        if sub != "field-cov":
            errs.append(f"{sub} takes no --modes")
        elif not isinstance(cfg.modes, list) or not cfg.modes:
            errs.append("--modes must be a nonempty list")
        else:
            for m in cfg.modes:
                if not isinstance(m, list) or not all(_is_int(v) for v in m) or not any(m):
                    errs.append(f"mode {m!r} must be a nonzero integer vector")
                elif _is_int(cfg.dim) and len(m) != cfg.dim:
                    errs.append(f"mode {m!r} has length {len(m)}, expected {cfg.dim}")
    return errs


def _parse_ladder(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None


def _parse_modes(text: str) -> list[list[int]]:
    try:
        return [[int(v) for v in part.split(",")] for part in text.replace(" ", "").split(";") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"modes look like '1,0;1,1', got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracpile", description="Long-range divisible sandpiles on the torus.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        S = argparse.SUPPRESS
        p.add_argument("--config", help="JSON file with RunConfig keys; flags win")
        p.add_argument("--dim", type=int, default=S)
        p.add_argument("--n", type=int, default=S)
        p.add_argument("--n-ladder", dest="n_ladder", type=_parse_ladder, default=S, help="e.g. 64,128,256")
        p.add_argument("--alpha", type=float, default=S)
        p.add_argument("--seed", type=int, default=S)
        p.add_argument("--replicates", type=int, default=S)
        p.add_argument("--eps", type=float, default=S)
        p.add_argument("--max-steps", dest="max_steps", type=int, default=S)
        p.add_argument("--method", default=S)
        p.add_argument("--out", default=S, help="data file; the manifest goes to <out>.manifest.json")
        p.add_argument("--format", default=S, help="csv or json")
        p.add_argument("--threads", type=int, default=S)
        p.add_argument("--check", action="store_true", default=S)
        p.add_argument("--weights", default=S, help="gaussian or uniform initial weights")
        p.add_argument("--modes", type=_parse_modes, default=S, help="field-cov modes, e.g. '1,0;1,1;2,0'")

    for name in SUBCOMMANDS:
        common(sub.add_parser(name))
    camp = sub.add_parser("campaign", help="run a scripted list of invocations")
    camp.add_argument("script", nargs="?", help="campaign.json (default: the built-in campaign)")
    camp.add_argument("--out-dir", dest="out_dir", default="campaign_out")
    camp.add_argument("--seed", type=int, default=None, help="override the master seed")
    camp.add_argument("--quick", action="store_true", help="built-in reduced campaign")
    return parser


def load_config(argv) -> RunConfig:
    """Merge a JSON config file with explicit flags; raise ConfigError listing every problem."""
    args = vars(build_parser().parse_args(argv))
    args.pop("verbose", None)
    values: dict = {}
    errs = []
    path = args.pop("config", None)
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from None
        if not isinstance(raw, dict):
            raise ConfigError([f"config {path} must hold a JSON object"])
        unknown = sorted(set(raw) - CONFIG_KEYS)
        if unknown:
            errs.append(f"unknown config keys: {', '.join(unknown)}")
        if "subcommand" in raw and raw["subcommand"] != args["subcommand"]:
            errs.append(f"config is for {raw['subcommand']!r}, command line says {args['subcommand']!r}")
        values.update({k: v for k, v in raw.items() if k in CONFIG_KEYS})
    values.update(args)
    cfg = RunConfig(**values)
    errs += validate(cfg)
    if errs:
        raise ConfigError(errs)
    return cfg


# --- output ------------------------------------------------------------------


def atomic_write(path, data: str | bytes) -> None:
    """Write via a temporary file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return " ".join(_cell(x) for x in v)
    return str(v)


def _json_value(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    if isinstance(v, dict):
        return {k: _json_value(x) for k, x in v.items()}
    return v


def render_table(columns: list[str], rows: list[list], fmt: str) -> str:
    """CSV with a leading ``# schema_version`` line, or a JSON document."""
    if fmt == "json":
        doc = {"schema_version": SCHEMA_VERSION, "columns": columns, "rows": [_json_value(list(r)) for r in rows]}
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"
    lines = [f"# schema_version={SCHEMA_VERSION}", ",".join(columns)]
    lines += [",".join(_cell(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


@dataclass
class Outcome:
    columns: list[str]
    rows: list[list]
    gates: list[dict]
    summary: dict


def gate(name: str, passed: bool, measured, threshold: str) -> dict:
    return {"gate": name, "passed": bool(passed), "measured": _json_value(measured), "threshold": threshold}


def _site_rows(spec: LatticeSpec, *fields_) -> list[list]:
    coords = spec.coords().reshape(spec.d, -1).T
    order = np.lexsort(coords.T[::-1])
    flat = [f.ravel() for f in fields_]
    return [[coords[i].tolist()] + [float(f[i]) for f in flat] for i in order]


# --- subcommands -------------------------------------------------------------


def cmd_kernel(cfg: RunConfig) -> Outcome:
    spec = LatticeSpec(cfg.dim, cfg.n)
    k = cached_kernel(spec, cfg.alpha)
    w = k.weights
    total = math.fsum(w.ravel())
    flipped = w
    for ax in range(w.ndim):
        flipped = np.roll(np.flip(flipped, ax), 1, ax)
    asym = float(np.max(np.abs(w - flipped)))
    gates = [
        gate("kernel_sum", abs(total - 1) <= 1e-12, abs(total - 1), "|sum p - 1| <= 1e-12"),
        gate("kernel_symmetry", asym == 0.0, asym, "p(x) == p(-x) exactly"),
    ]
    if (cfg.dim, cfg.n, cfg.alpha) == (1, 2, 1.0):
        gap = max(abs(w[0] - 0.25), abs(w[1] - 0.75))
        gates.append(gate("kernel_oracle", gap <= 1e-10, gap, "(1/4, 3/4) within 1e-10"))
    lc = lattice_constant(cfg.dim, cfg.alpha)
    rows = [[spec.flat_index(c), list(c), float(w.flat[spec.flat_index(c)])] for c in sorted(spec_points(spec))]
    summary = {
        "c_alpha": lc.c_alpha,
        "ewald_radius": k.truncation_radius,
        "fourier_radius": k.fourier_radius,
        "relative_tail_bound": k.tail_bound,
        "sum_minus_one": total - 1,
    }
    return Outcome(["index", "coords", "weight"], rows, gates, summary)


def spec_points(spec: LatticeSpec):
    return [spec.point(i) for i in range(spec.volume)]


def _rate_outcome(cfg: RunConfig, ladder, summary: dict) -> Outcome:
    rep = verify_rate_lemmas(cfg.dim, ladder, cfg.alpha, max_w_norm=4.0 if cfg.alpha < 2 else 2.0)
    rows, gates = [], []
    for e in rep.entries:
        lemma = e["lemma"]
        if lemma == "residual_decay":
            for n, r in zip(rep.ladder, e["ratios"]):
                rows.append([lemma, e["w"], n, "ratio", r])
            rows.append([lemma, e["w"], rep.ladder[-1], "exponent", e["exponent"]])
            gates.append(gate(f"ratio_w{_cell(e['w'])}", 0.8 <= e["top_ratio"] <= 1.25, e["top_ratio"], "[0.8, 1.25]"))
            gates.append(
                gate(
                    f"exponent_w{_cell(e['w'])}",
                    abs(e["exponent"] - e["expected"]) <= 0.3,
                    e["exponent"],
                    f"{e['expected']} +- 0.3",
                )
            )
        elif lemma in ("log_correction", "membrane_limit"):
            for n, v in zip(rep.ladder, e["values"]):
                rows.append([lemma, e["w"], n, "scaled", v])
            change = e["relative_changes"][-1]
            limit = 0.10 if lemma == "log_correction" else 0.05
            gates.append(gate(f"{lemma}_w{_cell(e['w'])}", change < limit, change, f"last relative change < {limit}"))
        elif lemma == "eigenvalue_band":
            for n, b in zip(rep.ladder, e["per_n_band"]):
                rows.append([lemma, [], n, "band", b])
        else:
            rows.append([lemma, [], rep.ladder[-1], "band", e["band"]])
    summary.update({"c_tilde": rep.c_tilde, "report": rep.to_dict()})
    return Outcome(["lemma", "w", "n", "quantity", "value"], rows, gates, summary)


def cmd_spectrum(cfg: RunConfig) -> Outcome:
    if cfg.n_ladder:
        return _rate_outcome(cfg, cfg.n_ladder, {})
    spec = LatticeSpec(cfg.dim, cfg.n)
    sp = spectrum_for(spec, cfg.alpha)
    rows = [[list(w), float(sp.norms.flat[spec.flat_index(w)]), sp.value(w)] for w in sorted(spec_points(spec))]
    nz = sp.lam[sp.nonzero()]
    gates = [
        gate("zero_mode", abs(sp.lam.flat[0]) <= 1e-12, abs(sp.lam.flat[0]), "|lambda_0| <= 1e-12"),
        gate("negative_spectrum", bool(np.all(nz < 0)), float(nz.max()) if nz.size else 0.0, "lambda_w < 0 for w != 0"),
        gate("imag_residue", sp.imag_residue <= 1e-12, sp.imag_residue, "<= 1e-12"),
    ]
    return Outcome(["w", "norm", "lambda"], rows, gates, {})


def cmd_eigen_asymptotics(cfg: RunConfig) -> Outcome:
    summary = {}
    gates_extra = []
    if cfg.alpha < 2:
        ext = limit_constant(cfg.dim, cfg.alpha, method="extrapolation")
        quad = limit_constant(cfg.dim, cfg.alpha, method="quadrature")
        primary = quad if cfg.method == "quadrature" else ext
        gap = abs(ext.c_tilde - quad.c_tilde) / quad.c_tilde
        summary.update(
            {"c_tilde_extrapolation": ext.c_tilde, "c_tilde_quadrature": quad.c_tilde, "relative_gap": gap, "method": primary.method}
        )
        gates_extra.append(gate("c_tilde_agreement", gap <= 1e-6, gap, "relative gap <= 1e-6"))
    out = _rate_outcome(cfg, cfg.n_ladder, summary)
    out.gates.extend(gates_extra)
    return out


def _init_state(cfg: RunConfig, spec: LatticeSpec) -> SandpileState:
    from fracpile.montecarlo import draw_noise
    from fracpile.sandpile import centered_configuration

    if cfg.weights == "gaussian":
        return init_gaussian(spec, cfg.seed)
    return init_deterministic(spec, centered_configuration(draw_noise(spec, seed_stream(cfg.seed, 0), cfg.weights)))


def cmd_stabilize(cfg: RunConfig) -> Outcome:
    spec = LatticeSpec(cfg.dim, cfg.n)
    state = _init_state(cfg, spec)
    res = stabilize(state, cached_kernel(spec, cfg.alpha), eps=cfg.eps, max_steps=cfg.max_steps)
    dev = float(np.max(np.abs(res.state.s - 1)))
    gates = [
        gate("converged", res.converged, res.max_residual_excess, f"max excess <= {cfg.eps}"),
        gate("final_stable", dev <= 1e-9, dev, "|s - 1|_inf <= 1e-9"),
    ]
    summary = {"iterations": res.iterations, "decay_ratio": res.decay_ratio, "max_abs_s_minus_1": dev}
    rows = _site_rows(spec, res.odometer_normalized, res.state.s)
    return Outcome(["coords", "u", "s_final"], rows, gates, summary)


def cmd_odometer(cfg: RunConfig) -> Outcome:
    from fracpile.kernel import apply_generator

    method = cfg.method or "spectral"
    spec = LatticeSpec(cfg.dim, cfg.n)
    state = _init_state(cfg, spec)
    kernel = cached_kernel(spec, cfg.alpha)
    gates, summary = [], {"method": method}
    cols, fields_ = ["coords"], []
    u_spec = u_top = None
    if method in ("spectral", "both"):
        u_spec = spectral_odometer(spectrum_for(spec, cfg.alpha), state.s).u
        resid = float(np.max(np.abs(state.s + apply_generator(kernel, u_spec) - 1)))
        gates.append(gate("spectral_residual", resid <= 1e-9, resid, "|s + L u - 1|_inf <= 1e-9"))
        cols.append("u_spectral")
        fields_.append(u_spec)
    if method in ("topple", "both"):
        res = stabilize(state, kernel, eps=cfg.eps, max_steps=cfg.max_steps)
        u_top = res.odometer_normalized
        dev = float(np.max(np.abs(res.state.s - 1)))
        gates.append(gate("topple_converged", res.converged, res.max_residual_excess, f"max excess <= {cfg.eps}"))
        gates.append(gate("final_stable", dev <= 1e-9, dev, "|s - 1|_inf <= 1e-9"))
        summary["iterations"] = res.iterations
        cols.append("u_topple")
        fields_.append(u_top)
    if method == "both":
        gap = float(np.max(np.abs(u_spec - u_top)))
        summary["sup_discrepancy"] = gap
        gates.append(gate("route_agreement", gap <= 1e-6, gap, "sup |u_spectral - u_topple| <= 1e-6"))
    summary["mean_u"] = math.fsum(fields_[0].ravel()) / spec.volume
    return Outcome(cols, _site_rows(spec, *fields_), gates, summary)


def cmd_odometer_stats(cfg: RunConfig) -> Outcome:
    plan = ExperimentPlan(
        "odometer-mean", cfg.dim, float(cfg.alpha), list(cfg.n_ladder), cfg.replicates or 200, cfg.seed, cfg.weights
    )
    rows = run_odometer_mean(plan, threads=cfg.threads or default_threads())
    table = [[r.n, r.mean, r.stderr, r.replicates, r.audited, r.max_audit_discrepancy] for r in rows]
    gamma = min(cfg.alpha, 2.0)
    half = cfg.dim / 2
    summary: dict = {"gamma": gamma, "phi_reference": [phi_reference(cfg.dim, gamma, r.n) for r in rows], "fits": {}}
    gates = []
    audits = [r.max_audit_discrepancy for r in rows if r.audited]
    if audits:
        gates.append(gate("audit_agreement", max(audits) <= 1e-6, max(audits), "toppling audit gap <= 1e-6"))
    if len(rows) >= 3:
        ns, ms, ses = [r.n for r in rows], [r.mean for r in rows], [r.stderr for r in rows]
        for model in ("power", "linear-log", "sqrt-log"):
            try:
                f = fit_scaling(ns, ms, ses, model)
            except ValueError as exc:
                summary["fits"][model] = {"error": str(exc)}
                continue
            summary["fits"][model] = {"params": f.params, "stderr": f.stderr, "r2": f.r2, "lack_of_fit_p": f.lack_of_fit_p}
        if gamma == half:
            r2 = summary["fits"]["linear-log"]["r2"]
            gates.append(gate("linear_in_log_r2", r2 >= 0.95, r2, "R^2 >= 0.95"))
        elif gamma > half and "params" in summary["fits"]["power"]:
            slope = summary["fits"]["power"]["params"][1]
            gates.append(gate("power_slope", abs(slope - (gamma - half)) <= 0.15, slope, f"{gamma - half} +- 0.15"))
        else:
            summary["note"] = "sqrt-log growth is too flat to gate at these sizes; reported only"
    return Outcome(["n", "mean", "stderr", "replicates", "audited", "max_audit_discrepancy"], table, gates, summary)


def default_modes(d: int) -> list[list[int]]:
    e1 = [1] + [0] * (d - 1)
    out = [e1]
    if d >= 2:
        out.append([1, 1] + [0] * (d - 2))
    out.append([2] + [0] * (d - 1))
    return out


def cmd_field_cov(cfg: RunConfig) -> Outcome:
    ladder = list(cfg.n_ladder or [cfg.n])
    modes = cfg.modes or default_modes(cfg.dim)
    plan = ExperimentPlan(
        "field-cov", cfg.dim, float(cfg.alpha), ladder, cfg.replicates or 10_000, cfg.seed, cfg.weights, modes
    )
    fs = FieldSpec.build(cfg.dim, cfg.alpha, method=cfg.method or "extrapolation")
    rows = run_field_cov(plan, fs=fs, threads=cfg.threads or default_threads())
    table = [[list(r.nu), r.n, r.replicates, r.empirical_var, r.limit_var, r.ratio] for r in rows]
    gates = []
    for n in ladder:
        ratios = [r.ratio for r in rows if r.n == n]
        spread = (max(ratios) - min(ratios)) / (sum(ratios) / len(ratios))
        gates.append(gate(f"mode_spread_n{n}", spread <= 0.10, spread, "relative spread <= 0.10"))
        worst = max(ratios, key=lambda q: abs(math.log(q)))
        gates.append(gate(f"absolute_ratio_n{n}", 0.5 <= worst <= 2.0, worst, "[0.5, 2]"))
    summary = {"c_tilde": fs.c_tilde, "gamma": fs.gamma, "var_stderr": [r.var_stderr for r in rows]}
    return Outcome(["nu_coords", "n", "replicates", "empirical_var", "limit_var", "ratio"], table, gates, summary)


COMMANDS = {
    "kernel": cmd_kernel,
    "spectrum": cmd_spectrum,
    "stabilize": cmd_stabilize,
    "odometer": cmd_odometer,
    "odometer-stats": cmd_odometer_stats,
    "field-cov": cmd_field_cov,
    "eigen-asymptotics": cmd_eigen_asymptotics,
}


def manifest_path(out: str | Path) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def dispatch(cfg: RunConfig) -> int:
    """Run ``cfg``, write data and manifest, and return the exit code."""
    start = time.perf_counter()
    try:
        result = COMMANDS[cfg.subcommand](cfg)
    except Exception as exc:
        log.error("%s failed: %s", cfg.subcommand, exc)
        return EXIT_RUNTIME
    data = render_table(result.columns, result.rows, cfg.format)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "subcommand": cfg.subcommand,
        "config": asdict(cfg),
        "versions": {
            "fracpile": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "seeds": {"master_seed": cfg.seed, "derivation": "Philox(SeedSequence(master_seed, spawn_key=(n, replicate)))"},
        "wall_time_s": time.perf_counter() - start,
        "gates": result.gates,
        "summary": _json_value(result.summary),
    }
    text = json.dumps(manifest, sort_keys=True, indent=1, default=str) + "\n"
    try:
        if cfg.out:
            atomic_write(cfg.out, data)
            atomic_write(manifest_path(cfg.out), text)
        else:
            sys.stdout.write(data)
            sys.stderr.write(text)
    except OSError as exc:
        log.error("cannot write output: %s", exc)
        return EXIT_RUNTIME
    failed = [g["gate"] for g in result.gates if not g["passed"]]
    for g in result.gates:
        log.info("gate %s: %s (measured %s, need %s)", g["gate"], "pass" if g["passed"] else "FAIL", g["measured"], g["threshold"])
    if cfg.check and failed:
        log.error("gates failed: %s", ", ".join(failed))
        return EXIT_CHECK
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(ns.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    if ns.subcommand == "campaign":
        from fracpile.campaign import campaign_main

        return campaign_main(ns)
    try:
        cfg = load_config(argv)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
