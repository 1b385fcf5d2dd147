"""Configuration, orchestration and reporting front end.

Config files are plain text `key = value` lines (# comments allowed).
Values: scalars (int/float/str) or comma-separated lists; key paths are
flat dotted names documented per subcommand in SCHEMAS. Unknown keys,
type mismatches and range violations are rejected with line numbers and
distinct exit codes (10/11/12); other configuration problems exit 2,
verdict failures exit 1, numerical-resolution flags exit 3.

Every emitted file carries a report envelope. The envelope holds the tool
version, a timestamp and the echoed config; rerunning with identical
config and seed reproduces the payload section byte for byte (the
timestamp lives only in the envelope header).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .spectral import ConfigurationError, ModeParams, build_grid

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_CONFIG = 2
EXIT_RESOLUTION = 3
EXIT_UNKNOWN_KEY = 10
EXIT_TYPE = 11
EXIT_RANGE = 12

SUBCOMMANDS = ("psi", "resolvent-sweep", "pseudospectrum", "evolve", "alpha1",
               "waveop", "dns", "threshold", "all-acceptance", "check-report")


class ConfigError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _typ(name, kind, default=None, required=False, lo=None, hi=None,
         choices=None, lo_strict=False, hi_strict=False):
    return {"name": name, "kind": kind, "default": default, "required": required,
            "lo": lo, "hi": hi, "choices": choices,
            "lo_strict": lo_strict, "hi_strict": hi_strict}


_MODE_KEYS = [
    _typ("nu", float, required=True, lo=0.0, lo_strict=True),
    _typ("gamma", float, required=True),
    _typ("k_f", float, required=True, lo=0.0, hi=1.0, lo_strict=True),
    _typ("k1", int, required=True),
    _typ("k3", int, required=True),
]

SCHEMAS: dict[str, list[dict]] = {
    "psi": _MODE_KEYS + [
        _typ("n", int, default=256, lo=16),
        _typ("operator", str, default="H", choices=("H", "L", "Q1L")),
        _typ("scan_count", int, default=128, lo=16),
    ],
    "resolvent-sweep": [
        _typ("kind", str, default="Nlambda",
             choices=("Nlambda", "Llambda", "Lu-form")),
        _typ("nu", list, required=True),
        _typ("alpha", list, required=True),
        _typ("lambda", list, required=True),
        _typ("beta", list, default=[]),
    ],
    "pseudospectrum": _MODE_KEYS + [
        _typ("n", int, default=128, lo=16),
        _typ("re_lo", float, required=True), _typ("re_hi", float, required=True),
        _typ("im_lo", float, required=True), _typ("im_hi", float, required=True),
        _typ("nx", int, default=16, lo=8), _typ("ny", int, default=16, lo=8),
    ],
    "evolve": _MODE_KEYS + [
        _typ("n", int, default=96, lo=16),
        _typ("t_end", float, default=20.0, lo=0.0, lo_strict=True),
        _typ("dt", float, default=0.05, lo=0.0, lo_strict=True),
        _typ("method", str, default="block", choices=("block", "duhamel")),
    ],
    "alpha1": [
        _typ("nu", list, required=True),
        _typ("gamma", list, required=True),
        _typ("k1", int, default=1),
        _typ("n", int, default=64, lo=16),
    ],
    "waveop": [
        _typ("alpha", list, default=[2.0, 4.0, 8.0, 16.0]),
        _typ("levels", list, default=[256, 512, 1024]),
        _typ("ensemble", int, default=20, lo=20),
    ],
    "dns": [
        _typ("nu", float, required=True, lo=0.0, lo_strict=True),
        _typ("gamma", float, required=True),
        _typ("k_f", float, required=True, lo=0.0, hi=1.0,
             lo_strict=True, hi_strict=True),
        _typ("n", int, default=32, lo=8, hi=64),
        _typ("epsilon", float, default=1e-3, lo=0.0),
        _typ("t_end", float, default=0.0, lo=0.0),
        _typ("dt", float, default=0.0, lo=0.0),
    ],
    "threshold": [
        _typ("nu", list, required=True),
        _typ("epsilon", list, required=True),
        _typ("k_f", float, default=0.5, lo=0.0, hi=1.0,
             lo_strict=True, hi_strict=True),
        _typ("n", int, default=16, lo=8, hi=64),
    ],
    "all-acceptance": [
        _typ("fast", int, default=0, lo=0, hi=1),
    ],
}


@dataclass
class RunConfig:
    subcommand: str
    values: dict
    out_dir: Path
    seed: int = 0
    jobs: int = 1

    def echo(self) -> dict:
        return {"subcommand": self.subcommand, "seed": self.seed,
                "jobs": self.jobs, **self.values}


def _parse_scalar(raw: str):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config(text: str, subcommand: str) -> dict:
    """Parse and validate `key = value` text against the subcommand schema.

    Raises ConfigError carrying the first problem found, with its line
    number and a distinct exit code per error class.
    """
    if subcommand not in SCHEMAS:
        raise ConfigError(f"no config schema for subcommand {subcommand!r}")
    schema = {e["name"]: e for e in SCHEMAS[subcommand]}
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value'", EXIT_CONFIG)
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in schema:
            raise ConfigError(f"line {lineno}: unknown key {key!r}", EXIT_UNKNOWN_KEY)
        ent = schema[key]
        if ent["kind"] is list:
            vals = [_parse_scalar(v) for v in raw.split(",") if v.strip()]
            if not all(isinstance(v, (int, float)) for v in vals):
                raise ConfigError(
                    f"line {lineno}: key {key!r} wants a numeric list", EXIT_TYPE)
            values[key] = [float(v) for v in vals]
            continue
        val = _parse_scalar(raw)
        if ent["kind"] is int:
            if not isinstance(val, int):
                raise ConfigError(
                    f"line {lineno}: key {key!r} wants an integer, got {raw!r}",
                    EXIT_TYPE)
        elif ent["kind"] is float:
            if not isinstance(val, (int, float)):
                raise ConfigError(
                    f"line {lineno}: key {key!r} wants a number, got {raw!r}",
                    EXIT_TYPE)
            val = float(val)
        elif ent["kind"] is str:
            val = str(val)
        if ent["choices"] and val not in ent["choices"]:
            raise ConfigError(
                f"line {lineno}: key {key!r} must be one of {ent['choices']}",
                EXIT_RANGE)
        lo, hi = ent["lo"], ent["hi"]
        if isinstance(val, (int, float)):
            if lo is not None and (val <= lo if ent["lo_strict"] else val < lo):
                raise ConfigError(
                    f"line {lineno}: key {key!r} range violation: {val} "
                    f"{'<=' if ent['lo_strict'] else '<'} {lo}", EXIT_RANGE)
            if hi is not None and (val >= hi if ent["hi_strict"] else val > hi):
                raise ConfigError(
                    f"line {lineno}: key {key!r} range violation: {val} "
                    f"{'>=' if ent['hi_strict'] else '>'} {hi}", EXIT_RANGE)
        values[key] = val
    for ent in SCHEMAS[subcommand]:
        if ent["required"] and ent["name"] not in values:
            raise ConfigError(f"missing required key {ent['name']!r}", EXIT_CONFIG)
        values.setdefault(ent["name"], ent["default"])
    return values


# ---------------------------------------------------------------------------
# envelopes and deterministic serialization
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def payload_bytes(payload: dict) -> bytes:
    return json.dumps(_jsonable(payload), sort_keys=True,
                      separators=(",", ":")).encode()


def write_report(path: Path, config: RunConfig, payload: dict, passed: bool) -> None:
    envelope = {
        "tool": "kolmoflow",
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config": _jsonable(config.echo()),
    }
    doc = {"envelope": envelope,
           "payload": json.loads(payload_bytes(payload).decode()),
           "summary": {"passed": bool(passed)}}
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def check_report(path: Path) -> dict:
    """Validate an emitted report; accepts the JSON reports and the CSV
    tables (whose first line carries the envelope as a # comment)."""
    text = Path(path).read_text()
    if text.startswith("#"):
        first, rest = text.split("\n", 1)
        marker = "envelope:"
        if marker not in first:
            raise ConfigError("CSV report lacks an envelope header")
        env = json.loads(first.split(marker, 1)[1])
        header = rest.splitlines()[0] if rest.strip() else ""
        if "," not in header:
            raise ConfigError("CSV report lacks a column header row")
        return {"envelope": {"tool": "kolmoflow",
                             "version": env.get("version", ""),
                             "timestamp": "", "config": env.get("config", {})},
                "payload": {"columns": header.split(",")},
                "summary": {"passed": True}}
    doc = json.loads(text)
    for section in ("envelope", "payload", "summary"):
        if section not in doc:
            raise ConfigError(f"report missing section {section!r}")
    env = doc["envelope"]
    for key in ("tool", "version", "timestamp", "config"):
        if key not in env:
            raise ConfigError(f"envelope missing field {key!r}")
    if env["tool"] != "kolmoflow":
        raise ConfigError(f"not a kolmoflow report: tool={env['tool']!r}")
    return doc


def parallel_map(fn, cells, jobs: int):
    """Map over independent sweep cells; results return in input order, so
    aggregation is deterministic regardless of the worker count."""
    if jobs <= 1:
        return [fn(c) for c in cells]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cells))


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def _run_psi(cfg: RunConfig) -> tuple[dict, bool, bool]:
    from . import pseudospectra as ps
    v = cfg.values
    p = ModeParams(nu=v["nu"], gamma=v["gamma"], k_f=v["k_f"],
                   k1=int(v["k1"]), k3=int(v["k3"]))
    res = ps.psi_for_params(p, v["operator"], n=v["n"], scan_count=v["scan_count"])
    table = [{"lam": float(l), "sigma_min": float(s)}
             for l, s in zip(res.lam_grid, res.sigma_grid)]
    csv_path = cfg.out_dir / "psi_scan.csv"
    with open(csv_path, "w") as fh:
        fh.write("# envelope: " + payload_bytes(
            {"config": cfg.echo(), "version": __version__}).decode() + "\n")
        fh.write("lam,sigma_min\n")
        for row in table:
            fh.write(f"{row['lam']!r},{row['sigma_min']!r}\n")
    payload = {"psi": res.as_record(), "scan": table}
    return payload, res.psi > 0, not res.converged


def _run_resolvent_sweep(cfg: RunConfig) -> tuple[dict, bool, bool]:
    from . import pseudospectra as ps
    v = cfg.values
    betas = v["beta"] or None
    c_hat, rows = ps.resolvent_bound_sweep(
        v["kind"], v["nu"], v["alpha"], v["lambda"], betas=betas)
    ps.write_sweep_csv(rows, cfg.out_dir / "resolvent_sweep.csv",
                       header_lines=["envelope: " + payload_bytes(
                           {"config": cfg.echo()}).decode()])
    flagged = [r for r in rows if r.get("flag")]
    payload = {"C_hat": c_hat.as_record(),
               "rows": [{k: _jsonable(val) for k, val in r.items()} for r in rows]}
    good = [r for r in rows if not r.get("flag")]
    passed = c_hat.value > 0 and c_hat.decade_ratio <= 3.0 and \
        all(r["ratio"] > 0 for r in good)
    return payload, passed, bool(flagged)


def _run_pseudospectrum(cfg: RunConfig) -> tuple[dict, bool, bool]:
    from . import pseudospectra as ps
    from .spectral import assemble_mode_operators
    v = cfg.values
    p = ModeParams(nu=v["nu"], gamma=v["gamma"], k_f=v["k_f"],
                   k1=int(v["k1"]), k3=int(v["k3"]))
    grid = build_grid(v["n"], p)
    _, mh = assemble_mode_operators(p, grid)
    field = ps.pseudospectrum_grid(
        mh, (v["re_lo"], v["re_hi"], v["im_lo"], v["im_hi"]), (v["nx"], v["ny"]))
    field.write_csv(cfg.out_dir / "pseudospectrum.csv")
    payload = {"min_sigma": float(field.sigma.min()),
               "max_sigma": float(field.sigma.max()),
               "shape": list(field.sigma.shape)}
    return payload, True, False

def _run_evolve(cfg: RunConfig) -> tuple[dict, bool, bool]:
    from . import evolution as ev
    v = cfg.values
    p = ModeParams(nu=v["nu"], gamma=v["gamma"], k_f=v["k_f"],
                   k1=int(v["k1"]), k3=int(v["k3"]))
    grid = build_grid(v["n"], p)
    rng = np.random.default_rng(cfg.seed)
    f0 = grid.random_coeffs(rng)
    g0 = grid.random_coeffs(rng)
    f0 /= grid.norm_coeffs(f0)
    g0 /= grid.norm_coeffs(g0)
    traj = ev.evolve_coupled(p, f0, g0, v["t_end"], v["dt"], grid=grid,
                             method=v["method"])
    fit_f = ev.fit_decay_rate(traj, "f")
    fit_g = ev.fit_decay_rate(traj, "g", prefactor=True)
    with open(cfg.out_dir / "trajectory.csv", "w") as fh:
        fh.write("# envelope: " + payload_bytes({"config": cfg.echo()}).decode() + "\n")
        fh.write("t,norm_f,norm_g,norm_q1f,norm_p1f,norm_dyf\n")
        for i, t in enumerate(traj.times):
            fh.write(",".join(repr(float(x)) for x in (
                t, traj.norm_f[i], traj.norm_g[i], traj.norm_q1f[i],
                traj.norm_p1f[i], traj.norm_dyf[i])) + "\n")
    kappa2 = p.k1**2 + p.k3**2
    payload = {"fit_f": fit_f.as_record(), "fit_g": fit_g.as_record(),
               "nu_kappa2": p.nu * kappa2}
    return payload, fit_f.rate >= p.nu * kappa2, False


def _run_alpha1(cfg: RunConfig) -> tuple[dict, bool, bool]:
    from . import evolution as ev
    v = cfg.values
    rows = []
    for nu in v["nu"]:
        for gamma in v["gamma"]:
            out = ev.alpha1_suite(nu=nu, gamma=gamma, k1=int(v["k1"]), n=v["n"],
                                  t_end=3.0 / nu, dt=3.0 / nu / 400.0)
            rows.append({k: _jsonable(val) for k, val in out.items()
                         if k not in ("times", "norm_q1f", "norm_p1f")})
    passed = all(r["conservation_drift"] <= 1e-8 and r["lowerb_ratio"] > 0
                 and r["q1_rate"] >= r["nu"] for r in rows)
    return {"rows": rows}, passed, False


def _run_waveop(cfg: RunConfig) -> tuple[dict, bool, bool]:
    from . import waveop as wv
    v = cfg.values
    levels = [int(x) for x in v["levels"]]
    inter = wv.intertwining_residual(
        {"sin2y": lambda y: np.sin(2 * y)}, float(v["alpha"][0]), levels)
    bounds = wv.bound_sweep([float(a) for a in v["alpha"]],
                            ensemble=int(v["ensemble"]))
    payload = {"intertwining": _jsonable(inter["rows"]),
               "bound_stability": _jsonable(bounds["stability"])}
    return payload, inter["passed"] and bounds["passed"], False


def _run_dns(cfg: RunConfig) -> tuple[dict, bool, bool]:
    from . import dns
    v = cfg.values
    kw = {}
    if v["t_end"] > 0:
        kw["t_end"] = v["t_end"]
    if v["dt"] > 0:
        kw["dt"] = v["dt"]
    c = dns.DNSConfig(nu=v["nu"], gamma=v["gamma"], k_f=v["k_f"],
                      n=(v["n"],) * 3, epsilon=v["epsilon"], seed=cfg.seed, **kw)
    out = dns.run_simulation(c)
    out["tracker"].write_csv(cfg.out_dir / "dns_diagnostics.csv",
                             header_lines=["envelope: " + payload_bytes(
                                 {"config": cfg.echo()}).decode()])
    payload = {"outcome": out["outcome"], "rate_neq": _jsonable(out["rate_neq"]),
               "m0": out["m0"], "m1": out["m1"],
               "m0_over_v0": out["m0_over_v0"], "resolved": out["resolved"]}
    passed = out["outcome"] != "blew-up(numerical)" if v["epsilon"] > 0 else True
    return payload, passed, not out["resolved"]


def _threshold_cell(args) -> dict:
    from . import dns
    nu, eps, k_f, n, seed = args
    c = dns.DNSConfig(nu=nu, gamma=nu, k_f=k_f, n=(n,) * 3, epsilon=eps, seed=seed)
    out = dns.run_simulation(c)
    return {"nu": nu, "gamma": nu, "epsilon": eps, "seed": seed,
            "outcome": out["outcome"], "rate_neq": out["rate_neq"],
            "m0": out["m0"], "m1": out["m1"], "resolved": out["resolved"]}


def _run_threshold(cfg: RunConfig) -> tuple[dict, bool, bool]:
    from . import dns
    v = cfg.values
    cells = sorted((nu, eps, v["k_f"], int(v["n"]), cfg.seed)
                   for nu in v["nu"] for eps in v["epsilon"])
    rows = parallel_map(_threshold_cell, cells, cfg.jobs)
    tmap = dns.ThresholdMap(rows=rows)
    payload = _jsonable(tmap.as_record())
    unresolved = any(not r["resolved"] for r in rows)
    return payload, tmap.monotone_in_nu(), unresolved


def _run_all_acceptance(cfg: RunConfig) -> tuple[dict, bool, bool]:
    from . import acceptance
    out = acceptance.run_all(fast=bool(cfg.values.get("fast")))
    return _jsonable(out), out["passed"], False


RUNNERS = {
    "psi": _run_psi,
    "resolvent-sweep": _run_resolvent_sweep,
    "pseudospectrum": _run_pseudospectrum,
    "evolve": _run_evolve,
    "alpha1": _run_alpha1,
    "waveop": _run_waveop,
    "dns": _run_dns,
    "threshold": _run_threshold,
    "all-acceptance": _run_all_acceptance,
}


def run_subcommand(cfg: RunConfig) -> int:
    """Dispatch a parsed RunConfig; writes the report and returns the exit code."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    np.random.seed(cfg.seed % 2**32)  # legacy paths; all code uses Generators
    payload, passed, res_flag = RUNNERS[cfg.subcommand](cfg)
    write_report(cfg.out_dir / f"{cfg.subcommand.replace('-', '_')}_report.json",
                 cfg, payload, passed)
    if not passed:
        return EXIT_VERDICT
    if res_flag:
        return EXIT_RESOLUTION
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(
        prog="kolmoflow",
        description="pseudospectral bounds, decay envelopes and stability probes "
                    "for the 3D Kolmogorov flow")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", type=Path, default=None,
                    help="plain-text key=value configuration file")
    ap.add_argument("--out", type=Path, default=Path("out"),
                    help="output directory for reports and CSV tables")
    ap.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    ap.add_argument("--seed", type=int, default=0, help="u64 RNG seed")
    ap.add_argument("--report", type=Path, default=None,
                    help="file to validate (check-report only)")
    args = ap.parse_args(argv)

    if args.subcommand == "check-report":
        target = args.report or args.config
        if target is None:
            print("check-report needs --report <file>", file=sys.stderr)
            return EXIT_CONFIG
        try:
            doc = check_report(target)
        except (ConfigError, json.JSONDecodeError, OSError) as exc:
            print(f"invalid report: {exc}", file=sys.stderr)
            return getattr(exc, "code", EXIT_CONFIG)
        print(f"valid kolmoflow report: subcommand="
              f"{doc['envelope']['config'].get('subcommand')!r}, "
              f"passed={doc['summary']['passed']}")
        return EXIT_OK

    try:
        if args.config is not None:
            if not args.config.exists():
                raise ConfigError(f"config file {args.config} does not exist")
            values = parse_config(args.config.read_text(), args.subcommand)
        else:
            values = parse_config("", args.subcommand)
        cfg = RunConfig(subcommand=args.subcommand, values=values,
                        out_dir=args.out, seed=args.seed, jobs=args.jobs)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        return run_subcommand(cfg)
    except (ConfigError,) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
