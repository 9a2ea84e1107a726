"""Command-line entry point: ``kppfront <command> --config run.toml``.

Exit codes: 0 success, 1 computational or I/O error, 2 configuration
error, 3 verification failure (verify-all only).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, cell, frontsim, halfspace, speeds, verify
from .config import SCHEMA_VERSION, digest, load, medium_spec
from .errors import ConfigError, KPPFrontError
from .torus import TorusGrid, build_field

COMMANDS = ("eigen", "speed", "atlas", "minimizer-check", "cell", "simulate", "halfspace", "verify-all")
EXIT_OK, EXIT_COMPUTE, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2, 3


class OutputError(Exception):
    pass


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


class Output:
    """Writes result files tagged with the schema version and config digest."""

    def __init__(self, root: Path, command: str, cfg_digest: str):
        self.root, self.command, self.digest = root, command, cfg_digest
        self.files: list[str] = []
        try:
            root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OutputError(f"cannot create output directory {root}: {exc}") from exc
        if not os.access(root, os.W_OK):
            raise OutputError(f"output directory {root} is not writable")

    @property
    def comment(self) -> str:
        return f"kppfront schema_version={SCHEMA_VERSION} config_digest={self.digest}"

    def _path(self, name: str) -> Path:
        self.files.append(name)
        return self.root / name

    def json(self, name: str, payload: dict) -> None:
        doc = {"schema_version": SCHEMA_VERSION, "config_digest": self.digest, "command": self.command}
        doc.update(payload)
        text = json.dumps(doc, indent=2, sort_keys=True, default=_plain)
        self._write(name, text + "\n")

    def csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        self._write(name, f"# {self.comment}\n" + buf.getvalue())

    def with_writer(self, name: str, fn) -> None:
        """Let an object's own ``to_csv(path, comment)`` write the file."""
        try:
            fn(self._path(name), comment=self.comment)
        except OSError as exc:
            raise OutputError(f"cannot write {name}: {exc}") from exc

    def _write(self, name, text):
        try:
            with open(self._path(name), "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise OutputError(f"cannot write {name}: {exc}") from exc


# -- helpers ------------------------------------------------------------------


def _medium(cfg):
    spec = medium_spec(cfg)
    n, N = cfg["grid"]["n"], cfg["grid"]["N"]
    return spec, build_field(spec, TorusGrid(n, N))


def _section(cfg, name):
    if name not in cfg:
        raise ConfigError(f"this command needs a [{name}] section")
    return cfg[name]


def _unit(v, n):
    if v is None:
        return np.eye(n)[0]
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm == 0:
        raise ConfigError("direction vectors must be nonzero")
    return v / norm


def _medium_record(cfg):
    return {"mu_spec": medium_spec(cfg).to_dict(), "n": cfg["grid"]["n"], "grid_N": cfg["grid"]["N"]}


# -- commands -----------------------------------------------------------------


def cmd_eigen(cfg, out: Output, threads: int):
    sec = cfg.get("eigen") or {}
    _, mu = _medium(cfg)
    n = cfg["grid"]["n"]
    e = _unit(sec.get("e"), n)
    tol = sec.get("tol", cell.DEFAULT_TOL)
    pairs = [cell.principal_eigenpair(mu, e, lam, tol=tol).to_record() for lam in sec.get("lambdas")
             or [0.25, 0.5, 1.0, 2.0, 4.0]]
    out.json("eigen.json", {**_medium_record(cfg), "tol": tol, "pairs": pairs})
    return EXIT_OK


def cmd_speed(cfg, out: Output, threads: int):
    sec = cfg.get("speed") or {}
    _, mu = _medium(cfg)
    n = cfg["grid"]["n"]
    dirs = sec.get("directions") or ([[1.0], [-1.0]] if n == 1 else [[1.0, 0.0], [0.0, 1.0]])
    rows, recs = [], []
    for d in dirs:
        e = _unit(d, n)
        r = speeds.minimal_speed_details(mu, e, tol=sec.get("tol", 1e-6), method=sec.get("method", "golden"))
        recs.append({"e": e.tolist(), "c_star": r.c_star, "lambda_star": r.lambda_star,
                     "stationarity": r.stationarity, "evaluations": r.evaluations, "bracket": list(r.bracket)})
        rows.append([*e.tolist(), r.c_star, r.lambda_star, r.stationarity, r.evaluations])
    header = [f"e{i + 1}" for i in range(n)] + ["c_star", "lambda_star", "stationarity", "evaluations"]
    out.csv("speed.csv", header, rows)
    out.json("speed.json", {**_medium_record(cfg), "speeds": recs})
    return EXIT_OK


def _atlas(cfg, threads):
    sec = cfg.get("atlas") or {}
    spec = medium_spec(cfg)
    return speeds.build_atlas(
        spec, cfg["grid"]["n"], sec.get("N") or cfg["grid"]["N"], directions=sec.get("directions", 720),
        threads=threads, angle_tol=sec.get("angle_tol", 1e-7), gradient_step=sec.get("gradient_step", 1e-4),
        method=sec.get("method", "brent"), angle_method=sec.get("method", "brent"),
    )


def _write_atlas(atlas, out: Output):
    d = atlas.to_dict()
    d["resolution"] = atlas.resolution
    out.json("atlas.json", d)
    out.with_writer("atlas.csv", atlas.write_csv)


def cmd_atlas(cfg, out: Output, threads: int):
    _write_atlas(_atlas(cfg, threads), out)
    return EXIT_OK


def cmd_minimizer_check(cfg, out: Output, threads: int):
    if cfg["grid"]["n"] != 2:
        raise ConfigError("minimizer-check needs grid.n = 2")
    atlas = _atlas(cfg, threads)
    _write_atlas(atlas, out)
    mc = cfg.get("minimizer_check") or {}
    kw = {k: v for k, v in mc.items() if v is not None}
    report = speeds.verify_minimizer_theory(atlas, **kw)
    out.json("minimizer_report.json", {**_medium_record(cfg), "report": report})
    return EXIT_OK


def cmd_cell(cfg, out: Output, threads: int):
    sec = cfg.get("cell") or {}
    _, mu = _medium(cfg)
    e = _unit(sec.get("e"), cfg["grid"]["n"])
    rec = speeds.direction_record(mu, e, directions=sec.get("directions", 256))
    sol = cell.solve_cell(mu, rec.e_prime, rec.lambda_star_prime, rec.w_star, rec.e, tol=sec.get("tol", 1e-8))
    S = sol.S
    out.json("cell.json", {
        **_medium_record(cfg),
        "direction": rec.to_record(),
        "cell": sol.to_record(),
        "diagnostics": sol.diagnostics,
        "S_eigenvalues": np.linalg.eigvalsh(0.5 * (S + S.T)).tolist(),
        "S_asymmetry": float(np.max(np.abs(S - S.T))),
    })
    return EXIT_OK


def sim_config(cfg) -> frontsim.SimConfig:
    s = _section(cfg, "simulate")
    n = cfg["grid"]["n"]
    dirs = s.get("directions") or [list(np.eye(n)[0])]
    try:
        return frontsim.SimConfig(
            n=n, mu_spec=medium_spec(cfg), t_final=s["t_final"], domain_half_width=s.get("domain_half_width"),
            points_per_cell=s["points_per_cell"], dt=s["dt"], reaction=s["reaction"],
            init=frontsim.InitSpec(s["init_radius"], s["init_amplitude"], s["init_profile"]), level=s["level"],
            record_times=s["record_times"], directions=[tuple(d) for d in dirs],
            sample_interval=s["sample_interval"], margin=s["margin"],
        )
    except ValueError as exc:
        raise ConfigError(f"simulate: {exc}") from exc


def cmd_simulate(cfg, out: Output, threads: int):
    sc = sim_config(cfg)
    s = cfg["simulate"]
    res = frontsim.run_simulation(sc)
    t_min = s.get("fit_t_min") or sc.t_final / 10
    fits = []
    for i, tr in enumerate(res.traces):
        out.with_writer(f"front_{i}.csv", tr.to_csv)
        entry = {"direction": list(tr.direction), "level": tr.level}
        entry.update(frontsim.fit_bramson(tr, t_min, s.get("fit_t_max")).to_dict())
        fits.append(entry)
    for snap in res.snapshots:
        name = f"snapshot_t{snap.t:g}.csv"
        if snap.n == 1:
            out.csv(name, ["x", "u"], zip(snap.axis, snap.u))
        else:
            X, Y = np.meshgrid(snap.axis, snap.axis, indexing="ij")
            out.csv(name, ["x", "y", "u"], zip(X.ravel(), Y.ravel(), snap.u.ravel()))
    out.json("fit.json", {**_medium_record(cfg), "fits": fits, "edge_max": res.edge_max,
                          "domain_half_width": sc.half_width(), "t_final": sc.t_final})
    return EXIT_OK


def halfspace_config(cfg, rec) -> halfspace.HalfspaceConfig:
    h = _section(cfg, "halfspace")
    n = cfg["grid"]["n"]
    alpha = 0.0
    if h["frame"] == "log":
        alpha = h["alpha"] if h["alpha"] is not None else (n / 2 + 1) / rec.lambda_star_prime
        alpha += h["alpha_shift"]
        if alpha < 0:
            raise ConfigError("halfspace.alpha + halfspace.alpha_shift must be non-negative")
    cs = rec.c_star if n == 1 else float(rec.diagnostics["c_star_prime"])
    try:
        return halfspace.HalfspaceConfig(
            n=n, mu_spec=medium_spec(cfg), e=rec.e, e_prime=rec.e_prime, c_star=cs,
            lambda_star=rec.lambda_star_prime, w_star=rec.w_star, t_final=h["t_final"], frame=h["frame"],
            alpha=alpha, T=h["T"], h=h["h"], dt=h["dt"], xi_max=h["xi_max"], width=h["width"],
            grid_N=cfg["grid"]["N"], v0=halfspace.InitialBump(h["v0_center"], 0.0, h["v0_radius"]),
            sigma=h["sigma"], rho=h["rho"], L=h["L"], ball=h["ball"], sample_interval=h["sample_interval"],
            record_times=h["record_times"],
        )
    except ValueError as exc:
        raise ConfigError(f"halfspace: {exc}") from exc


def cmd_halfspace(cfg, out: Output, threads: int):
    h = _section(cfg, "halfspace")
    _, mu = _medium(cfg)
    e = _unit(h.get("e"), cfg["grid"]["n"])
    rec = speeds.direction_record(mu, e, directions=(cfg.get("cell") or {}).get("directions", 256))
    hc = halfspace_config(cfg, rec)
    res = halfspace.run_linear_frame(hc) if hc.frame == "linear" else halfspace.run_log_frame(hc)
    lo = h.get("fit_t_min") or hc.t_final / 10
    hi = h.get("fit_t_max") or hc.t_final
    fits = {}
    for name, series in res.probes.items():
        out.with_writer(f"probe_{name}.csv", series.to_csv)
        fits[name] = {"description": series.description, **halfspace.fit_power_law(series, lo, hi).to_dict()}
    payload = {
        **_medium_record(cfg), "direction": rec.to_record(), "frame": hc.frame, "alpha": hc.alpha,
        "T": hc.T_value, "xi_max": hc.xi_extent(), "fits": fits, "diagnostics": res.diagnostics,
        "tail": halfspace.check_exponential_tail(res.final),
    }
    if hc.n == 2 and hc.frame == "linear":
        covs = []
        for st in res.states or [res.final]:
            c = halfspace.profile_covariance(st)
            covs.append({"t": c["t"], "S_fit": c["S_fit"], "mean": c["mean"]})
        payload["covariance"] = covs
    out.json("halfspace.json", payload)
    return EXIT_OK


def cmd_verify_all(cfg, out: Output, threads: int):
    results = verify.run_suite(cfg, threads=threads)
    all_pass = all(r["passed"] for r in results)
    out.json("verify_results.json", {**_medium_record(cfg), "seed": cfg["seed"], "checks": results,
                                     "all_pass": all_pass})
    out.csv("verify_matrix.csv", ["check", "status"], [[r["name"], verify.status(r)] for r in results])
    for r in results:
        print(f"{verify.status(r)}  {r['name']}")
    return EXIT_OK if all_pass else EXIT_VERIFY


HANDLERS = {
    "eigen": cmd_eigen,
    "speed": cmd_speed,
    "atlas": cmd_atlas,
    "minimizer-check": cmd_minimizer_check,
    "cell": cmd_cell,
    "simulate": cmd_simulate,
    "halfspace": cmd_halfspace,
    "verify-all": cmd_verify_all,
}


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kppfront", description="KPP fronts in periodic media.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, metavar="PATH", help="TOML run configuration")
    p.add_argument("--out", metavar="DIR", help="output directory (env APP_OUT, default ./out)")
    p.add_argument("--threads", metavar="K", help="worker processes (env APP_THREADS, default 1)")
    p.add_argument("--seed", metavar="U64", help="overrides the config seed")
    return p


def _positive_int(text, what, upper=None):
    try:
        v = int(text)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be an integer, got {text!r}") from None
    if v < (0 if what == "--seed" else 1) or (upper is not None and v >= upper):
        raise ConfigError(f"{what} is out of range: {text!r}")
    return v


def _origin(exc) -> str:
    """Name of the innermost package module the exception passed through."""
    here = Path(__file__).parent
    name = "kppfront"
    tb = exc.__traceback__
    while tb is not None:
        path = Path(tb.tb_frame.f_code.co_filename)
        if path.parent == here and path.stem not in ("cli", "errors"):
            name = path.stem
        tb = tb.tb_next
    return name


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        cfg = load(args.config)
        threads = _positive_int(args.threads or os.environ.get("APP_THREADS") or "1", "--threads")
        if args.seed is not None:
            cfg["seed"] = _positive_int(args.seed, "--seed", upper=2**64)
        out_dir = Path(args.out or os.environ.get("APP_OUT") or "out")
        out = Output(out_dir, args.command, digest(cfg))
        code = HANDLERS[args.command](cfg, out, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except KPPFrontError as exc:
        print(f"{args.command}: {type(exc).__name__} in {_origin(exc)}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"{args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    finished = time.time()
    meta = {
        "command": args.command,
        "config_path": str(Path(args.config).resolve()),
        "config_digest": out.digest,
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "threads": threads,
        "started_utc": _dt.datetime.fromtimestamp(started, _dt.timezone.utc).isoformat(),
        "finished_utc": _dt.datetime.fromtimestamp(finished, _dt.timezone.utc).isoformat(),
        "elapsed_seconds": round(finished - started, 3),
        "exit_code": code,
        "files": sorted(out.files),
    }
    try:
        with open(out.root / "run_metadata.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        print(f"I/O error: cannot write run metadata: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    return code


if __name__ == "__main__":
    sys.exit(main())
