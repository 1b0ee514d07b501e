"""``glx run | resume | validate``.

Exit codes: 0 success, 2 invalid config, 3 runtime abort (partial artifacts
and a recovery note are left in the output directory).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from .config import ValidationError, load_config, parse_config
from .experiments import RUNNERS
from .sampler import config_to_dict

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 2, 3


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _dump(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n").encode()


def _write_tables(out: Path, tables: dict, formats) -> list:
    written = []
    for name, (header, rows) in tables.items():
        if "csv" in formats:
            p = out / f"{name}.csv"
            tmp = p.with_name(p.name + ".tmp")
            with open(tmp, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for r in rows:
                    w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
            os.replace(tmp, p)
            written.append(p)
        if "gnuplot" in formats:
            p = out / f"{name}.dat"
            lines = ["# " + " ".join(header)]
            lines += [" ".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in r) for r in rows]
            _atomic_write(p, ("\n".join(lines) + "\n").encode())
            written.append(p)
    return written


def _versions():
    import numba
    import scipy

    from . import __version__

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "glx": __version__}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _data_files(out: Path) -> dict:
    skip = {"manifest.json", "summary.txt"}
    return {str(p.relative_to(out)): _sha256(p) for p in sorted(out.rglob("*"))
            if p.is_file() and p.name not in skip and not p.name.endswith(".tmp")}


def _summary(cfg, report) -> str:
    lines = [f"experiment: {cfg.experiment}", f"seed: {cfg.seed}"]
    if cfg.Ns:
        lines.append(f"N: {cfg.Ns}")

    def walk(d, prefix=""):
        for k, v in d.items():
            if isinstance(v, dict):
                walk(v, f"{prefix}{k}.")
            elif isinstance(v, (int, float, str, bool)) or v is None:
                lines.append(f"{prefix}{k}: {v}")

    for i, item in enumerate(report.get("runs", report.get("results", report.get("cstar", [])))):
        if isinstance(item, dict):
            walk(item, f"[{i}] ")
    if not any(k in report for k in ("runs", "results", "cstar")):
        walk(report)
    return "\n".join(lines) + "\n"


def execute(cfg, config_text: str, out: Path, resume: bool = False) -> int:
    out.mkdir(parents=True, exist_ok=True)
    resolved = {"experiment": cfg.experiment, "seed": cfg.seed, "model": cfg.model, "analysis": cfg.analysis,
                "output": cfg.output, "sampler": config_to_dict(cfg.sampler) if cfg.sampler else None}
    manifest = {"config_text": config_text, "config_source": cfg.source, "resolved": resolved,
                "output": str(out), "versions": _versions(), "streams": ["chain", "init", "hmc-jitter", "ballot",
                                                                          "skorokhod", "boot"],
                "status": "running"}
    mpath = out / "manifest.json"
    _atomic_write(mpath, _dump(manifest))
    t0 = time.perf_counter()
    try:
        report, tables = RUNNERS[cfg.experiment](cfg, out, resume)
    except Exception as exc:  # runtime abort: keep partial artifacts, record how to recover
        manifest.update(status="aborted", error=f"{type(exc).__name__}: {exc}",
                        recovery=f"fix the cause, then `glx resume {mpath}`; persisted snapshots are reused",
                        wall_time=time.perf_counter() - t0, data_files=_data_files(out))
        _atomic_write(mpath, _dump(manifest))
        print(f"glx: run aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        print(f"glx: partial artifacts in {out}; resume with `glx resume {mpath}`", file=sys.stderr)
        return EXIT_ABORT
    fmts = cfg.output["formats"]
    _atomic_write(out / "report.json", _dump(report))
    _write_tables(out, tables, fmts)
    _atomic_write(out / "summary.txt", _summary(cfg, report).encode())
    manifest.update(status="complete", wall_time=time.perf_counter() - t0, data_files=_data_files(out))
    _atomic_write(mpath, _dump(manifest))
    print(f"glx: {cfg.experiment} complete; outputs in {out}")
    return EXIT_OK


def _set_threads(n):
    if n is None:
        return
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ValidationError as e:
        print(f"glx: invalid config: {e}", file=sys.stderr)
        return EXIT_INVALID
    print(f"glx: {args.config} is valid ({cfg.experiment})")
    return EXIT_OK


def cmd_run(args) -> int:
    text = Path(args.config).read_text()
    try:
        cfg = parse_config(text, str(args.config))
    except ValidationError as e:
        print(f"glx: invalid config: {e}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out or cfg.output["directory"])
    _set_threads(args.threads)
    return execute(cfg, text, out)


def cmd_resume(args) -> int:
    mpath = Path(args.manifest)
    if mpath.is_dir():
        mpath = mpath / "manifest.json"
    try:
        man = json.loads(mpath.read_text())
    except (OSError, ValueError) as e:
        print(f"glx: cannot read manifest {mpath}: {e}", file=sys.stderr)
        return EXIT_ABORT
    if man.get("status") == "complete":
        print("glx: run already complete; nothing to do")
        return EXIT_OK
    try:
        cfg = parse_config(man["config_text"], man.get("config_source"))
    except ValidationError as e:
        print(f"glx: invalid config in manifest: {e}", file=sys.stderr)
        return EXIT_INVALID
    _set_threads(args.threads)
    return execute(cfg, man["config_text"], mpath.parent, resume=True)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="glx", description="Ginzburg-Landau lattice field experiments")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the experiment described by a config file")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="output directory (overrides output.directory)")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("resume", help="continue an interrupted run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_resume)
    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
