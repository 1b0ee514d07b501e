"""Experiment configuration: YAML in, validated dataclass out.

Validation walks the composed YAML node tree so every error can name the
offending field and the line it sits on.  Unknown keys are errors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .potential import PotentialError, from_config
from .sampler import ALGORITHMS, ChainConfig, ConfigError

EXPERIMENTS = ("sample", "stiffness", "cstar", "multiscale", "extremes", "ballot", "skorokhod", "tightness")
FORMATS = ("json", "csv", "gnuplot", "glf")


class ValidationError(ValueError):
    def __init__(self, path: str, msg: str, line: int | None = None, source: str | None = None):
        self.path, self.msg, self.line, self.source = path, msg, line, source
        where = f"{source or '<config>'}:{line}: " if line is not None else ""
        super().__init__(f"{where}field '{path}': {msg}")


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    model: dict = field(default_factory=dict)
    sampler: ChainConfig | None = None
    analysis: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    source: str | None = None
    raw: dict = field(default_factory=dict)

    @property
    def Ns(self) -> list:
        return list(self.model.get("N") or [])

    def potential(self):
        p = self.model.get("potential", {"id": "quadratic"})
        return from_config(p["id"], p.get("params", []))


# --- schema -------------------------------------------------------------------------
# each entry: key -> (checker, default); a checker returns the normalised value or raises ValueError

def _int(lo=None, hi=None):
    def f(v):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ValueError("must be an integer")
        if lo is not None and v < lo:
            raise ValueError(f"must be >= {lo}")
        if hi is not None and v > hi:
            raise ValueError(f"must be <= {hi}")
        return v
    return f


def _real(lo=None, hi=None, open_lo=False):
    def f(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValueError("must be a finite number")
        if lo is not None and (v < lo or (open_lo and v == lo)):
            raise ValueError(f"must be {'>' if open_lo else '>='} {lo}")
        if hi is not None and v > hi:
            raise ValueError(f"must be <= {hi}")
        return float(v)
    return f


def _choice(*opts):
    def f(v):
        if v not in opts:
            raise ValueError(f"must be one of {', '.join(map(str, opts))}")
        return v
    return f


def _list(item, min_len=1):
    def f(v):
        if not isinstance(v, list):
            v = [v]
        if len(v) < min_len:
            raise ValueError(f"needs at least {min_len} entries")
        return [item(x) for x in v]
    return f


def _site(v):
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(c, int) and not isinstance(c, bool) for c in v)):
        raise ValueError("must be a pair of integers [x1, x2]")
    return (v[0], v[1])


def _bool(v):
    if not isinstance(v, bool):
        raise ValueError("must be true or false")
    return v


def _any(v):
    return v


def _optional(f):
    return lambda v: None if v is None else f(v)


MODEL = {
    "N": (_list(_int(2)), None),
    "potential": (None, {"id": "quadratic", "params": []}),  # nested, see POTENTIAL
    "boundary": (_real(), 0.0),
    "edge_multiplicity": (_choice(1, 2), 2),
}
POTENTIAL = {"id": (_choice("quadratic", "cosine-perturbed", "user-table"), "quadratic"), "params": (_any, [])}
SAMPLER = {
    "algorithm": (_choice(*ALGORITHMS), "exact-gaussian"),
    "step_size": (_real(0, open_lo=True), 0.01),
    "burn_in_sweeps": (_optional(_int(0)), None),
    "thinning_sweeps": (_int(1), 1),
    "samples": (_int(1), 1000),
    "replicas": (_int(1), 1),
    "conditional": (_choice("slice", "inverse-cdf"), "slice"),
    "hmc_steps": (_int(1), 8),
    "hmc_jitter": (_real(0, 1), 0.2),
    "hmc_stiffness": (_optional(_real(0, open_lo=True)), None),
    "start": (_choice("zero", "exact"), "zero"),
    "checkpoint_every": (_int(0), 0),
}
LAW = {"family": (_choice("gaussian", "logistic", "discrete", "constant"), "gaussian"), "params": (_any, [])}
BARRIER = {
    "kind": (_choice("upper", "lower-corridor"), "upper"),
    "gammas": (_list(_real()), [0.0, 1.0, 2.0, 4.0, 8.0]),
    "delta": (_real(0), 3.0),
    "ell": (_int(0), 0),
    "upsilon": (_real(0), 0.0),
    "sites": (_optional(_list(_site)), None),
}
ANALYSIS = {
    "sample": {},
    "stiffness": {
        "methods": (_list(_choice("covariance", "clt-variance")), ["covariance", "clt-variance"]),
        "nblocks": (_int(2), 20),
        "regressor": (_choice("green", "log"), "green"),
        "cstar_M": (_int(32), 256),
        "mode": (_list(_int(1)), [2, 1]),
    },
    "cstar": {"M": (_list(_int(32)), [256])},
    "multiscale": {
        "site": (_site, (0, 0)),
        "k0": (_int(0), 1),
        "k_inf": (_int(0), 3),
        "omega": (_real(0, 1, open_lo=True), 1.0 / 16.0),
        "lambdas": (_list(_real()), [-1.0, -0.5, 0.5, 1.0]),
        "n_boot": (_int(10), 200),
        "g_hat": (_optional(_real(0, open_lo=True)), None),
    },
    "extremes": {
        "site": (_site, (0, 0)),
        "g_hat": (_optional(_real(0, open_lo=True)), None),
        "safety": (_real(1), 2.0),
        "t_points": (_int(2), 25),
        "omega": (_real(0, 1, open_lo=True), 1.0 / 16.0),
        "barrier": (None, None),
    },
    "ballot": {
        "m": (_list(_int(2)), [16, 32, 64, 128]),
        "kind": (_choice("one-sided-up", "one-sided-down", "corridor"), "corridor"),
        "a": (_real(0), 0.0),
        "t": (_real(0), 0.0),
        "ell": (_int(1), 1),
        "window": (_optional(_list(_real(), 2)), None),
        "trials": (_int(10_000), 1_000_000),
        "increments": (None, {"family": "gaussian", "params": [0.0, 1.0]}),
    },
    "skorokhod": {"target": (None, {"family": "gaussian", "params": [0.0, 1.0]}), "draws": (_int(1000), 1_000_000)},
    "tightness": {
        "g_hat": (_optional(_real(0, open_lo=True)), None),
        "n_boot": (_int(10), 1000),
    },
}
OUTPUT = {"directory": (_any, "out"), "formats": (_list(_choice(*FORMATS)), ["json", "csv"])}
NESTED = {"potential": POTENTIAL, "barrier": BARRIER, "increments": LAW, "target": LAW}


# --- validation -----------------------------------------------------------------------

class _Lines:
    """Maps dotted field paths to line numbers in the YAML source."""

    def __init__(self, node):
        self.map = {}
        self._walk(node, "")

    def _walk(self, node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = f"{prefix}.{k.value}" if prefix else str(k.value)
                self.map[p] = k.start_mark.line + 1
                self._walk(v, p)

    def __call__(self, path):
        while path:
            if path in self.map:
                return self.map[path]
            path = path.rpartition(".")[0]
        return None


def _block(data, schema, path, lines, source):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValidationError(path, "must be a mapping", lines(path), source)
    for k in data:
        if k not in schema:
            raise ValidationError(f"{path}.{k}" if path else str(k), "unknown key", lines(f"{path}.{k}"), source)
    out = {}
    for k, (check, default) in schema.items():
        p = f"{path}.{k}" if path else k
        if check is None:
            if k in data:
                out[k] = _block(data[k], NESTED[k], p, lines, source)
            else:
                out[k] = None if default is None else _block(dict(default), NESTED[k], p, lines, source)
            continue
        if k not in data:
            out[k] = default
            continue
        try:
            out[k] = check(data[k])
        except ValueError as e:
            raise ValidationError(p, str(e), lines(p), source) from None
    return out


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        line = getattr(getattr(e, "problem_mark", None), "line", None)
        raise ValidationError("<document>", f"not valid YAML ({getattr(e, 'problem', e)})",
                              None if line is None else line + 1, source) from None
    lines = _Lines(node)
    if not isinstance(data, dict):
        raise ValidationError("<document>", "top level must be a mapping", 1, source)
    top = {"experiment", "seed", "model", "sampler", "analysis", "output"}
    for k in data:
        if k not in top:
            raise ValidationError(str(k), "unknown key", lines(str(k)), source)
    exp = data.get("experiment")
    if exp not in EXPERIMENTS:
        raise ValidationError("experiment", f"must be one of {', '.join(EXPERIMENTS)}", lines("experiment"), source)
    if "seed" not in data:
        raise ValidationError("seed", "is mandatory", None, source)
    seed = data["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < (1 << 128):
        raise ValidationError("seed", "must be a non-negative integer below 2^128", lines("seed"), source)

    model = _block(data.get("model"), MODEL, "model", lines, source)
    pot = model["potential"]
    try:
        from_config(pot["id"], pot["params"])
    except (PotentialError, ValueError, TypeError) as e:
        raise ValidationError("model.potential.params", str(e), lines("model.potential"), source) from None
    needs_N = exp in ("sample", "stiffness", "multiscale", "extremes", "tightness")
    if needs_N and not model["N"]:
        raise ValidationError("model.N", "is required for this experiment", lines("model"), source)
    if exp == "tightness" and len(model["N"]) < 3:
        raise ValidationError("model.N", "tightness needs at least three box sizes", lines("model.N"), source)

    sampler = None
    if needs_N:
        s = _block(data.get("sampler"), SAMPLER, "sampler", lines, source)
        ck = s.pop("checkpoint_every")
        sampler = ChainConfig(seed=seed, edge_multiplicity=model["edge_multiplicity"], **s)
        try:
            sampler.validate(from_config(pot["id"], pot["params"]))
        except ConfigError as e:
            fld = {"stepSize": "step_size", "thinningSweeps": "thinning_sweeps", "burnInSweeps": "burn_in_sweeps"}.get(e.field, e.field)
            raise ValidationError(f"sampler.{fld}", str(e).split(": ", 1)[-1], lines(f"sampler.{fld}"), source) from None
        model["checkpoint_every"] = ck
    elif data.get("sampler") is not None:
        raise ValidationError("sampler", f"not used by experiment {exp}", lines("sampler"), source)

    analysis = _block(data.get("analysis"), ANALYSIS[exp], "analysis", lines, source)
    if exp == "multiscale" and analysis["k_inf"] < analysis["k0"]:
        raise ValidationError("analysis.k_inf", "must be >= analysis.k0", lines("analysis.k_inf"), source)
    if exp in ("multiscale", "extremes"):
        for N in model["N"]:
            if max(abs(c) for c in analysis["site"]) >= N:
                raise ValidationError("analysis.site", f"outside the box of radius {N}", lines("analysis.site"), source)
    if exp == "multiscale":
        for N in model["N"]:
            if analysis["k_inf"] > math.log(N):
                raise ValidationError("analysis.k_inf", f"exceeds log N = {math.log(N):.3f} for N={N}",
                                      lines("analysis.k_inf"), source)
    output = _block(data.get("output"), OUTPUT, "output", lines, source)
    return ExperimentConfig(exp, seed, model, sampler, analysis, output, source, data)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))
