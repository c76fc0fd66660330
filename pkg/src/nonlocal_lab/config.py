"""Experiment configuration: YAML parsing with line-aware validation."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigurationError

__all__ = ["ExperimentConfig", "KINDS", "load_config", "parse_config", "config_hash"]

KINDS = ("assemble", "resolvent-sweep", "caccioppoli", "wrh", "cz", "good-lambda", "maxreg",
         "square-function")
# fields that do not change results
COSMETIC = ("output", "threads")


def _line_index(node, path=(), out=None):
    """Map key paths to 1-based source lines."""
    if out is None:
        out = {}
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _line_index(v, path + (key,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


def config_hash(data):
    """SHA-256 of the canonical JSON of all semantically relevant fields."""
    payload = {k: v for k, v in data.items() if k not in COSMETIC}
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class ExperimentConfig:
    """Validated experiment configuration.

    ``data`` keeps the plain mapping (so the configuration round-trips through
    YAML unchanged); accessors return typed views with defaults applied.
    """

    data: dict
    lines: dict = field(default_factory=dict, repr=False)

    def line(self, *path):
        for k in range(len(path), -1, -1):
            if path[:k] in self.lines:
                return self.lines[path[:k]]
        return None

    def fail(self, path, message):
        ln = self.line(*path)
        where = ".".join(str(p) for p in path) or "<root>"
        prefix = f"line {ln}: " if ln is not None else ""
        raise ConfigurationError(f"{prefix}field '{where}': {message}")

    # typed views ------------------------------------------------------

    @property
    def kind(self):
        return self.data["kind"]

    @property
    def seed(self):
        return int(self.data.get("seed", 0))

    @property
    def kernel(self):
        return self.data.get("kernel", {})

    @property
    def grid(self):
        return self.data.get("grid", {})

    @property
    def sector(self):
        return self.data.get("sector", {})

    @property
    def sweep(self):
        return self.data.get("sweep", {})

    @property
    def params(self):
        return self.data.get("params", {}) or {}

    @property
    def output_dir(self):
        return (self.data.get("output") or {}).get("dir")

    @property
    def threads(self):
        return int(self.data.get("threads", 1))

    @property
    def hash(self):
        return config_hash(self.data)

    def with_overrides(self, seed=None, threads=None, output=None):
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["seed"] = int(seed)
        if threads is not None:
            data["threads"] = int(threads)
        if output is not None:
            data.setdefault("output", {})
            data["output"] = dict(data["output"] or {}, dir=str(output))
        return ExperimentConfig(data, self.lines)

    def to_yaml(self):
        return yaml.safe_dump(self.data, sort_keys=False)

    # validation -------------------------------------------------------

    def validate(self):
        d = self.data
        if not isinstance(d, dict):
            self.fail((), "configuration must be a mapping")
        if d.get("kind") not in KINDS:
            self.fail(("kind",), f"must be one of {list(KINDS)}, got {d.get('kind')!r}")
        for block in ("kernel", "grid", "sector", "sweep", "params", "output"):
            if block in d and d[block] is not None and not isinstance(d[block], dict):
                self.fail((block,), "must be a mapping")
        if "seed" in d and not isinstance(d["seed"], int):
            self.fail(("seed",), "must be an integer")
        if "threads" in d and (not isinstance(d["threads"], int) or d["threads"] < 1):
            self.fail(("threads",), "must be a positive integer")
        k = self.kernel
        if k:
            if "dimension" in k and k["dimension"] not in (1, 2):
                self.fail(("kernel", "dimension"), "must be 1 or 2")
            if "alpha" in k and not (isinstance(k["alpha"], (int, float)) and 0 < k["alpha"] < 1):
                self.fail(("kernel", "alpha"), "must lie in (0, 1)")
            lam = k.get("lambda")
            if lam is not None and not (isinstance(lam, (int, float)) and 0 < lam < 1):
                self.fail(("kernel", "lambda"), "must lie in (0, 1)")
        g = self.grid
        if g:
            if "half_width" in g and not (isinstance(g["half_width"], (int, float)) and g["half_width"] > 0):
                self.fail(("grid", "half_width"), "must be positive")
            if "cells" in g and not (isinstance(g["cells"], int) and g["cells"] >= 2):
                self.fail(("grid", "cells"), "must be an integer >= 2")
            if "boundary" in g and g["boundary"] not in ("periodic", "zero_extension"):
                self.fail(("grid", "boundary"), "must be periodic or zero_extension")
        s = self.sector
        if s:
            if "theta" in s and "theta_fraction" in s:
                self.fail(("sector",), "give either theta or theta_fraction")
            tf = s.get("theta_fraction")
            if tf is not None and not (isinstance(tf, (int, float)) and 0 < tf < 1):
                self.fail(("sector", "theta_fraction"), "must lie in (0, 1)")
        sw = self.sweep
        if "lambdas" in sw:
            spec = sw["lambdas"]
            if spec is None or spec == [] or spec == {}:
                self.fail(("sweep", "lambdas"), "lambda lattice must not be empty")
            if isinstance(spec, dict):
                dec = spec.get("decades")
                if not (isinstance(dec, list) and len(dec) == 2 and dec[0] <= dec[1]):
                    self.fail(("sweep", "lambdas", "decades"), "must be [low, high] with low <= high")
                args = spec.get("args", [0])
                if not args:
                    self.fail(("sweep", "lambdas", "args"), "must not be empty")
                for i, a in enumerate(args):
                    if not (isinstance(a, (int, float)) or a in ("theta", "-theta")):
                        self.fail(("sweep", "lambdas", "args", i), "must be a number, 'theta' or '-theta'")
            elif isinstance(spec, list):
                for i, pt in enumerate(spec):
                    if not (isinstance(pt, list) and len(pt) == 2 and pt[0] > 0):
                        self.fail(("sweep", "lambdas", i), "points are [magnitude, argument] with magnitude > 0")
            else:
                self.fail(("sweep", "lambdas"), "must be a mapping or a list of points")
        for key in ("radii", "p_list", "seeds"):
            if key in sw:
                vals = sw[key]
                if not isinstance(vals, list) or not vals:
                    self.fail(("sweep", key), "must be a non-empty list")
        if "radii" in sw and any(not (isinstance(r, (int, float)) and r > 0) for r in sw["radii"]):
            self.fail(("sweep", "radii"), "radii must be positive")
        if "seeds" in sw and any(not isinstance(x, int) for x in sw["seeds"]):
            self.fail(("sweep", "seeds"), "seeds must be integers")
        return self

    def lambda_points(self, theta):
        """Resolve the lambda lattice into complex numbers."""
        spec = self.sweep.get("lambdas")
        if spec is None:
            return None
        if isinstance(spec, list):
            return [complex(m * math.cos(_arg(a, theta)), m * math.sin(_arg(a, theta))) for m, a in spec]
        lo, hi = spec["decades"]
        per = spec.get("per_decade", 1)
        count = int(round((hi - lo) * per)) + 1
        mags = [10 ** (lo + (hi - lo) * k / max(count - 1, 1)) for k in range(count)] if count > 1 else [10.0**lo]
        args = [_arg(a, theta) for a in spec.get("args", [0])]
        return [complex(m * math.cos(a), m * math.sin(a)) for m in mags for a in args]


def _arg(a, theta):
    if a == "theta":
        return theta
    if a == "-theta":
        return -theta
    return float(a)


def parse_config(text, default_kind=None):
    """Parse YAML text into a validated :class:`ExperimentConfig`."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigurationError(f"{where}malformed configuration: {exc}") from None
    if data is None:
        data = {}
    lines = _line_index(node) if node is not None else {}
    if isinstance(data, dict) and "kind" not in data and default_kind is not None:
        data["kind"] = default_kind
    return ExperimentConfig(data, lines).validate()


def load_config(path, default_kind=None):
    return parse_config(Path(path).read_text(), default_kind=default_kind)
