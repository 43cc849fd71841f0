"""Experiment configuration: parsing, defaults and validation.

A config is a TOML or JSON document.  Top-level keys are ``experiment``,
``seed``, ``output_dir``, ``threads``, a ``model`` table and one table per
experiment kind.  Only the table of the selected experiment is kept after
validation; every missing key is filled from ``DEFAULTS``.
"""

import copy
import hashlib
import json
import os

from .errors import ConfigError

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

EXPERIMENTS = ("pressure", "spherical", "filtered", "strongconv", "schreier", "gromov",
               "appendixA", "consistency")

MODEL_DEFAULTS = {
    "kind": "constant",
    "kappa": 1.0,
    "epsilon": 0.05,
    "bump_radius": 1.4,
    "group_file": "",
}

DEFAULTS = {
    "pressure": {
        "T": 10.0,
        "qs": [0.0, 0.5, 1.0, 1.5, 2.0],
        "n_sub": 10,
        "weighted": True,
        "window_correction": False,
        "length_margin": 0.3,
        "closure_tol": 1e-9,
        "class_cap": 2_000_000,
        "write_orbits": True,
    },
    "appendixA": {
        "T": 10.0,
        "qs": [0.0, 0.5, 1.0, 1.5, 2.0],
        "n_sub": 10,
        "weighted": True,
        "window_correction": False,
        "length_margin": 0.3,
        "closure_tol": 1e-9,
        "class_cap": 2_000_000,
        "write_orbits": True,
    },
    "spherical": {
        "ts": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        "R": 0.0,
        "grid_h": 0.05,
        "n_directions": 32,
        "power_tol": 1e-4,
        "max_iter": 500,
        "lower_bound": True,
        "mc_samples": 10_000,
    },
    "filtered": {
        "h": 0.1,
        "ts": [4.605, 5.756, 6.908],
        "s_max": 3.0,
        "n_s": 31,
        "C": 1.0,
    },
    "strongconv": {
        "group": "free",
        "rank": 2,
        "genus": 2,
        "n": 500,
        "trials": 50,
        "word": "adjacency",
        "eps": 0.2,
        "ball_R": 12,
        "rep_tol": 1e-6,
    },
    "schreier": {
        "ns": [100, 200, 400, 800],
        "rank": 2,
        "max_radius": 6,
    },
    "gromov": {
        "n_triangles": 1000,
        "max_dist": 10.0,
        "divergence_r": [6.0, 10.0],
        "eta": 0.5,
    },
    "consistency": {
        "qs": [0.0, 1.0, 2.0],
        "T": 10.0,
        "radius": 12.0,
        "n_dir": 256,
        "tolerance": 0.1,
        "enforce": False,
    },
}

TOP_DEFAULTS = {"output_dir": "out", "threads": 1}

_POSITIVE = {"tol", "closure_tol", "power_tol", "rep_tol", "grid_h", "h", "eta", "tolerance",
             "kappa", "bump_radius", "T", "radius", "max_dist", "eps", "s_max"}
_NONEMPTY = {"qs", "ts", "ns", "divergence_r"}


class ExperimentConfig:
    """Fully defaulted, validated experiment configuration."""

    def __init__(self, experiment, seed, model, params, output_dir="out", threads=1):
        self.experiment = experiment
        self.seed = int(seed)
        self.model = model
        self.params = params
        self.output_dir = output_dir
        self.threads = int(threads)

    def as_dict(self):
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "threads": self.threads,
            "model": dict(self.model),
            self.experiment: dict(self.params),
        }

    def echo(self):
        """Canonical JSON text of the defaulted config."""
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    @property
    def hash(self):
        """First 16 hex digits of the sha256 of the config without run-only keys."""
        d = self.as_dict()
        del d["output_dir"], d["threads"]
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **kw):
        c = copy.deepcopy(self)
        for k, v in kw.items():
            setattr(c, k, v)
        return c


def parse_text(text):
    """TOML or JSON text to a dict; JSON is recognised by a leading brace."""
    s = text.lstrip()
    try:
        if s.startswith("{"):
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError("", f"unparseable config: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("", "config must be a table")
    return data


def _check_value(path, key, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, "expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, "expected an integer")
        if value < 0:
            raise ConfigError(path, "must be >= 0")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, "expected a number")
        value = float(value)
        if key in _POSITIVE and not value > 0:
            raise ConfigError(path, "must be > 0")
        if value < 0:
            raise ConfigError(path, "must be >= 0")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, "expected a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(path, "expected a list")
        if key in _NONEMPTY and not value:
            raise ConfigError(path, "grid must be nonempty")
        proto = default[0]
        return [_check_value(f"{path}[{i}]", key, v, proto) for i, v in enumerate(value)]
    raise ConfigError(path, "unsupported value")


def _fill(section, raw, defaults):
    if not isinstance(raw, dict):
        raise ConfigError(section, "expected a table")
    out = {}
    for k in raw:
        if k not in defaults:
            raise ConfigError(f"{section}.{k}", "unknown key")
    for k, d in defaults.items():
        out[k] = _check_value(f"{section}.{k}", k, raw[k], d) if k in raw else copy.deepcopy(d)
    return out


def _seed(raw, env):
    if "seed" in raw:
        s = raw["seed"]
    elif env.get("LAB_SEED", "").strip():
        try:
            s = int(env["LAB_SEED"])
        except ValueError:
            raise ConfigError("LAB_SEED", "not an integer") from None
    else:
        raise ConfigError("seed", "seed required")
    if isinstance(s, bool) or not isinstance(s, int):
        raise ConfigError("seed", "expected an integer")
    if not 0 <= s < 2 ** 64:
        raise ConfigError("seed", "must be a 64-bit unsigned integer")
    return s


def validate_config(raw, experiment=None, env=None):
    """Parse and validate a config.

    ``raw`` is TOML/JSON text or an already parsed dict.  ``experiment``
    (from the command line) must agree with the ``experiment`` key when both
    are given.  ``env`` defaults to ``os.environ`` and supplies LAB_SEED.
    """
    data = parse_text(raw) if isinstance(raw, str) else dict(raw)
    env = os.environ if env is None else env
    exp = data.get("experiment", experiment)
    if exp is None:
        raise ConfigError("experiment", "experiment kind required")
    if exp not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {exp!r}")
    if experiment is not None and exp != experiment:
        raise ConfigError("experiment", f"config is for {exp!r}, not {experiment!r}")
    allowed = {"experiment", "seed", "model", *TOP_DEFAULTS, *EXPERIMENTS}
    for k in data:
        if k not in allowed:
            raise ConfigError(k, "unknown key")
    seed = _seed(data, env)
    model = _fill("model", data.get("model", {}), MODEL_DEFAULTS)
    if model["kind"] not in ("constant", "perturbed"):
        raise ConfigError("model.kind", "must be 'constant' or 'perturbed'")
    # sections of other experiments are still checked for typos
    params = None
    for name in EXPERIMENTS:
        if name in data or name == exp:
            p = _fill(name, data.get(name, {}), DEFAULTS[name])
            if name == exp:
                params = p
    top = {k: data.get(k, v) for k, v in TOP_DEFAULTS.items()}
    if not isinstance(top["output_dir"], str):
        raise ConfigError("output_dir", "expected a string")
    t = top["threads"]
    if isinstance(t, bool) or not isinstance(t, int) or t < 1:
        raise ConfigError("threads", "must be a positive integer")
    _cross_checks(exp, params)
    return ExperimentConfig(exp, seed, model, params, top["output_dir"], t)


def _cross_checks(exp, p):
    if exp == "strongconv":
        if p["group"] not in ("free", "surface"):
            raise ConfigError("strongconv.group", "must be 'free' or 'surface'")
        if p["word"] not in ("adjacency",):
            raise ConfigError("strongconv.word", "only 'adjacency' is supported")
        if p["n"] < 2 or p["trials"] < 1:
            raise ConfigError("strongconv", "need n >= 2 and trials >= 1")
    if exp in ("pressure", "appendixA"):
        if p["n_sub"] < 2:
            raise ConfigError(f"{exp}.n_sub", "must be >= 2")
        if p["window_correction"] and not p["weighted"]:
            raise ConfigError(f"{exp}.window_correction", "needs weighted = true")
    if exp == "appendixA":
        for q in (1.0, 1.5, 2.0):
            if q not in p["qs"]:
                raise ConfigError("appendixA.qs", "must contain 1, 1.5 and 2")
        if len(p["qs"]) < 4:
            raise ConfigError("appendixA.qs", "need at least four q values")
    if exp == "filtered" and not p["h"] < 1:
        raise ConfigError("filtered.h", "must be < 1")


def load_config(path, experiment=None, env=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from None
    return validate_config(text, experiment, env)
