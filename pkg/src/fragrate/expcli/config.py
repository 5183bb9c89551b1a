"""Experiment configuration: INI text with a fixed schema.

Sections and keys (defaults in brackets):

``[experiment]``
    kind          experiment name, one of ``KINDS`` (required)
    seed          master seed [0]
    n_replicas    tree replicas [10000]
    n_paths       spine paths [1000000]
    max_fragments live-fragment cap per replica [10000000]
    backend       kernel backend: auto, compiled or python [auto]

``[model]``
    model         uniform-binary, beta-binary or table-binary [uniform-binary]
    theta         Beta exponent, beta-binary only
    table         ``u:density`` pairs, table-binary only
    truncation_eps
                  truncation of small jumps for infinite-activity models [1e-4]

``[parameters]``
    v             speed(s), comma separated
    a, b          confinement window (0 < a < 1 < b) [0.5, 2]
    ab_pairs      ``a:b`` pairs for sweeps
    b_ladder      candidate upper endpoints for the growth experiment
    t_checkpoints observation times, increasing
    fit_from, fit_to  time range for rate fits [all checkpoints]
    p             Esscher tilts / martingale exponents
    q             scale-function arguments
    mode          classical or confined (for ``simulate``) [confined]
    delta         scale-function mesh [1e-3]
    dq            confinement-rate scan step [0.01]
    v_cap         largest speed of the default rates grid [1.0]

``[tolerances]``
    slope         absolute tolerance on fitted slopes [0.03]
    n_se          standard-error multiple for mean tests [3]
    gap           allowed negative gap C(v) - (v - rho) [1e-6]
    rel           relative tolerance for limit statistics [0.1]
    flat_slope    largest slope accepted as "not growing" [0.05]
    zero          tolerance on values that must vanish [1e-7]
    laplace       relative tolerance of the Laplace-transform check [1e-3]
    margin        least v - rho accepted as supercritical [0.02]
    min_survivors advisory survivor count at the last checkpoint [30]

``[output]``
    dir           output directory [results]
    prefix        file-name prefix [""]
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import dataclass, field

from ..dislocation import model_from_config, parse_table
from ..errors import ConfigError, FragrateError

KINDS = ("rates-table", "scale-table", "presence-classical", "presence-confined", "growth", "martingale-mean",
         "second-moment", "lclt", "cv-vs-rho-sweep", "spine-decomposition")
BACKENDS = ("auto", "compiled", "python")


def _floats(text):
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _pairs(text):
    out = []
    for item in text.split(","):
        item = item.strip()
        if item:
            a, b = item.split(":")
            out.append((float(a), float(b)))
    return tuple(out)


_PARSE = {"int": int, "float": float, "str": str.strip, "floats": _floats, "pairs": _pairs}

SCHEMA = {
    "experiment": {"kind": ("str", None), "seed": ("int", 0), "n_replicas": ("int", 10_000),
                   "n_paths": ("int", 1_000_000), "max_fragments": ("int", 10_000_000), "backend": ("str", "auto")},
    "model": {"model": ("str", "uniform-binary"), "theta": ("float", None), "table": ("str", None),
              "truncation_eps": ("float", 1e-4)},
    "parameters": {"v": ("floats", ()), "a": ("float", 0.5), "b": ("float", 2.0), "ab_pairs": ("pairs", ()),
                   "b_ladder": ("floats", ()), "t_checkpoints": ("floats", ()), "fit_from": ("float", None),
                   "fit_to": ("float", None), "p": ("floats", ()), "q": ("floats", ()), "mode": ("str", "confined"),
                   "delta": ("float", 1e-3), "dq": ("float", 0.01), "v_cap": ("float", 1.0)},
    "tolerances": {"slope": ("float", 0.03), "n_se": ("float", 3.0), "gap": ("float", 1e-6), "rel": ("float", 0.1),
                   "flat_slope": ("float", 0.05), "zero": ("float", 1e-7), "laplace": ("float", 1e-3),
                   "margin": ("float", 0.02), "min_survivors": ("float", 30.0)},
    "output": {"dir": ("str", "results"), "prefix": ("str", "")},
}


def _fmt(kind, value):
    if kind == "floats":
        return ", ".join(repr(float(x)) for x in value)
    if kind == "pairs":
        return ", ".join(f"{a!r}:{b!r}" for a, b in value)
    if kind == "float":
        return repr(float(value))
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved configuration; ``sections`` maps section -> key -> value."""

    sections: dict = field(default_factory=dict)

    def __getitem__(self, section):
        return self.sections[section]

    @property
    def kind(self) -> str:
        return self.sections["experiment"]["kind"]

    @property
    def seed(self) -> int:
        return self.sections["experiment"]["seed"]

    @property
    def params(self) -> dict:
        return self.sections["parameters"]

    @property
    def tol(self) -> dict:
        return self.sections["tolerances"]

    def model(self):
        sec = dict(self.sections["model"])
        try:
            return model_from_config(sec)
        except (FragrateError, ValueError, KeyError) as exc:
            raise ConfigError(f"[model]: {exc}") from exc

    def replace(self, section, **kw) -> "ExperimentConfig":
        secs = {k: dict(v) for k, v in self.sections.items()}
        bad = set(kw) - set(SCHEMA[section])
        if bad:
            raise ConfigError(f"unknown key(s) in [{section}]: {sorted(bad)}")
        secs[section].update(kw)
        return validate(ExperimentConfig(secs))

    def to_text(self) -> str:
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            for key, (kind, _) in keys.items():
                val = self.sections[sec][key]
                if val is None:
                    continue
                lines.append(f"{key} = {_fmt(kind, val)}")
            lines.append("")
        return "\n".join(lines)

    def canonical(self) -> dict:
        return {sec: {k: (list(map(list, v)) if SCHEMA[sec][k][0] == "pairs" else
                          list(v) if isinstance(v, tuple) else v) for k, v in keys.items()}
                for sec, keys in self.sections.items()}

    @property
    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_config(text: str) -> ExperimentConfig:
    """Parse INI text; unknown sections or keys raise ConfigError."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    unknown = set(cp.sections()) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    secs = {}
    for sec, keys in SCHEMA.items():
        given = dict(cp[sec]) if cp.has_section(sec) else {}
        bad = set(given) - set(keys)
        if bad:
            raise ConfigError(f"unknown key(s) in [{sec}]: {sorted(bad)}")
        out = {}
        for key, (kind, default) in keys.items():
            if key in given and given[key].strip() != "":
                try:
                    out[key] = _PARSE[kind](given[key])
                except ValueError as exc:
                    raise ConfigError(f"[{sec}] {key}: cannot parse {given[key]!r} as {kind}") from exc
            else:
                out[key] = default
        secs[sec] = out
    return validate(ExperimentConfig(secs))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check ranges shared by all experiments."""
    ex, pr, tol = cfg["experiment"], cfg["parameters"], cfg["tolerances"]
    if ex["kind"] not in KINDS:
        raise ConfigError(f"[experiment] kind must be one of {KINDS}, got {ex['kind']!r}")
    if ex["backend"] not in BACKENDS:
        raise ConfigError(f"[experiment] backend must be one of {BACKENDS}")
    if ex["seed"] < 0:
        raise ConfigError("[experiment] seed must be non-negative")
    for key in ("n_replicas", "n_paths", "max_fragments"):
        if ex[key] < 0:
            raise ConfigError(f"[experiment] {key} must be non-negative")
    if cfg["model"]["table"] is not None:
        try:
            parse_table(cfg["model"]["table"])
        except ValueError as exc:
            raise ConfigError(f"[model] table: {exc}") from exc
    cfg.model()
    if not cfg["model"]["truncation_eps"] > 0:
        raise ConfigError("[model] truncation_eps must be positive")
    if any(not (v > 0 and math.isfinite(v)) for v in pr["v"]):
        raise ConfigError("[parameters] v must be positive and finite")
    pairs = list(pr["ab_pairs"]) + [(pr["a"], pr["b"])] + [(pr["a"], b) for b in pr["b_ladder"]]
    for a, b in pairs:
        if not 0 < a < 1 < b:
            raise ConfigError(f"[parameters] window ({a}, {b}) must satisfy 0 < a < 1 < b")
    ck = pr["t_checkpoints"]
    if any(t <= 0 for t in ck) or any(t2 <= t1 for t1, t2 in zip(ck, ck[1:])):
        raise ConfigError("[parameters] t_checkpoints must be positive and strictly increasing")
    if pr["mode"] not in ("classical", "confined"):
        raise ConfigError("[parameters] mode must be classical or confined")
    if not pr["delta"] > 0 or not pr["dq"] > 0:
        raise ConfigError("[parameters] delta and dq must be positive")
    if any(not t >= 0 for t in tol.values()):
        raise ConfigError("[tolerances] values must be non-negative")
    return cfg
