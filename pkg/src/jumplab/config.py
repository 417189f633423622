"""INI experiment configs.

Keys live in fixed sections::

    [model]     model, x0, hmax
    [measure]   d, alpha, theta0, trunc, outer_law, outer_radius
    [run]       horizon, paths, seed, workers
    [tail]      eps_grid, ell, gamma
    [moments]   lam, trunc_sweep
    [charfn]    k_grid
    [void]      delta_time, void_eps
    [ibp]       test_k
    [girsanov]  epsilon, xi, xi_kind, limit_grid, limit_paths

Vectors are comma-separated.  Values missing from the file come from the
per-subcommand defaults in :data:`SUBCOMMAND_DEFAULTS` and then from
:class:`~jumplab.experiments.ExperimentConfig`.
"""

from __future__ import annotations

import configparser
import dataclasses
import difflib
import hashlib
import math
import re
from pathlib import Path

from .errors import ConfigError
from .experiments import ExperimentConfig

SECTIONS = {
    "model": ("model", "x0", "hmax"),
    "measure": ("d", "alpha", "theta0", "trunc", "outer_law", "outer_radius"),
    "run": ("horizon", "paths", "seed", "workers"),
    "tail": ("eps_grid", "ell", "gamma"),
    "moments": ("lam", "trunc_sweep"),
    "charfn": ("k_grid",),
    "void": ("delta_time", "void_eps"),
    "ibp": ("test_k",),
    "girsanov": ("epsilon", "xi", "xi_kind", "limit_grid", "limit_paths"),
}
KEY_SECTION = {k: s for s, keys in SECTIONS.items() for k in keys}

_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_VECTORS = {"x0", "eps_grid", "trunc_sweep", "k_grid", "test_k", "xi", "limit_grid"}
_INTS = {"d", "paths", "seed", "workers", "limit_paths"}
_STRINGS = {"model", "outer_law", "xi_kind"}

# physical constraints quoted in range errors
_RANGE_HINTS = {
    "alpha": "the stability index of the stable-like intensity must lie in (0, 2)",
    "trunc": "the small-jump truncation radius must lie in (0, 1)",
    "ell": "the admissible tail exponents form (0, 1/4)",
}

SUBCOMMAND_DEFAULTS = {
    "simulate": {"paths": 1000},
    "tail": {"theta0": 0.25, "paths": 200_000},
    "ibp": {"theta0": 0.3, "x0": (0.5, 0.25), "paths": 100_000},
    "girsanov": {"theta0": 0.25, "paths": 100_000},
    "conditions": {"paths": 1000},
    "charfn": {"theta0": 0.05, "paths": 20_000},
    "moments": {"theta0": 0.005, "paths": 100_000},
    "void": {"theta0": 1.0, "paths": 100_000},
}


def _line_numbers(text: str) -> dict:
    """(section, key) -> 1-based line number of its first assignment."""
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            continue
        m = re.match(r"\s*([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            out.setdefault((section, m.group(1).strip().lower()), no)
    return out


def _convert(key: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if key in _VECTORS:
            parts = [p for p in re.split(r"[,\s]+", raw) if p]
            if not parts:
                raise ValueError("empty vector")
            return tuple(float(p) for p in parts)
        if key in _INTS:
            v = float(raw)
            if v != int(v):
                raise ValueError("not an integer")
            return int(v)
        if key in _STRINGS:
            return raw
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {key} = {raw!r} ({exc})") from None


def _suggest(key: str) -> str:
    close = difflib.get_close_matches(key, list(KEY_SECTION), n=1, cutoff=0.6)
    return f"; did you mean {close[0]!r}?" if close else ""


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse INI text into a dict of known keys, with line-level diagnostics."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str.lower
    try:
        cp.read_string(text, source=source)
    except configparser.ParsingError as exc:
        raise ConfigError(f"{source}: malformed config: {exc}") from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        at = f"{source}:{line}" if line else source
        raise ConfigError(f"{at}: malformed config: {exc.message}") from None
    lines = _line_numbers(text)
    values = {}
    for section in cp.sections():
        sec = section.strip().lower()
        if sec not in SECTIONS:
            close = difflib.get_close_matches(sec, list(SECTIONS), n=1, cutoff=0.6)
            hint = f"; did you mean [{close[0]}]?" if close else ""
            raise ConfigError(f"{source}: unknown section [{section}]{hint}")
        for key, raw in cp.items(section):
            where = f"{source}:{lines.get((sec, key), '?')}"
            if key not in KEY_SECTION:
                raise ConfigError(f"{where}: unknown key {key!r} in [{sec}]{_suggest(key)}")
            if KEY_SECTION[key] != sec:
                raise ConfigError(f"{where}: key {key!r} belongs in [{KEY_SECTION[key]}], not [{sec}]")
            values[key] = (_convert(key, raw, where), where)
    return values


def build_config(values: dict | None = None, subcommand: str | None = None, **overrides
                 ) -> ExperimentConfig:
    """Merge defaults, parsed values and overrides, then validate.

    ``values`` maps key -> value or key -> (value, location) as returned by
    :func:`parse_config_text`.  Range errors name the location.
    """
    merged = dict(SUBCOMMAND_DEFAULTS.get(subcommand, {}))
    where = {}
    for k, v in (values or {}).items():
        if isinstance(v, tuple) and len(v) == 2 and isinstance(v[1], str) and ":" in v[1]:
            merged[k], where[k] = v
        else:
            merged[k] = v
    merged.update({k: v for k, v in overrides.items() if v is not None})
    for k in merged:
        if k not in _FIELDS:
            raise ConfigError(f"unknown key {k!r}{_suggest(k)}")
    if merged.get("model") == "isotropic" and "d" in merged:
        d = int(merged["d"])
        for k in ("x0", "xi", "test_k"):
            if k not in merged:
                merged[k] = (1.0,) + (0.0,) * (d - 1) if k != "x0" else (0.0,) * d
    try:
        return ExperimentConfig(**merged)
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0]
        loc = where.get(key)
        hint = _RANGE_HINTS.get(key)
        msg = str(exc) if not hint else f"{exc} ({hint})"
        raise ConfigError(f"{loc}: {msg}" if loc else msg) from None


def parse_config(path, subcommand: str | None = None, **overrides) -> ExperimentConfig:
    """Read, validate and complete the config file at ``path``.

    Raises
    ------
    ConfigError
        Missing or malformed file, unknown keys (with a suggestion) and out
        of range values, each naming the file and line.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return build_config(parse_config_text(p.read_text(), str(p)), subcommand, **overrides)


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


# keys that change how a run executes but not what it computes
EXECUTION_KEYS = ("workers",)


def canonical_text(cfg: ExperimentConfig) -> str:
    """Sorted ``section.key = value`` lines of every schema key that affects results."""
    lines = [f"{KEY_SECTION[k]}.{k} = {_fmt(getattr(cfg, k))}" for k in sorted(KEY_SECTION)
             if k not in EXECUTION_KEYS]
    return "\n".join(sorted(lines)) + "\n"


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()


def config_to_ini(cfg: ExperimentConfig) -> str:
    """Render a config back to INI text in schema order."""
    out = []
    for sec, keys in SECTIONS.items():
        out.append(f"[{sec}]")
        out.extend(f"{k} = {_fmt(getattr(cfg, k))}" for k in keys)
        out.append("")
    return "\n".join(out)
