"""Flat key=value run configuration with typed schemas per subcommand.

Config files hold one ``key=value`` pair per line; ``#`` starts a comment.
Command-line overrides replace file values. Unknown keys are rejected so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple:
    return tuple(int(p) for p in text.split(",") if p.strip() != "")


def _float_list(text: str) -> tuple:
    return tuple(float(p) for p in text.split(",") if p.strip() != "")


def _str_list(text: str) -> tuple:
    return tuple(p.strip() for p in text.split(",") if p.strip() != "")


REQUIRED = object()

# key -> (converter, default); REQUIRED means the key must be supplied.
_MODEL_DATA = {
    "model_layers": (_int_list, (2, 8, 2)),
    "activation": (str, "gelu"),
    "loss_head": (str, "ce"),
    "data": (str, "synthetic"),
    "data_n": (int, 256),
    "data_dim": (int, 2),
    "data_classes": (int, 2),
    "data_margin": (float, 4.0),
    "data_seed": (int, 0),
    "test_n": (int, 256),
    "idx_images": (str, ""),
    "idx_labels": (str, ""),
    "idx_test_images": (str, ""),
    "idx_test_labels": (str, ""),
    "batch_size": (int, 32),
}

_COMMON = {
    "out": (str, "runs"),
    "seeds": (_int_list, (0,)),
}

_OPTIMIZER = {
    "method": (str, "sam"),
    "lr": (float, 0.1),
    "rho": (float, 0.05),
    "alpha": (float, 0.2),
    "p": (int, 100),
    "q": (int, 5),
    "momentum": (float, 0.9),
    "weight_decay": (float, 5e-5),
    "schedule": (str, "cosine"),
    "grad_floor": (float, 1e-12),
}

SCHEMAS = {
    "train": {**_COMMON, **_MODEL_DATA, **_OPTIMIZER,
              "sampler": (str, "shuffle-each-epoch"),
              "steps": (int, 500),
              "eval_every": (int, 50),
              "probe_q": (int, 20),
              "fair_compute": (_bool, False)},
    "simulate-sde": {**_COMMON, **_MODEL_DATA,
                     "processes": (_str_list, ("discrete-sam", "sde2", "sde3")),
                     "eta": (float, 0.01),
                     "rho": (float, 0.2),
                     "steps": (int, 2000),
                     "substeps": (int, 1),
                     "diffusion": (str, "exact"),
                     "eval_every": (int, 100),
                     "probe_q": (int, 20),
                     "aligned_q": (int, 50),
                     "aligned_check_gap": (_bool, True),
                     "grad_floor": (float, 1e-12)},
    "spectrum": {**_COMMON, **_MODEL_DATA, **_OPTIMIZER,
                 "sampler": (str, "shuffle-each-epoch"),
                 "steps": (int, 0),
                 "k": (int, 8),
                 "spectrum_q": (int, 100),
                 "m_trace": (int, 64)},
    "probe-moments": {**_COMMON,
                      "toy": (str, "quartic1d"),
                      "x0": (_float_list, ()),
                      "eta": (float, 0.01),
                      "rho_grid": (_float_list, (0.02, 0.04, 0.08, 0.16)),
                      "with_second": (_bool, True)},
    "probe-power": {**_COMMON, **_MODEL_DATA, **_OPTIMIZER,
                    "sampler": (str, "shuffle-each-epoch"),
                    "steps": (int, 0),
                    "q_grid": (_int_list, (1, 2, 3, 5, 8, 13, 21)),
                    "n_starts": (int, 5),
                    "q_ref": (int, 500)},
    "bound": {"out": (str, "runs"),
              "f_s": (float, REQUIRED),
              "lambda1": (float, REQUIRED),
              "x_norm": (float, REQUIRED),
              "d": (int, REQUIRED),
              "n": (int, REQUIRED),
              "sigma": (float, REQUIRED),
              "loss_bound": (float, REQUIRED),
              "third_bound": (float, REQUIRED),
              "delta": (float, REQUIRED)},
    "align-range": {"out": (str, "runs"),
                    "omega": (float, REQUIRED)},
}


def parse_config_file(path) -> dict:
    """Raw key=value pairs from a config file."""
    out = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def resolve(subcommand: str, raw: dict) -> dict:
    """Typed config with defaults expanded; rejects unknown keys."""
    schema = SCHEMAS[subcommand]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys for {subcommand}: {', '.join(unknown)}")
    resolved = {}
    for key, (conv, default) in schema.items():
        if key in raw:
            try:
                resolved[key] = conv(raw[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r} ({exc})") from exc
        elif default is REQUIRED:
            raise ConfigError(f"missing required config key: {key}")
        else:
            resolved[key] = default
    if "seeds" in resolved:
        seeds = resolved["seeds"]
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds must be distinct")
        if not seeds:
            raise ConfigError("at least one seed is required")
    return resolved


def render(config: dict) -> list:
    """Config as sorted key=value lines (the echo embedded in outputs)."""
    lines = []
    for key in sorted(config):
        value = config[key]
        if isinstance(value, tuple):
            text = ",".join(repr(v) if isinstance(v, float) else str(v)
                            for v in value)
        elif isinstance(value, float):
            text = repr(value)
        elif isinstance(value, bool):
            text = "true" if value else "false"
        else:
            text = str(value)
        lines.append(f"{key}={text}")
    return lines
