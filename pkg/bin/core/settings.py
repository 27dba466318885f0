#!/usr/bin/env python3
import copy
import hashlib
import json
import logging
import os
import sys

import jsonschema
import yaml

from errors import ConfigError

REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "../.."))

CONFIG_DIR = os.path.join(REPO_ROOT, "config")
DEFAULT_CONFIG = os.path.join(CONFIG_DIR, "default_cell.yaml")
SWEEP_PRESETS = os.path.join(CONFIG_DIR, "sweeps.yaml")

CONFIG_SCHEMA = os.path.join(CONFIG_DIR, "config_schema.json")
INSTANCE_SCHEMA = os.path.join(CONFIG_DIR, "instance_schema.json")
ASSIGNMENT_SCHEMA = os.path.join(CONFIG_DIR, "assignment_schema.json")
SWEEP_SCHEMA = os.path.join(CONFIG_DIR, "sweeps_schema.json")

LOG_FORMAT = "[%(module)s] %(message)s"

log = logging.getLogger(__name__)


# ---------- logging ----------

def setup_logging(level: str | None = None) -> None:
    name = (level or os.getenv("HETCACHE_LOG_LEVEL") or "INFO").strip().upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        numeric = logging.INFO
    root = logging.getLogger()
    if not any(getattr(h, "_hetcache", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._hetcache = True
        root.addHandler(handler)
    root.setLevel(numeric)


# ---------- files ----------

def load_yaml(path: str):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None


def load_json(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def atomic_write_text(path: str, text: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    os.replace(tmp, path)


def atomic_write_yaml(path: str, obj) -> None:
    atomic_write_text(path, yaml.safe_dump(obj, sort_keys=False, default_flow_style=None))


def validate_document(doc, schema_path: str, what: str) -> None:
    schema = load_json(schema_path)
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid {what} at {where}: {exc.message}") from None


# ---------- config ----------

def resolve_config_path(explicit: str | None = None) -> str:
    candidate = (os.getenv("HETCACHE_CONFIG") or explicit or DEFAULT_CONFIG).strip()
    if not os.path.isabs(candidate):
        candidate = os.path.join(os.getcwd(), candidate)
    return os.path.realpath(candidate)


def check_config(cfg: dict) -> dict:
    validate_document(cfg, CONFIG_SCHEMA, "config")
    caps = (cfg["F"] * cfg["L"], cfg["C_m"], cfg["C_S"], cfg["C_U"])
    if not caps[0] > caps[1] > caps[2] > caps[3]:
        log.warning("cache capacities not strictly ordered F*L > C_m > C_S > C_U: %s", caps)
    if cfg["sbs_radius"] > cfg["cell_radius"]:
        raise ConfigError(f"sbs_radius {cfg['sbs_radius']} exceeds cell_radius {cfg['cell_radius']}")
    reuse = cfg.get("R")
    if reuse is not None and reuse * cfg["W"] < cfg["U"]:
        raise ConfigError(f"R={reuse} below ceil(U/W) for U={cfg['U']}, W={cfg['W']}")
    return cfg


def load_config(path: str | None = None, overrides: dict | None = None) -> dict:
    cfg_path = resolve_config_path(path)
    cfg = load_yaml(cfg_path)
    if not isinstance(cfg, dict):
        raise ConfigError(f"config root must be a mapping: {cfg_path}")
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return check_config(cfg)


def apply_overrides(cfg: dict, overrides: dict) -> dict:
    out = copy.deepcopy(cfg)
    for key, value in overrides.items():
        section, _, leaf = key.partition(".")
        if leaf:
            out.setdefault(section, {})[leaf] = value
        else:
            out[key] = value
    return out


def parse_assignments(items: list[str] | None) -> dict:
    """Turn `key=value` strings into a dict of YAML-typed values."""
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"expected key=value, got {item!r}")
        out[key.strip()] = yaml.safe_load(raw)
    return out


def section(cfg: dict, name: str) -> dict:
    return dict(cfg.get(name) or {})


def env_int(name: str, fallback: int) -> int:
    raw = (os.getenv(name) or "").strip()
    if not raw:
        return fallback
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring non-integer %s=%r", name, raw)
        return fallback


def worker_count(cfg: dict) -> int:
    return env_int("HETCACHE_WORKERS", int(cfg.get("workers") or 1))


# ---------- seeds ----------

def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}|{label}".encode("utf-8")).hexdigest()
    return int(digest[:8], 16)
