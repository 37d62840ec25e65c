"""File helpers shared by the command line and the campaign code."""
from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import __version__


def fmt(x) -> str:
    """17 significant digits, enough for an exact float round trip."""
    return f"{float(x):.17g}"


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path):
    if str(path) == "-":
        return json.loads(sys.stdin.read())
    return json.loads(Path(path).read_text())


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def load_config(path) -> dict:
    """TOML or JSON configuration file as a plain mapping."""
    p = Path(path)
    data = p.read_bytes()
    if p.suffix.lower() == ".json":
        return json.loads(data)
    return tomllib.loads(data.decode())


def config_hash(mapping) -> str:
    blob = json.dumps(mapping, sort_keys=True, default=_default)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_manifest(out_dir, command: str, config: dict, seed) -> dict:
    man = {"command": command, "config": config, "config_hash": config_hash(config), "seed": seed,
           "version": __version__}
    write_json(Path(out_dir) / "manifest.json", man)
    return man
