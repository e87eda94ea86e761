"""Self-describing CSV outputs and run manifests."""
from __future__ import annotations

import hashlib
import json
import os
from datetime import datetime, timezone

from . import __version__


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def header_lines(subcommand, config, seed, extra=None):
    lines = [
        f"# tool: sbidma {__version__}",
        f"# subcommand: {subcommand}",
        f"# seed: {seed}",
        f"# config: {json.dumps(config, sort_keys=True)}",
        f"# config_digest: {config_digest(config)}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"# {key}: {json.dumps(value, sort_keys=True) if not isinstance(value, str) else value}")
    return lines


def _fmt(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, header, columns, rows):
    """Write ``#`` header lines, a column line and rows; return the sha256."""
    text = "\n".join(list(header) + [",".join(columns)] + [",".join(_fmt(v) for v in row) for row in rows]) + "\n"
    return write_text(path, text)


def write_text(path, text):
    data = text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def write_json(path, obj):
    return write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_csv(path):
    """Parse a file written by :func:`write_csv` into ``(meta, columns, rows)``."""
    meta, body = {}, []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                key, _, value = line[2:].partition(": ")
                meta[key] = value
            elif line:
                body.append(line.split(","))
    return meta, body[0], body[1:]


class RunManifest:
    def __init__(self, subcommand, config, seed, out_dir):
        self.subcommand = subcommand
        self.config = config
        self.seed = seed
        self.out_dir = out_dir
        self.started = datetime.now(timezone.utc).isoformat()
        self.outputs = {}

    def add(self, name, digest):
        self.outputs[name] = digest

    def write(self):
        doc = {
            "tool": "sbidma",
            "version": __version__,
            "subcommand": self.subcommand,
            "seed": self.seed,
            "config": self.config,
            "config_digest": config_digest(self.config),
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "outputs": dict(sorted(self.outputs.items())),
        }
        return write_json(os.path.join(self.out_dir, "manifest.json"), doc)
