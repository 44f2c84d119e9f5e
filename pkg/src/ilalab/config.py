"""Flat ``key = value`` config files.

Keys are namespaced by subcommand (``attack.epsilon = 0.0314``); ``#`` starts
a comment. A file may hold keys for several subcommands, each subcommand only
reads its own namespace. Values stay strings here and are typed by the same
converters as the command-line flags.
"""

from __future__ import annotations

import re
from pathlib import Path

_KEY = re.compile(r"^[a-z][a-z0-9_-]*\.[a-z][a-z0-9_-]*$")


class ConfigError(ValueError):
    pass


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"{source}:{lineno}: bad key {key!r}; use 'namespace.name'")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path: str | Path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, str(p))


def section(cfg: dict[str, str], namespace: str) -> dict[str, str]:
    """Keys of one namespace with the prefix stripped and ``-`` folded to ``_``."""
    ns = namespace.replace("-", "_")
    out = {}
    for key, value in cfg.items():
        head, name = key.split(".", 1)
        if head.replace("-", "_") == ns:
            out[name.replace("-", "_")] = value
    return out


def dump_config(values: dict[str, object], namespace: str) -> str:
    lines = []
    for k in sorted(values):
        v = values[k]
        if v is None:
            continue
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{namespace}.{k} = {v}")
    return "\n".join(lines) + "\n"
