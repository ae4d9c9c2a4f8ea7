"""Plain key-value run configuration.

One ``key = value`` pair per line; ``#`` starts a comment. Values stay
strings until a typed getter converts them, so unknown keys can be carried
through and echoed into run manifests.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def read_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def get_float(cfg: dict, key: str, default=None) -> float:
    try:
        return float(cfg.get(key, default)) if key in cfg or default is not None else _missing(key)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def get_int(cfg: dict, key: str, default=None) -> int:
    try:
        return int(cfg.get(key, default)) if key in cfg or default is not None else _missing(key)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def get_str(cfg: dict, key: str, default=None) -> str:
    if key in cfg:
        return cfg[key]
    if default is None:
        _missing(key)
    return default


def get_list(cfg: dict, key: str, default=(), conv=float) -> tuple:
    if key not in cfg:
        return tuple(default)
    try:
        return tuple(conv(tok) for tok in cfg[key].replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def _missing(key: str):
    raise ConfigError(f"missing config key {key!r}")


def parse_mu_spec(spec: str) -> list:
    """Parameter-list specifiers for snapshot generation.

    * ``lin:a:b:k``  k equispaced values in [a, b]
    * ``mid:a:b:k``  midpoints of the k equal cells of [a, b]
    * ``list:v1,v2,...``  explicit values
    """
    import numpy as np

    kind, _, rest = spec.partition(":")
    try:
        if kind == "lin":
            a, b, k = rest.split(":")
            return list(np.linspace(float(a), float(b), int(k)))
        if kind == "mid":
            a, b, k = rest.split(":")
            a, b, k = float(a), float(b), int(k)
            return list(a + (np.arange(k) + 0.5) * (b - a) / k)
        if kind == "list":
            return [float(tok) for tok in rest.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"bad --mus spec {spec!r}: {exc}") from exc
    raise ConfigError(f"bad --mus spec {spec!r}; use lin:a:b:k, mid:a:b:k or list:...")
