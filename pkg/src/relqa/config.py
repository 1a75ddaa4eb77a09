"""Run configuration: one JSON file validated up front, unknown keys rejected.

Relative paths inside the file are resolved against the file's own directory
so a config can travel with its fixtures. Secrets never live here; the API key
comes from the environment variable named by gateway.api_key_env.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .gateway import DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE, GatewayConfig, GatewayError

_GATEWAY_KEYS = {
    "backend",
    "endpoint_url",
    "api_key_env",
    "max_concurrency",
    "max_attempts",
    "backoff_base",
    "cache_dir",
    "mock_script",
    "usage_log",
    "timeout",
}
_GATEWAY_PATH_KEYS = ("cache_dir", "mock_script", "usage_log")


@dataclass(frozen=True)
class RunConfig:
    manifest: str = ""
    run_seed: int = 0
    overlap_threshold: float = 0.5
    template_kinds: tuple[str, ...] = ("yesno", "wh")
    output_dir: str = "out"
    model_name: str = "gpt-4"
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    n_per_subset: int = 500
    n_positive: int = 0
    bench_rounds: int = 1
    companion_file: str = ""
    eval_system_prompt: str = ""
    image_ref_template: str = "{question}"
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    config_hash: str = ""

    def __post_init__(self):
        if self.overlap_threshold < 0 or self.overlap_threshold > 1:
            raise ConfigError(
                f"overlap_threshold must be within [0, 1], got {self.overlap_threshold}"
            )
        if self.n_per_subset <= 0:
            raise ConfigError("n_per_subset must be positive")
        if self.bench_rounds <= 0:
            raise ConfigError("bench_rounds must be positive")

    @property
    def effective_n_positive(self) -> int:
        return self.n_positive if self.n_positive > 0 else 3 * self.n_per_subset


def _resolve(base: Path, value: str) -> str:
    if not value:
        return value
    return str((base / value).resolve()) if not Path(value).is_absolute() else value


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a config file; overrides (already-typed values from
    CLI flags) are applied before validation and participate in the hash."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")

    known = {f.name for f in fields(RunConfig)} - {"config_hash"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config key: {sorted(unknown)[0]!r}")
    gw_raw = raw.get("gateway", {})
    if not isinstance(gw_raw, dict):
        raise ConfigError("gateway must be a JSON object")
    gw_unknown = set(gw_raw) - _GATEWAY_KEYS
    if gw_unknown:
        raise ConfigError(f"unknown config key: gateway.{sorted(gw_unknown)[0]}")

    merged = dict(raw)
    if overrides:
        for key, value in overrides.items():
            if value is None:
                continue
            if key.startswith("gateway."):
                merged.setdefault("gateway", {})
                merged["gateway"] = dict(merged["gateway"])
                merged["gateway"][key.split(".", 1)[1]] = value
            else:
                merged[key] = value

    base = path.resolve().parent
    for key in ("manifest", "output_dir", "companion_file"):
        if key in merged and merged[key]:
            merged[key] = _resolve(base, str(merged[key]))
    gw_merged = dict(merged.get("gateway", {}))
    for key in _GATEWAY_PATH_KEYS:
        if key in gw_merged and gw_merged[key]:
            gw_merged[key] = _resolve(base, str(gw_merged[key]))

    digest_blob = json.dumps(
        {**merged, "gateway": gw_merged}, sort_keys=True, ensure_ascii=False
    ).encode("utf-8")
    config_hash = hashlib.sha256(digest_blob).hexdigest()[:16]

    if "template_kinds" in merged:
        kinds = merged["template_kinds"]
        if not isinstance(kinds, list) or not all(isinstance(k, str) for k in kinds):
            raise ConfigError("template_kinds must be a list of strings")
        merged["template_kinds"] = tuple(kinds)

    try:
        gateway = GatewayConfig(**gw_merged)
    except GatewayError as exc:
        raise ConfigError(str(exc)) from exc
    except TypeError as exc:
        raise ConfigError(f"bad gateway config: {exc}") from exc

    merged.pop("gateway", None)
    try:
        return RunConfig(**merged, gateway=gateway, config_hash=config_hash)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
