"""Flat ``key = value`` properties files mapped onto :class:`BridgeConfig`."""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

from .bridge import DEFAULT_SKIP, BridgeConfig
from .crypto import CryptoConfig, CryptoError
from .reassembly import ReassemblyConfig
from .segmentation import CutterConfig

log = logging.getLogger(__name__)

CIPHER = "application.datadiode.red.cipher."

# canonical key -> (section, field, type)
KEYS: dict[str, tuple[str, str, type]] = {
    "application.datadiode.cutter.size": ("cutter", "segment_size", int),
    "application.stream.cutter.redundancyFactor": ("cutter", "redundancy_factor", int),
    "application.datadiode.cutter.shuffleSeed": ("cutter", "shuffle_seed", int),
    "application.datadiode.udp.external.rate": ("bridge", "rate", float),
    "application.datadiode.udp.external.burst": ("bridge", "burst", int),
    "application.datadiode.udp.mtu": ("bridge", "mtu", int),
    "application.datadiode.udp.host": ("bridge", "host", str),
    "application.datadiode.udp.port": ("bridge", "port", int),
    "application.datadiode.black.udp.compress": ("bridge", "compress", bool),
    "application.datadiode.cipher.keydir": ("bridge", "key_dir", Path),
    "application.datadiode.black.mirror.interval": ("bridge", "poll_interval", float),
    "application.datadiode.black.mirror.skip": ("bridge", "skip_exchanges", frozenset),
    "application.datadiode.red.reassembly.staleAfter": ("reassembly", "stale_after", float),
    "application.datadiode.red.reassembly.sweepInterval": ("reassembly", "sweep_interval", float),
    "application.datadiode.red.reassembly.maxEntries": ("reassembly", "max_entries", int),
    CIPHER + "signature": ("crypto", "signature", str),
    CIPHER + "asymmetrical.algorithm": ("crypto", "asym_algorithm", str),
    CIPHER + "asymmetrical.cipher": ("crypto", "asym_cipher", str),
    CIPHER + "asymmetrical.keysize": ("crypto", "asym_keysize", int),
    CIPHER + "symmetrical.algorithm": ("crypto", "sym_algorithm", str),
    CIPHER + "symmetrical.cipher": ("crypto", "sym_cipher", str),
    CIPHER + "symmetrical.keysize": ("crypto", "sym_keysize", int),
}

ALIASES = {
    "cutter.size": "application.datadiode.cutter.size",
    "segment.size": "application.datadiode.cutter.size",
    "redundancy": "application.stream.cutter.redundancyFactor",
    "redundancyFactor": "application.stream.cutter.redundancyFactor",
    "rate": "application.datadiode.udp.external.rate",
    "mtu": "application.datadiode.udp.mtu",
    "compress": "application.datadiode.black.udp.compress",
    "keydir": "application.datadiode.cipher.keydir",
    "host": "application.datadiode.udp.host",
    "port": "application.datadiode.udp.port",
}

IGNORED = {CIPHER + "provider"}


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def _convert(raw: str, kind: type):
    if kind is bool:
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is frozenset:
        return frozenset(s.strip() for s in raw.split(",") if s.strip())
    return kind(raw)


def parse_properties(text: str) -> dict[str, tuple[str, int]]:
    """Return ``{key: (value, line_number)}``; later keys win."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", "!")):
            continue
        for sep in ("=", ":"):
            if sep in stripped:
                key, value = stripped.split(sep, 1)
                break
        else:
            raise ParseError(f"expected key = value, got {stripped!r}", lineno)
        out[key.strip()] = (value.strip(), lineno)
    return out


def config_from_text(text: str) -> BridgeConfig:
    sections: dict[str, dict] = {"cutter": {}, "bridge": {}, "crypto": {}, "reassembly": {}}
    lines: dict[str, int] = {}
    for key, (value, lineno) in parse_properties(text).items():
        key = ALIASES.get(key, key)
        if key in IGNORED:
            continue
        if key not in KEYS:
            log.warning("line %d: unknown key %s ignored", lineno, key)
            continue
        section, name, kind = KEYS[key]
        try:
            sections[section][name] = _convert(value, kind)
        except ValueError as exc:
            raise ParseError(f"{key}: {exc}", lineno) from exc
        lines[name] = lineno

    def build(factory, section):
        try:
            return factory(**sections[section])
        except ValueError as exc:
            line = next((lines[n] for n in sections[section] if n in lines), None)
            raise ParseError(str(exc), line) from exc

    cutter = build(CutterConfig, "cutter")
    reassembly = build(ReassemblyConfig, "reassembly")
    crypto = CryptoConfig(**sections["crypto"])
    try:
        crypto.validate()
    except CryptoError as exc:
        raise ParseError(str(exc)) from exc
    if sections["bridge"].get("rate") == 0:
        # 0 means unpaced
        sections["bridge"]["rate"] = None
    sections["bridge"].update(cutter=cutter, reassembly=reassembly, crypto=crypto)
    return build(BridgeConfig, "bridge")


def parse_config(path: str | Path) -> BridgeConfig:
    return config_from_text(Path(path).read_text())


def write_config(cfg: BridgeConfig) -> str:
    """Render ``cfg`` as a properties file that :func:`parse_config` reads back."""
    values = {
        "cutter": dataclasses.asdict(cfg.cutter),
        "reassembly": dataclasses.asdict(cfg.reassembly),
        "crypto": dataclasses.asdict(cfg.crypto),
        "bridge": {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)},
    }
    lines = []
    for key, (section, name, kind) in KEYS.items():
        value = values[section][name]
        if name == "rate" and value is None:
            value = 0
        if value is None:
            continue
        if kind is bool:
            text = "true" if value else "false"
        elif kind is frozenset:
            text = ",".join(sorted(value))
        elif kind is float:
            text = repr(float(value))
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


__all__ = ["ParseError", "parse_config", "config_from_text", "write_config", "DEFAULT_SKIP"]
