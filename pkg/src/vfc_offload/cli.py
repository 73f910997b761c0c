"""Command-line entry point: ``vfc-offload --config run.cfg --experiment delay``.

Config files are flat ``key = value`` lines; ``#`` starts a comment. Keys are
the field names of :class:`SystemConfig`, :class:`DcfParams` and
:class:`ExperimentSpec`. List values (``k_range``, ``mu_t_list``) take commas
or an inclusive ``lo-hi`` range.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import typing
from pathlib import Path

from .dcf import DcfParams, FixedPointError
from .experiments import KINDS, ExperimentSpec, run
from .model import ModelError, SystemConfig
from .solver import ConvergenceError, UniformizationError

log = logging.getLogger("vfc_offload")


class ConfigError(ValueError):
    pass


def _field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


_DCF_KEYS = _field_types(DcfParams)
_SYSTEM_KEYS = {k: t for k, t in _field_types(SystemConfig).items() if k not in ("dcf", "k_max", "mu_t")}
_SPEC_KEYS = {k: t for k, t in _field_types(ExperimentSpec).items() if k != "base"}
_MOVED = {"k_max": "k_range", "mu_t": "mu_t_list"}


def _int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if "-" in text and "," not in text:
        lo, hi = (int(t) for t in text.split("-", 1))
        if hi < lo:
            raise ValueError(f"empty range {text!r}")
        return tuple(range(lo, hi + 1))
    return tuple(int(t) for t in text.split(",") if t.strip())


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _convert(key: str, raw: str, typ):
    if key == "k_range":
        return _int_list(raw)
    if key == "mu_t_list":
        return _float_list(raw)
    if typ is int or typ == (int | None):
        return int(raw)
    if typ is float:
        return float(raw)
    if typ is Path:
        return Path(raw)
    return raw


def parse_config(text: str, source: str = "<config>") -> dict[str, dict]:
    """Split config text into ``{"spec": ..., "system": ..., "dcf": ...}`` keyword dicts."""
    out = {"spec": {}, "system": {}, "dcf": {}}
    seen = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        where = f"{source}:{lineno}"
        if "=" not in body:
            raise ConfigError(f"{where}: expected 'key = value', got {body!r}")
        key, raw = (t.strip() for t in body.split("=", 1))
        if not raw:
            raise ConfigError(f"{where}: missing value for {key!r}")
        if key in _MOVED:
            raise ConfigError(f"{where}: {key!r} is swept by the experiment; set {_MOVED[key]!r} instead")
        if key in seen:
            raise ConfigError(f"{where}: {key!r} already set on line {seen[key]}")
        for group, keys in (("spec", _SPEC_KEYS), ("system", _SYSTEM_KEYS), ("dcf", _DCF_KEYS)):
            if key in keys:
                try:
                    out[group][key] = _convert(key, raw, keys[key])
                except ValueError as exc:
                    raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
                break
        else:
            raise ConfigError(f"{where}: unknown key {key!r}")
        seen[key] = lineno
    return out


def build_spec(parsed: dict[str, dict], source: str = "<config>", **overrides) -> ExperimentSpec:
    """Assemble and validate an :class:`ExperimentSpec`; CLI overrides win over the file."""
    spec_kw = dict(parsed["spec"])
    spec_kw.update({k: v for k, v in overrides.items() if v is not None})
    spec_kw.setdefault("kind", "all")
    try:
        dcf = DcfParams(**parsed["dcf"])
        base = SystemConfig(dcf=dcf, **parsed["system"])
        return ExperimentSpec(base=base, **spec_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_spec(path: Path, **overrides) -> ExperimentSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return build_spec(parse_config(text, str(path)), str(path), **overrides)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vfc-offload", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--experiment", help=f"one of {', '.join(KINDS)}, a comma list, or 'all'")
    p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="simulation seed (overrides seed)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 1
    overrides = dict(kind=args.experiment, output_dir=args.out, seed=args.seed)
    try:
        if args.config is None:
            spec = build_spec({"spec": {}, "system": {}, "dcf": {}}, "<defaults>", **overrides)
        else:
            spec = load_spec(args.config, **overrides)
        paths = run(spec)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, UniformizationError, FixedPointError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
