"""Experiment configuration: INI text with one section per experiment.

Top-level keys describe the experiment; ``gp.*``, ``ga.*``, ``dnc.*`` and
``bert.*`` keys override the engine and operator settings. Every key has a
default, so an empty section is a complete experiment. Example::

    [bert_non_analytic]
    paradigm = gp
    problem = non_analytic
    operator = bert
    repeats = 10
    gp.generations = 200
    bert.batch_size = 64
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import os
import typing
from dataclasses import dataclass, field

from ..dnc import DncConfig
from ..ga import GaConfig
from ..gp.evolve import GpConfig
from ..bert_mutation import BertMutConfig


class ConfigError(ValueError):
    pass


GP_OPERATORS = ("bert", "point", "subtree", "hoist", "mixed")
GA_OPERATORS = ("dnc", "uniform", "one_point", "adaptive", "multiparent")

# mutation probability of each GP operator when the config leaves it unset
GP_MUTATION_PROB = {"bert": 0.1, "subtree": 0.05, "hoist": 0.05, "point": 0.1, "mixed": 0.1}

OUTPUT_ENV = "DEEPEVO_OUT"


def default_output() -> str:
    return os.environ.get(OUTPUT_ENV, "deepevo-out")


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    paradigm: str = "gp"
    problem: str = "non_analytic"
    operator: str = "bert"
    repeats: int = 10
    seeds: tuple[int, ...] = ()
    cutoffs: tuple[float, ...] = ()
    output: str = ""
    # regression data
    test_fraction: float = 0.1
    n_rows: int = 5000
    noise: float = 0.0
    data_seed: int = 0
    target_column: int = -1
    const_range: tuple[float, float] = (-1.0, 1.0)
    # combinatorial instances
    colors: int = 0  # 0: max degree + 1 (or the bundled default)
    n_parents: int = 2  # multiparent and DNC crossover
    checkpoint: str = ""  # warm start the learned operator from this file
    gp: GpConfig = field(default_factory=GpConfig)
    ga: GaConfig = field(default_factory=GaConfig)
    dnc: DncConfig = field(default_factory=DncConfig)
    bert: BertMutConfig = field(default_factory=BertMutConfig)

    def __post_init__(self):
        if self.paradigm not in ("gp", "ga"):
            raise ConfigError(f"paradigm must be 'gp' or 'ga', got {self.paradigm!r}")
        allowed = GP_OPERATORS if self.paradigm == "gp" else GA_OPERATORS
        if self.operator not in allowed:
            raise ConfigError(f"operator {self.operator!r} is not a {self.paradigm.upper()} "
                              f"operator; choose from {', '.join(allowed)}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        self.seeds = tuple(int(s) for s in self.seeds) or tuple(range(self.repeats))
        if len(self.seeds) != self.repeats:
            raise ConfigError(f"{len(self.seeds)} seeds given for {self.repeats} repeats")
        self.cutoffs = tuple(float(c) for c in self.cutoffs)
        if any(b <= a for a, b in zip(self.cutoffs, self.cutoffs[1:])) or any(
                c <= 0 for c in self.cutoffs):
            raise ConfigError(f"cutoffs must be positive and ascending, got {self.cutoffs}")
        self.output = self.output or default_output()
        if not 0.0 <= self.test_fraction <= 1.0:
            raise ConfigError("test_fraction must lie in [0, 1]")

    def with_seed_offset(self, offset: int) -> "ExperimentSpec":
        return dataclasses.replace(self, seeds=tuple(s + offset for s in self.seeds))


_NESTED = {"gp": GpConfig, "ga": GaConfig, "dnc": DncConfig, "bert": BertMutConfig}


def _hints(cls) -> dict[str, typing.Any]:
    return typing.get_type_hints(cls)


def _convert(raw: str, hint, key: str):
    text = raw.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    try:
        if origin is typing.Union or (origin is not None and type(None) in args):
            inner = [a for a in args if a is not type(None)]
            if text.lower() in ("", "none"):
                return None
            return _convert(text, inner[0], key)
        if hint is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is str:
            return text
        if origin is tuple:
            items = [t for t in (p.strip() for p in text.split(",")) if t]
            if len(args) == 2 and args[1] is Ellipsis:
                return tuple(_convert(t, args[0], key) for t in items)
            if len(items) != len(args):
                raise ValueError(text)
            return tuple(_convert(t, a, key) for t, a in zip(items, args))
    except (ValueError, TypeError):
        raise ConfigError(f"{key} = {raw!r}: expected {_type_name(hint)}") from None
    raise ConfigError(f"{key}: unsupported setting type {hint}")


def _type_name(hint) -> str:
    if typing.get_origin(hint) is tuple:
        args = typing.get_args(hint)
        if len(args) == 2 and args[1] is Ellipsis:
            return f"comma-separated {_type_name(args[0])}s"
        return f"{len(args)} comma-separated values"
    if typing.get_origin(hint) is not None:
        return " or ".join(_type_name(a) for a in typing.get_args(hint) if a is not type(None))
    return getattr(hint, "__name__", str(hint))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def spec_from_section(name: str, items: dict[str, str]) -> ExperimentSpec:
    top_hints = {k: v for k, v in _hints(ExperimentSpec).items() if k not in _NESTED}
    top: dict[str, typing.Any] = {"name": name}
    nested: dict[str, dict[str, typing.Any]] = {k: {} for k in _NESTED}
    for key, raw in items.items():
        if "." in key:
            group, sub = key.split(".", 1)
            if group not in _NESTED:
                raise ConfigError(f"[{name}] unknown setting group {group!r} in {key!r}")
            hints = _hints(_NESTED[group])
            if sub not in hints or sub in ("seed", "direction"):
                raise ConfigError(f"[{name}] unknown setting {key!r}")
            nested[group][sub] = _convert(raw, hints[sub], key)
        else:
            if key not in top_hints or key == "name":
                raise ConfigError(f"[{name}] unknown setting {key!r}")
            top[key] = _convert(raw, top_hints[key], key)
    operator = top.get("operator", ExperimentSpec.operator)
    if "mutation_prob" not in nested["gp"] and operator in GP_MUTATION_PROB:
        nested["gp"]["mutation_prob"] = GP_MUTATION_PROB[operator]
    try:
        for group, cls in _NESTED.items():
            top[group] = cls(**nested[group])
        return ExperimentSpec(**top)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def parse_config(text: str) -> list[ExperimentSpec]:
    """All experiments in ``text``; an empty text yields one default experiment."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=None,
                                       default_section="\0defaults")
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    if not parser.sections():
        stripped = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith(("#", ";"))]
        if stripped:
            raise ConfigError("settings must live inside a [section]")
        return [spec_from_section("experiment", {})]
    return [spec_from_section(s, dict(parser.items(s))) for s in parser.sections()]


def load_config(path: str | os.PathLike) -> list[ExperimentSpec]:
    with open(path) as fh:
        return parse_config(fh.read())


def emit_config(specs: typing.Sequence[ExperimentSpec]) -> str:
    """INI text listing every setting of every spec; parses back to equal specs."""
    out = []
    for spec in specs:
        out.append(f"[{spec.name}]")
        for f in dataclasses.fields(ExperimentSpec):
            if f.name == "name":
                continue
            value = getattr(spec, f.name)
            if f.name in _NESTED:
                for sub in dataclasses.fields(value):
                    if sub.name in ("seed", "direction"):
                        continue
                    out.append(f"{f.name}.{sub.name} = {_format(getattr(value, sub.name))}")
            else:
                out.append(f"{f.name} = {_format(value)}")
        out.append("")
    return "\n".join(out)
