"""Experiment configuration: INI sections per subcommand, parsed into dataclasses."""

from __future__ import annotations

import configparser
import re
from dataclasses import MISSING, asdict, dataclass, field, fields

from .errors import ParameterError
from .percolation import Model


class ConfigError(ParameterError):
    pass


def parse_seeds(text: str) -> list:
    """``"0-4,10,12-13"`` -> [0, 1, 2, 3, 4, 10, 12, 13]."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        m = re.fullmatch(r"(\d+)\s*-\s*(\d+)", part)
        if m:
            a, b = int(m.group(1)), int(m.group(2))
            if b < a:
                raise ValueError(f"empty seed range {part!r}")
            out.extend(range(a, b + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError("no seeds")
    return out


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _model(text):
    return str(Model.parse(str(text).strip()))


def _prob(text):
    p = float(text)
    if not 0 <= p <= 1:
        raise ValueError("probability outside [0, 1]")
    return p


def _probs(text):
    return [_prob(x) for x in str(text).split(",") if x.strip()]


def _pos_int(text):
    v = int(text)
    if v < 1:
        raise ValueError("must be a positive integer")
    return v


def _opt_float(text):
    return None if str(text).strip().lower() in ("", "none", "auto") else float(text)


PARSERS = {"int": int, "pos": _pos_int, "float": float, "prob": _prob, "probs": _probs,
           "floats": _floats, "ints": _ints, "seeds": parse_seeds, "model": _model,
           "str": str, "optfloat": _opt_float}


def opt(default, kind: str, help: str = ""):
    return field(default=default, metadata={"kind": kind, "help": help})


@dataclass
class GlobalCfg:
    seed: int = opt(0, "int", "master seed")
    workers: int = opt(1, "pos", "worker processes")
    out: str = opt("out", "str", "output directory")


@dataclass
class GenCfg:
    model: str = opt("bond2d", "model", "site2d or bond<d>d")
    p: float = opt(0.6, "prob", "open probability")
    m: int = opt(20, "pos", "stored half-side")
    seeds: list = opt("0", "seeds", "configuration seeds")


@dataclass
class ClusterCfg:
    model: str = opt("site2d", "model")
    p: float = opt(0.7, "prob")
    ns: list = opt("10,20,40", "ints", "box half-sides")
    rho: float = opt(2.0, "float", "inner ratio for chemical distance")
    seeds: list = opt("0-9", "seeds")


@dataclass
class IsoCfg:
    model: str = opt("bond2d", "model")
    p: float = opt(0.8, "prob")
    ns: list = opt("3,4", "ints")
    eps: float = opt("auto", "optfloat", "exponent; auto uses eps(n)")
    alpha: float = opt(0.5, "float")
    seeds: list = opt("0-9", "seeds")


@dataclass
class SpectrumCfg:
    model: str = opt("site2d", "model")
    p: float = opt(0.7, "prob")
    ns: list = opt("8,16", "ints")
    seeds: list = opt("0-4", "seeds")


@dataclass
class KernelCfg:
    model: str = opt("bond2d", "model")
    p: float = opt(0.8, "prob")
    n: int = opt(4, "pos")
    times: list = opt("1,2,4,8,16", "floats")
    seeds: list = opt("0-4", "seeds")


@dataclass
class WalkCfg:
    model: str = opt("site2d", "model")
    p: float = opt(0.7, "prob")
    n: int = opt(20, "pos")
    mode: str = opt("reflected", "str", "reflected or free")
    times: list = opt("10,20,40,80,160,320", "floats")
    walkers: int = opt(20000, "pos")
    window: list = opt("", "floats", "fit window lo,hi")
    seeds: list = opt("0-2", "seeds")


@dataclass
class ChannelsCfg:
    p: float = opt(0.8, "prob")
    sizes: list = opt("16,32", "ints")
    seeds: list = opt("0-9", "seeds")


@dataclass
class RenormCfg:
    ps: list = opt("0.7", "probs")
    Ns: list = opt("4,8", "ints")
    seeds: list = opt("0-19", "seeds")
    field_N: int = opt(4, "pos", "block scale of the emitted field")
    field_R: int = opt(2, "int", "index half-extent of the emitted field")


@dataclass
class VerifyCfg:
    models: list = opt("site2d,bond2d", "str", "comma separated models")
    ps: list = opt("0.6,0.8", "probs")
    n: int = opt(2, "pos", "box half-side for exact checks")
    k_max: int = opt(10, "pos", "Carne-Varopoulos horizon")
    exit_ns: list = opt("4,6", "ints")
    exit_times: list = opt("1,2,5,10", "floats")
    seeds: list = opt("0-3", "seeds")
    inputs: str = opt("", "str", "optional PERC1 files, comma separated")


@dataclass
class ReportCfg:
    inputs: str = opt("", "str", "directory with CSVs (default: out)")


SECTIONS = {"global": GlobalCfg, "gen": GenCfg, "cluster": ClusterCfg, "iso": IsoCfg,
            "spectrum": SpectrumCfg, "kernel": KernelCfg, "walk": WalkCfg,
            "channels": ChannelsCfg, "renorm": RenormCfg, "verify": VerifyCfg,
            "report": ReportCfg}


def _key_lines(path) -> dict:
    lines, section = {}, None
    with open(path) as fh:
        for no, raw in enumerate(fh, 1):
            s = raw.strip()
            if s.startswith("[") and s.endswith("]"):
                section = s[1:-1].strip()
            elif "=" in s and section and not s.startswith(("#", ";")):
                lines[(section, s.split("=", 1)[0].strip())] = no
    return lines


def _convert(cls, values: dict, where) -> object:
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for f in fields(cls):
        raw = values.get(f.name, f.default)
        try:
            kwargs[f.name] = PARSERS[f.metadata["kind"]](raw)
        except (ValueError, TypeError, ParameterError) as exc:
            raise ConfigError(f"{where(f.name)}: bad value {raw!r} for {f.name}: {exc}") from None
    for key in values:
        if key not in known:
            raise ConfigError(f"{where(key)}: unknown key {key!r}")
    return cls(**kwargs)


def load_config(path=None, command: str | None = None, overrides: dict | None = None):
    """Return (GlobalCfg, command config) from an INI file plus flag overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    lines = {}
    if path:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        lines = _key_lines(path)
        for sec in parser.sections():
            if sec not in SECTIONS:
                raise ConfigError(f"{path}: unknown section [{sec}]")

    def section(name):
        vals = dict(parser[name]) if parser.has_section(name) else {}
        vals.update({k: v for k, v in (overrides or {}).get(name, {}).items() if v is not None})

        def where(key):
            no = lines.get((name, key))
            return f"{path}:{no} [{name}]" if no else f"[{name}]"
        return _convert(SECTIONS[name], vals, where)

    glob = section("global")
    cmd = section(command) if command else None
    return glob, cmd


def as_record(cfg) -> dict:
    return asdict(cfg)
