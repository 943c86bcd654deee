"""Scenario configuration: TOML in, validated dataclasses out.

Errors carry the dotted path of the offending field, e.g.
``miners[1].hashrate: must be > 0``. The full grammar is in ``docs/CONFIG.md``.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DEFAULT_TARGET = "0x" + format(2**244, "064x")

MINER_STRATEGIES = ("honest", "lazy", "pool_member")
STORER_STRATEGIES = ("honest", "never", "late_reveal", "publish_then_hide")
MODES = ("availability", "rate")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class MinerGroup:
    count: int = 1
    strategy: str = "honest"
    hashrate: float = 1.0  # per-miner weight, normalised over the roster
    join_epoch: int = 0
    blind_to: list = field(default_factory=list)
    pool: Optional[str] = None
    name: Optional[str] = None  # node id prefix


@dataclass
class PoolConfig:
    name: str = "pool"
    members_choose_reports: bool = False
    operator_blind_to: list = field(default_factory=list)


@dataclass
class StorerConfig:
    label: str = "d"
    size: int = 256
    duration: int = 10
    fee: int = 100
    register_epoch: int = 1
    strategy: str = "honest"
    reveal_offset: int = 0
    hide_epoch: Optional[int] = None
    every: int = 0  # >0: repeat the registration every N epochs
    repeat: int = 1


@dataclass
class AdversaryAction:
    action: str = "withhold"
    datum: str = ""
    epoch: int = 0


@dataclass
class RateConfig:
    start_rate: str = "675.0000"
    volatility: str = "1.0000"  # max random-walk step per epoch
    noise: str = "5.0000"  # per-node observation noise, uniform in +-noise
    width: str = "20.0000"
    scale: str = "20.0000"
    base_reward: int = 1000
    series: list = field(default_factory=list)  # explicit per-epoch rates (strings)
    widths: list = field(default_factory=list)  # for sweeps


@dataclass
class OutputConfig:
    dir: str = "out"
    format: str = "json"


@dataclass
class ScenarioConfig:
    seed: int = 0
    epochs: int = 200
    lag_c: int = 3
    epsilon: float = 0.05
    target: str = DEFAULT_TARGET
    target_overrides: dict = field(default_factory=dict)
    block_reward: int = 50
    mode: str = "availability"
    relay_nodes: int = 70
    nonces_per_round: int = 1024
    max_rounds: int = 10000
    upload_failure_rate: float = 0.0
    hash: str = "sha256"
    consistency_violation: list = field(default_factory=list)
    miners: list = field(default_factory=list)
    pools: list = field(default_factory=list)
    storers: list = field(default_factory=list)
    adversary: list = field(default_factory=list)
    rate: RateConfig = field(default_factory=RateConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    sweep: dict = field(default_factory=dict)

    def replace(self, **changes) -> "ScenarioConfig":
        new = copy.deepcopy(self)
        for k, v in changes.items():
            if not hasattr(new, k):
                raise AttributeError(k)
            setattr(new, k, v)
        return new

    def to_dict(self) -> dict:
        return asdict(self)

    def expanded_storers(self) -> list[StorerConfig]:
        """Repeat-expanded storer list; repeats get labels ``label.0``, ``label.1``..."""
        out = []
        for s in self.storers:
            if s.every > 0 and s.repeat > 1:
                for k in range(s.repeat):
                    e = copy.deepcopy(s)
                    e.label = f"{s.label}.{k}"
                    e.register_epoch = s.register_epoch + k * s.every
                    if s.hide_epoch is not None:
                        e.hide_epoch = s.hide_epoch + k * s.every
                    e.every, e.repeat = 0, 1
                    out.append(e)
            else:
                out.append(s)
        return out


_SUB = {
    "miners": MinerGroup,
    "pools": PoolConfig,
    "storers": StorerConfig,
    "adversary": AdversaryAction,
}


def _build(cls, data: dict, path: str, problems: list):
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for k, v in data.items():
        if k not in known:
            problems.append(f"{path}{k}: unknown field")
            continue
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        problems.append(f"{path.rstrip('.') or '<root>'}: {exc}")
        return cls()


def config_from_dict(data: dict) -> ScenarioConfig:
    problems: list[str] = []
    data = dict(data)
    nested = {}
    for key, cls in _SUB.items():
        raw = data.pop(key, [])
        if not isinstance(raw, list):
            problems.append(f"{key}: must be an array of tables")
            raw = []
        nested[key] = [_build(cls, dict(item), f"{key}[{i}].", problems) for i, item in enumerate(raw)]
    rate = _build(RateConfig, dict(data.pop("rate", {})), "rate.", problems)
    output = _build(OutputConfig, dict(data.pop("output", {})), "output.", problems)
    if "target_overrides" in data:
        data["target_overrides"] = {int(k): v for k, v in data["target_overrides"].items()}
    cfg = _build(ScenarioConfig, data, "", problems)
    for key, items in nested.items():
        setattr(cfg, key, items)
    cfg.rate, cfg.output = rate, output
    problems.extend(validate(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"<file>: {exc}"]) from exc
    return config_from_dict(data)


def _hex_target(text, path, problems):
    try:
        v = int(str(text), 16)
    except ValueError:
        problems.append(f"{path}: not a hex integer")
        return
    if not 0 < v < 2**256:
        problems.append(f"{path}: must be in (0, 2**256)")


def _fixed(text, path, problems, positive=False):
    from .rate import parse_rate

    try:
        v = parse_rate(str(text))
    except ValueError:
        problems.append(f"{path}: not a decimal rate")
        return
    if positive and v <= 0:
        problems.append(f"{path}: must be > 0")


def validate(cfg: ScenarioConfig) -> list[str]:
    p: list[str] = []
    if not 0 <= cfg.seed < 2**64:
        p.append("seed: must be a 64-bit unsigned integer")
    if cfg.lag_c < 1:
        p.append("lag_c: must be >= 1")
    if cfg.epochs <= cfg.lag_c:
        p.append("epochs: must exceed lag_c")
    if not 0 <= cfg.epsilon < 0.5:
        p.append("epsilon: must lie in [0, 0.5)")
    if not 0 <= cfg.upload_failure_rate <= 1:
        p.append("upload_failure_rate: must lie in [0, 1]")
    if cfg.block_reward < 0 or cfg.block_reward >= 2**64:
        p.append("block_reward: must be a u64 token amount")
    if cfg.mode not in MODES:
        p.append(f"mode: must be one of {', '.join(MODES)}")
    if cfg.relay_nodes < 0:
        p.append("relay_nodes: must be >= 0")
    if cfg.nonces_per_round < 1:
        p.append("nonces_per_round: must be >= 1")
    if cfg.max_rounds < 1:
        p.append("max_rounds: must be >= 1")
    _hex_target(cfg.target, "target", p)
    for k, v in cfg.target_overrides.items():
        _hex_target(v, f"target_overrides.{k}", p)
    if cfg.output.format not in ("json", "csv"):
        p.append("output.format: must be json or csv")

    if not cfg.miners:
        p.append("miners: roster must not be empty")
    elif not any(m.join_epoch == 0 for m in cfg.miners):
        p.append("miners: at least one group must have join_epoch = 0")
    pools = {pc.name for pc in cfg.pools}
    if len(pools) != len(cfg.pools):
        p.append("pools: duplicate pool names")
    labels = [s.label for s in cfg.expanded_storers()]
    dupes = sorted({x for x in labels if labels.count(x) > 1})
    if dupes:
        p.append(f"storers: duplicate datum labels {dupes}")
    known = set(labels)
    for i, m in enumerate(cfg.miners):
        path = f"miners[{i}]"
        if m.count < 1:
            p.append(f"{path}.count: must be >= 1")
        if not m.hashrate > 0:
            p.append(f"{path}.hashrate: must be > 0")
        if m.strategy not in MINER_STRATEGIES:
            p.append(f"{path}.strategy: must be one of {', '.join(MINER_STRATEGIES)}")
        if m.strategy == "pool_member" and m.pool not in pools:
            p.append(f"{path}.pool: unknown pool {m.pool!r}")
        if m.join_epoch < 0 or m.join_epoch >= cfg.epochs:
            p.append(f"{path}.join_epoch: must lie in [0, epochs)")
        for lab in m.blind_to:
            if lab not in known:
                p.append(f"{path}.blind_to: unknown datum label {lab!r}")
    for i, pc in enumerate(cfg.pools):
        for lab in pc.operator_blind_to:
            if lab not in known:
                p.append(f"pools[{i}].operator_blind_to: unknown datum label {lab!r}")

    if cfg.mode == "availability" and not cfg.storers:
        p.append("storers: roster must not be empty")
    for i, s in enumerate(cfg.storers):
        path = f"storers[{i}]"
        if s.strategy not in STORER_STRATEGIES:
            p.append(f"{path}.strategy: must be one of {', '.join(STORER_STRATEGIES)}")
        if s.size < 0:
            p.append(f"{path}.size: must be >= 0")
        if s.duration < 1:
            p.append(f"{path}.duration: must be >= 1")
        if not 0 <= s.fee < 2**64:
            p.append(f"{path}.fee: must be a u64 token amount")
        if not 1 <= s.register_epoch < cfg.epochs:
            p.append(f"{path}.register_epoch: must lie in [1, epochs)")
        if s.strategy == "late_reveal" and not 0 <= s.reveal_offset < cfg.lag_c:
            p.append(f"{path}.reveal_offset: must lie in [0, lag_c)")
        if s.strategy == "publish_then_hide" and s.hide_epoch is None:
            p.append(f"{path}.hide_epoch: required for publish_then_hide")
        if s.every < 0 or s.repeat < 1:
            p.append(f"{path}.every/repeat: every >= 0 and repeat >= 1")
    for lab in cfg.consistency_violation:
        if lab not in known:
            p.append(f"consistency_violation: unknown datum label {lab!r}")
    for i, a in enumerate(cfg.adversary):
        path = f"adversary[{i}]"
        if a.action not in ("withhold", "release"):
            p.append(f"{path}.action: must be withhold or release")
        if a.datum not in known:
            p.append(f"{path}.datum: unknown datum label {a.datum!r}")
        if not 0 <= a.epoch < cfg.epochs:
            p.append(f"{path}.epoch: must lie in [0, epochs)")

    r = cfg.rate
    for name in ("start_rate", "volatility", "noise", "width"):
        _fixed(getattr(r, name), f"rate.{name}", p)
    _fixed(r.scale, "rate.scale", p, positive=True)
    for i, w in enumerate(r.widths):
        _fixed(w, f"rate.widths[{i}]", p)
    for i, v in enumerate(r.series):
        _fixed(v, f"rate.series[{i}]", p)
    if r.base_reward < 0:
        p.append("rate.base_reward: must be >= 0")
    return p


def set_path(data: dict, dotted: str, value: Any) -> None:
    """Assign ``value`` at a dotted path; list indices are plain integers
    (``miners.1.count``)."""
    parts = dotted.split(".")
    cur: Any = data
    for part in parts[:-1]:
        cur = cur[int(part)] if isinstance(cur, list) else cur.setdefault(part, {})
    last = parts[-1]
    if isinstance(cur, list):
        cur[int(last)] = value
    else:
        cur[last] = value
