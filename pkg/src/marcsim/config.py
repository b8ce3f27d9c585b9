"""Flat ``section.key=value`` experiment configuration.

Example::

    # attack at tRCmin
    timing.t_refw=128000000
    rfm.raaimt=248
    mitigation.side=dram
    mitigation.scheme=probabilistic
    pattern.kind=attack
    pattern.trc=60
    run.seeds=30

Keys may be written without their section when the name is unambiguous
(``side=mc``). Every key is also a CLI flag of the same name
(``--timing.t_refi 7800``), which wins over the file.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .detector import DetectorConfig
from .dram import TimingConfig
from .engine import SimConfig
from .errors import ConfigError
from .mitigation import CounterConfig, MitigationConfig, ParaConfig, ProbabilisticConfig
from .rfm import RfmConfig


def _bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_int(v: str):
    return None if str(v).strip().lower() in ("", "none", "auto") else int(v)


def _tristate(v: str) -> str:
    s = str(v).strip().lower()
    if s == "auto":
        return "auto"
    return "on" if _bool(s) else "off"


def _int_list(v: str) -> list[int]:
    return [int(x) for x in str(v).replace(",", " ").split()]


# key -> (parser, default)
KEYS: dict[str, tuple] = {
    "timing.t_rc_min": (int, 60),
    "timing.t_refi": (int, 15_600),
    "timing.t_refw": (int, 128_000_000),
    "timing.t_rfc": (int, 280),
    "timing.t_ras": (_opt_int, None),
    "timing.t_rp": (_opt_int, None),
    "timing.nrr_per_refresh": (int, 10),
    "timing.short_trc_max": (int, 100),
    "timing.per_bank_refresh": (_bool, False),
    "rfm.raaimt": (int, 248),
    "rfm.raaimt_a": (_opt_int, None),
    "rfm.raaimt_b": (_opt_int, None),
    "rfm.raaimt_c": (_opt_int, None),
    "rfm.raammt_mult": (int, 8),
    "rfm.raadec_ref": (_opt_int, None),
    "rfm.raadec_rfm": (_opt_int, None),
    "rfm.rfm_enabled": (_tristate, "auto"),
    "rfm.strict_threshold": (_bool, False),
    "rfm.scale_raadec": (_bool, False),
    "detector.k": (int, 3),
    "detector.s_trc_th": (int, 130),
    "detector.eviction_threshold": (int, 2),
    "detector.escalation_step": (int, 4),
    "detector.clean_windows_to_reset": (int, 2),
    "detector.resolution": (int, 10),
    "detector.min_attack_windows": (int, 2),
    "mitigation.enabled": (_bool, True),
    "mitigation.side": (str, "dram"),
    "mitigation.scheme": (str, "probabilistic"),
    "mitigation.para_p": (float, 0.01),
    "mitigation.table_size": (int, 214),
    "mitigation.threshold": (int, 1024),
    "mitigation.subtract_on_hit": (_bool, False),
    "mitigation.blast_radius": (int, 1),
    "mitigation.max_row": (_opt_int, None),
    "mitigation.sample_window": (int, 10),
    "mitigation.immediate_cure": (_bool, False),
    "run.marc": (_bool, True),
    "run.seed": (int, 0),
    "run.seeds": (int, 1),
    "run.drop_ref_collisions": (_bool, True),
    "run.rfm_blocking_ns": (int, 0),
    "pattern.kind": (str, "attack"),
    "pattern.trace": (str, ""),
    "pattern.n_aggressors": (int, 50),
    "pattern.trc": (int, 60),
    "pattern.mode": (str, "multi"),
    "pattern.duration": (int, 128_000_000),
    "pattern.bank": (int, 0),
    "pattern.row_base": (int, 0),
    "pattern.n_distinct": (int, 1),
    "pattern.total_acts": (_opt_int, None),
    "pattern.values": (str, ""),
    "pattern.short_fraction": (float, 0.005),
    "pattern.n_acts": (_opt_int, None),
    "pattern.seed": (int, 0),
    "sweep.trc_values": (_int_list, [60, 70, 80, 90, 100, 110, 120, 130, 140, 150]),
    "sweep.aggr_values": (_int_list, [10, 20, 30, 40, 50, 60, 70, 80, 90]),
}

_BARE: dict[str, str] = {}
for _k in KEYS:
    _name = _k.split(".", 1)[1]
    _BARE[_name] = _k if _name not in _BARE else ""   # "" marks an ambiguous name
_BARE["seed"] = "run.seed"
_BARE["seeds"] = "run.seeds"


def canonical_key(key: str) -> str:
    key = key.strip().replace("-", "_")
    if key in KEYS:
        return key
    full = _BARE.get(key)
    if full:
        return full
    raise ConfigError(f"unknown config key {key!r}")


def parse_config(text: str) -> dict[str, object]:
    """Parse key=value lines into a dict of typed values (only keys present)."""
    out: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value: {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        set_value(out, k, v, where=f"line {lineno}")
    return out


def set_value(values: dict, key: str, raw, where: str = ""):
    full = canonical_key(key)
    parser = KEYS[full][0]
    try:
        values[full] = parser(raw) if isinstance(raw, str) else raw
    except (TypeError, ValueError) as exc:
        prefix = f"{where}: " if where else ""
        raise ConfigError(f"{prefix}bad value for {full}: {raw!r} ({exc})") from None


def load_config(path) -> dict[str, object]:
    with open(path) as fh:
        return parse_config(fh.read())


def write_config(values: dict) -> str:
    lines = []
    for k in KEYS:
        if k in values:
            v = values[k]
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = "none"
            lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def default_seed() -> int:
    env = os.environ.get("MARC_SEED")
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"MARC_SEED must be an integer, got {env!r}") from None


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def get(self, key: str):
        full = canonical_key(key)
        if full in self.values:
            return self.values[full]
        if full == "run.seed":
            return default_seed()
        return KEYS[full][1]

    def with_values(self, **kw) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in kw.items():
            set_value(vals, k.replace("__", "."), v)
        return ExperimentConfig(vals)

    @property
    def seeds(self) -> list[int]:
        base = self.get("run.seed")
        return [base + i for i in range(max(1, self.get("run.seeds")))]

    def timing(self) -> TimingConfig:
        g = self.get
        return TimingConfig(
            t_rc_min=g("timing.t_rc_min"), t_refi=g("timing.t_refi"), t_refw=g("timing.t_refw"),
            t_rfc=g("timing.t_rfc"), t_ras=g("timing.t_ras"), t_rp=g("timing.t_rp"),
            nrr_per_refresh=g("timing.nrr_per_refresh"), short_trc_max=g("timing.short_trc_max"),
            per_bank_refresh=g("timing.per_bank_refresh"))

    def rfm(self) -> RfmConfig:
        g = self.get
        return RfmConfig(
            raaimt_base=g("rfm.raaimt"), raaimt_a=g("rfm.raaimt_a"), raaimt_b=g("rfm.raaimt_b"),
            raaimt_c=g("rfm.raaimt_c"), raammt_multiplier=g("rfm.raammt_mult"),
            raadec_ref=g("rfm.raadec_ref"), raadec_rfm=g("rfm.raadec_rfm"),
            strict_threshold=g("rfm.strict_threshold"),
            scale_raadec_with_level=g("rfm.scale_raadec"))

    def detector(self) -> DetectorConfig:
        g = self.get
        return DetectorConfig(
            k=g("detector.k"), s_trc_th=g("detector.s_trc_th"),
            eviction_threshold=g("detector.eviction_threshold"),
            escalation_step=g("detector.escalation_step"),
            clean_windows_to_reset=g("detector.clean_windows_to_reset"),
            short_trc_max=g("timing.short_trc_max"), resolution=g("detector.resolution"),
            min_attack_windows=g("detector.min_attack_windows"))

    def mitigation(self) -> MitigationConfig:
        g = self.get
        try:
            return MitigationConfig(
                side=g("mitigation.side"), scheme=g("mitigation.scheme"),
                enabled=g("mitigation.enabled"),
                probabilistic=ProbabilisticConfig(g("mitigation.sample_window"), g("run.seed")),
                counter=CounterConfig(g("mitigation.table_size"), g("mitigation.threshold"),
                                      subtract_on_hit=g("mitigation.subtract_on_hit")),
                para=ParaConfig(g("mitigation.para_p"), g("run.seed")),
                blast_radius=g("mitigation.blast_radius"), max_row=g("mitigation.max_row"),
                immediate_cure=g("mitigation.immediate_cure"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def sim(self) -> SimConfig:
        return SimConfig(timing=self.timing(), rfm=self.rfm(), detector=self.detector(),
                         mitigation=self.mitigation(), marc_enabled=self.get("run.marc"),
                         rfm_mode=self.get("rfm.rfm_enabled"),
                         drop_ref_collisions=self.get("run.drop_ref_collisions"),
                         rfm_blocking_ns=self.get("run.rfm_blocking_ns"))

    def pattern(self):
        """Spec object (AttackSpec/ComboSpec/NormalSpec) or a trace path string."""
        from .patterns import AttackSpec, ComboSpec, NormalSpec
        g = self.get
        kind = g("pattern.kind")
        if g("pattern.trace"):
            return g("pattern.trace")
        if kind == "attack":
            return AttackSpec(g("pattern.n_aggressors"), g("pattern.trc"), g("pattern.mode"),
                              g("pattern.duration"), g("pattern.bank"), g("pattern.row_base"))
        if kind == "combo":
            vals = g("pattern.values")
            values = tuple(_int_list(vals)) if vals else None
            n = len(values) if values else g("pattern.n_distinct")
            total = g("pattern.total_acts")
            return ComboSpec(n, total, seed=g("pattern.seed"),
                             duration=None if total else g("pattern.duration"),
                             values=values, bank=g("pattern.bank"))
        if kind == "normal":
            n_acts = g("pattern.n_acts")
            return NormalSpec(g("pattern.short_fraction"), duration=None if n_acts else g("pattern.duration"),
                              seed=g("pattern.seed"), n_acts=n_acts, bank=g("pattern.bank"))
        raise ConfigError(f"unknown pattern.kind {kind!r}")
