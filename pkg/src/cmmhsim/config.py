"""Experiment configuration: line-oriented key = value sections.

Unknown sections or keys are rejected with file:line anchored messages.
Every experiment kind runs with defaults; the config overrides them.

    [experiment]
    kind = calibration          # calibration | bandwidth | tail_sweep |
                                # hit_rate | kv_hit_rate | wal_accounting |
                                # crash_replay
    seed = 7

    [host]        mlp_window, t_issue_ns, fence_drain
    [device]      cache_capacity_bytes, ways, latency components, intervals
    [flash]       read/write service, channels, queue_capacity, jitter
    [node.NAME]   read_ns, write_ns, ii_read_ns, ii_write_ns, t_post_write_ns
    [topology]    policy = single:NAME | interleave:NAME=W,NAME=W
    [workload]    generator parameters for the chosen kind
    [output]      dir, format, normalize_to
"""

from dataclasses import dataclass, field


class ConfigError(Exception):
    def __init__(self, message: str, path: str = "<config>", line: int = 0):
        self.path, self.line = path, line
        super().__init__(f"{path}:{line}: {message}")


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str) -> list[int]:
    return [int(tok) for tok in s.replace(",", " ").split()]


def _float_list(s: str) -> list[float]:
    return [float(tok) for tok in s.replace(",", " ").split()]


def _str_list(s: str) -> list[str]:
    return s.replace(",", " ").split()


EXPERIMENT_KINDS = ("calibration", "bandwidth", "tail_sweep", "hit_rate",
                    "kv_hit_rate", "wal_accounting", "crash_replay")

# section -> key -> converter
SCHEMA = {
    "experiment": {"kind": str, "seed": int},
    "host": {"mlp_window": int, "t_issue_ns": float, "fence_drain": _bool},
    "device": {
        "cache_capacity_bytes": int, "ways": int, "block_bytes": int,
        "t_link_rt_ns": float, "t_ctrl_ns": float, "t_tag_ns": float,
        "t_data_ns": float, "t_write_txn_ns": float,
        "ii_read_ns": float, "ii_write_ns": float, "t_post_write_ns": float,
        "node_capacity_bytes": int,
    },
    "flash": {
        "read_service_ns": int, "write_service_ns": int, "channels": int,
        "queue_capacity": int, "jitter_frac": float, "jitter_seed": int,
    },
    "node.*": {
        "read_ns": float, "write_ns": float, "ii_read_ns": float,
        "ii_write_ns": float, "t_post_write_ns": float,
        "capacity_bytes": int,
    },
    "topology": {"policy": str},
    "workload": {
        "region_bytes": int, "n_batches": int, "batch_width": int,
        "window": int, "kind": str, "chase_hops": int,
        "region_mults": _float_list, "batches_per_size": int,
        "threads": _int_list, "lines_per_thread": int,
        "footprint_mults": _float_list, "n_lookups": int,
        "patterns": _str_list, "n_ops": int, "value_size": int,
        "footprint_bytes": int,
        "n_stores": int, "max_region_ops": int,
        "scenario": str, "trace_file": str, "n_plans": int,
        "gpf_budget_bytes": int,
    },
    "output": {"dir": str, "format": str, "normalize_to": str},
}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    path: str = "<config>"
    sections: dict = field(default_factory=dict)   # section -> {key: value}

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def section(self, name: str) -> dict:
        return dict(self.sections.get(name, {}))


def _schema_for(section: str):
    if section in SCHEMA:
        return SCHEMA[section]
    if section.startswith("node.") and len(section) > 5:
        return SCHEMA["node.*"]
    return None


def parse_config_text(text: str, path: str = "<config>") -> ExperimentConfig:
    sections: dict[str, dict] = {}
    current: str | None = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("malformed section header", path, ln)
            current = line[1:-1].strip()
            if _schema_for(current) is None:
                raise ConfigError(f"unknown section [{current}]", path, ln)
            sections.setdefault(current, {})
            continue
        if current is None:
            raise ConfigError("key outside any section", path, ln)
        if "=" not in line:
            raise ConfigError("expected key = value", path, ln)
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        schema = _schema_for(current)
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in [{current}]", path, ln)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r}", path, ln)
        try:
            sections[current][key] = schema[key](val)
        except ValueError as e:
            raise ConfigError(f"bad value for {key!r}: {e}", path, ln) from e

    exp = sections.get("experiment", {})
    kind = exp.get("kind")
    if kind is None:
        raise ConfigError("missing [experiment] kind", path, 0)
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(
            f"unknown experiment kind {kind!r}; expected one of "
            + ", ".join(EXPERIMENT_KINDS), path, 0)
    return ExperimentConfig(kind=kind, seed=exp.get("seed", 0), path=path,
                            sections=sections)


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read(), path)


def parse_policy(spec: str, path: str = "<config>"):
    """'single:NAME' or 'interleave:NAME=W,NAME=W' -> AllocPolicy."""
    from .topology import AllocPolicy
    kind, _, rest = spec.partition(":")
    kind = kind.strip()
    if kind == "single":
        if not rest.strip():
            raise ConfigError("single policy needs a node name", path, 0)
        return AllocPolicy.single(rest.strip())
    if kind == "interleave":
        weights = []
        for part in rest.split(","):
            name, _, w = part.partition("=")
            if not name.strip() or not w.strip():
                raise ConfigError(f"bad interleave term {part!r}", path, 0)
            try:
                weights.append((name.strip(), int(w)))
            except ValueError as e:
                raise ConfigError(f"bad weight in {part!r}", path, 0) from e
        return AllocPolicy.interleave(*weights)
    raise ConfigError(f"unknown policy kind {kind!r}", path, 0)
