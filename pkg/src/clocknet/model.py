"""Domain types, scenario validation and cascade allocation.

All frequencies are detunings from the clock transition in rad/s; the
transition frequency itself is only used when converting to fractional
frequency.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

SCHEMA_VERSION = 1


class Scheme(str, enum.Enum):
    QUANTUM_COOP = "quantum_coop"                    # curve (a)
    QUANTUM_CLASSICAL_COOP = "quantum_classical_coop"  # curve (b)
    QUANTUM_NO_COOP = "quantum_no_coop"              # curve (c)
    CLASSICAL_COOP = "classical_coop"                # curve (d)
    CLASSICAL_NO_COOP = "classical_no_coop"          # curve (e)

    @property
    def label(self) -> str:
        return "abcde"[list(Scheme).index(self)]

    @property
    def quantum(self) -> bool:
        return self in (Scheme.QUANTUM_COOP, Scheme.QUANTUM_CLASSICAL_COOP, Scheme.QUANTUM_NO_COOP)

    @property
    def cooperative(self) -> bool:
        return self not in (Scheme.QUANTUM_NO_COOP, Scheme.CLASSICAL_NO_COOP)


class FeedbackKind(str, enum.Enum):
    FULL = "full"
    COM_ONLY = "com_only"
    REGIONAL = "regional"


@dataclass(frozen=True)
class FeedbackMode:
    kind: FeedbackKind = FeedbackKind.FULL
    regions: tuple[tuple[int, ...], ...] = ()

    @classmethod
    def full(cls) -> "FeedbackMode":
        return cls(FeedbackKind.FULL)

    @classmethod
    def com_only(cls) -> "FeedbackMode":
        return cls(FeedbackKind.COM_ONLY)

    @classmethod
    def regional(cls, regions: Sequence[Sequence[int]]) -> "FeedbackMode":
        return cls(FeedbackKind.REGIONAL, tuple(tuple(r) for r in regions))


@dataclass(frozen=True)
class NodeSpec:
    node_id: int
    qubits: int
    gamma_lo: float  # rad/s, phase diffusion coefficient of the free-running LO
    detuning_init: float = 0.0  # rad/s


@dataclass(frozen=True)
class CascadeSpec:
    """User-fixed cascade parameters; missing values are filled by the planner."""

    base: int = 2
    n0: int | None = None
    n1: int | None = None
    prenarrow: int = 0


@dataclass(frozen=True)
class NetworkConfig:
    nodes: tuple[NodeSpec, ...]
    clock_frequency: float  # rad/s
    gamma_ind: float  # rad/s
    ramsey_time: float  # s
    duration: float  # s
    scheme: Scheme = Scheme.QUANTUM_COOP
    feedback: FeedbackMode = field(default_factory=FeedbackMode.full)
    rng_seed: int = 0
    cascade: CascadeSpec | None = None

    @property
    def k(self) -> int:
        return len(self.nodes)

    @property
    def total_qubits(self) -> int:
        return sum(n.qubits for n in self.nodes)

    @property
    def node_ids(self) -> tuple[int, ...]:
        return tuple(n.node_id for n in self.nodes)

    @property
    def cycles(self) -> int:
        return int(round(self.duration / self.ramsey_time))


@dataclass(frozen=True)
class Violation:
    field: str
    reason: str


class InvalidConfig(ValueError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        msg = "; ".join(f"{v.field}: {v.reason}" for v in self.violations)
        super().__init__(msg)


class InsufficientQubits(ValueError):
    pass


def validate_config(raw: NetworkConfig) -> NetworkConfig:
    """Check every invariant and return a normalized copy (nodes sorted by id).

    All violations are collected before raising, so a single
    :class:`InvalidConfig` lists everything that is wrong.
    """
    bad: list[Violation] = []
    nodes = tuple(sorted(raw.nodes, key=lambda n: n.node_id))
    if not nodes:
        bad.append(Violation("nodes", "empty"))
    ids = [n.node_id for n in nodes]
    if len(set(ids)) != len(ids):
        bad.append(Violation("nodes", "duplicate node_id"))
    for n in nodes:
        if n.qubits < 1:
            bad.append(Violation(f"nodes[{n.node_id}].qubits", "must be >= 1"))
        if not n.gamma_lo > 0:
            bad.append(Violation(f"nodes[{n.node_id}].gamma_lo", "must be > 0"))
    if not raw.ramsey_time > 0:
        bad.append(Violation("ramsey_time", "must be > 0"))
    elif raw.duration < raw.ramsey_time:
        bad.append(Violation("duration", "must be >= ramsey_time"))
    if not raw.clock_frequency > 0:
        bad.append(Violation("clock_frequency", "must be > 0"))
    if raw.gamma_ind < 0:
        bad.append(Violation("gamma_ind", "must be >= 0"))
    if not 0 <= raw.rng_seed < 2**64:
        bad.append(Violation("rng_seed", "must fit in 64 bits"))
    fb = raw.feedback
    if fb.kind is FeedbackKind.REGIONAL:
        members = [j for region in fb.regions for j in region]
        if sorted(members) != sorted(ids) or len(members) != len(set(members)):
            bad.append(Violation("feedback_mode", "partition incomplete"))
        if any(len(r) == 0 for r in fb.regions):
            bad.append(Violation("feedback_mode", "empty region"))
    if raw.cascade is not None:
        c = raw.cascade
        if c.base < 2:
            bad.append(Violation("cascade.base", "must be >= 2"))
        if c.n0 is not None and c.n0 < 1:
            bad.append(Violation("cascade.n0", "must be >= 1"))
        if c.n1 is not None and c.n1 < 0:
            bad.append(Violation("cascade.n1", "must be >= 0"))
        if c.prenarrow < 0:
            bad.append(Violation("cascade.prenarrow", "must be >= 0"))
    if bad:
        raise InvalidConfig(bad)
    regions = tuple(tuple(sorted(r)) for r in fb.regions)
    return NetworkConfig(
        nodes=nodes,
        clock_frequency=float(raw.clock_frequency),
        gamma_ind=float(raw.gamma_ind),
        ramsey_time=float(raw.ramsey_time),
        duration=float(raw.duration),
        scheme=Scheme(raw.scheme),
        feedback=FeedbackMode(fb.kind, regions),
        rng_seed=int(raw.rng_seed),
        cascade=raw.cascade,
    )


# ---------------------------------------------------------------------------
# cascade allocation


def largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    """Split an integer total proportionally to ``weights`` (Hamilton method).

    Ties in the fractional remainders go to the lower index so the split is
    deterministic.
    """
    w = [float(x) for x in weights]
    s = sum(w)
    if s <= 0:
        raise ValueError("weights must have a positive sum")
    quotas = [total * x / s for x in w]
    base = [int(q) for q in quotas]
    short = total - sum(base)
    order = sorted(range(len(w)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


@dataclass(frozen=True)
class CascadePlan:
    """Qubit allocation of one Ramsey cycle.

    ``copy_shares[j][i-1]`` is the number of qubits node ``j`` contributes to
    one GHZ copy of level ``i``; ``per_node_allocation[j]`` lists the node's
    qubits per level ``(level0, level1, ..., levelM)``.
    """

    base: int
    levels: int
    n0: int
    n1: int
    prenarrow: int
    node_ids: tuple[int, ...]
    copy_shares: Mapping[int, tuple[int, ...]]
    per_node_allocation: Mapping[int, tuple[int, ...]]
    per_node_prenarrow: Mapping[int, int]

    @property
    def k(self) -> int:
        return len(self.node_ids)

    @property
    def total_qubits(self) -> int:
        return sum(sum(a) for a in self.per_node_allocation.values()) + sum(self.per_node_prenarrow.values())

    def group_size(self, level: int) -> int:
        """Size of one GHZ copy at ``level`` (>= 1)."""
        return sum(self.copy_shares[j][level - 1] for j in self.node_ids)

    def level0_counts(self) -> tuple[int, ...]:
        return tuple(self.per_node_allocation[j][0] for j in self.node_ids)

    def weights(self) -> tuple[float, ...]:
        """Node weights of the COM phase the cascade tracks (top-level shares)."""
        top = [self.copy_shares[j][self.levels - 1] for j in self.node_ids]
        s = sum(top)
        return tuple(t / s for t in top)

    def to_dict(self) -> dict[str, Any]:
        return {
            "base": self.base,
            "levels": self.levels,
            "n0": self.n0,
            "n1": self.n1,
            "prenarrow": self.prenarrow,
            "per_node_allocation": {str(j): list(v) for j, v in self.per_node_allocation.items()},
        }


def cascade_size(k: int, base: int, n0: int, levels: int) -> int:
    """Qubits held by levels 1..M: n0 * K * (D^M - 1)/(D - 1)."""
    return n0 * k * (base**levels - 1) // (base - 1)


def build_cascade_plan(
    n_total: int,
    k: int,
    base: int = 2,
    n0: int = 1,
    n1: int = 0,
    prenarrow: int = 0,
    node_qubits: Sequence[int] | None = None,
    node_ids: Sequence[int] | None = None,
) -> CascadePlan:
    """Fit the deepest cascade into ``n_total`` qubits.

    ``M`` is the largest integer with ``n1 + N* + n0 K (D^M-1)/(D-1) <= N``
    for which every node can hold its rounded share; whatever is left over
    joins the uncorrelated level 0.
    """
    if k < 1 or base < 2 or n0 < 1 or n1 < 0 or prenarrow < 0:
        raise ValueError("need k >= 1, base >= 2, n0 >= 1, n1 >= 0, prenarrow >= 0")
    ids = tuple(node_ids) if node_ids is not None else tuple(range(1, k + 1))
    if len(ids) != k:
        raise ValueError("node_ids length must equal k")
    if node_qubits is None:
        sizes = largest_remainder(n_total, [1.0] * k)
    else:
        sizes = [int(x) for x in node_qubits]
        if len(sizes) != k or sum(sizes) != n_total:
            raise ValueError("node_qubits must have k entries summing to n_total")
    fixed = n1 + prenarrow
    levels = 0
    while fixed + cascade_size(k, base, n0, levels + 1) <= n_total:
        levels += 1
    if levels < 1:
        raise InsufficientQubits(
            f"{n_total} qubits cannot hold n1={n1}, N*={prenarrow} and one level of {n0} x {k}"
        )

    pre = largest_remainder(prenarrow, sizes) if prenarrow else [0] * k
    all_shares = [largest_remainder(k * base ** (i - 1), sizes) for i in range(1, levels + 1)]
    # rounding of the shares can overfill a node even when the total fits; drop levels until none is
    while levels >= 1:
        shares = all_shares[:levels]
        used = [pre[j] + n0 * sum(s[j] for s in shares) for j in range(k)]
        if all(u <= size for u, size in zip(used, sizes)):
            break
        levels -= 1
    if levels < 1:
        bad = next(ids[j] for j in range(k) if pre[j] + n0 * all_shares[0][j] > sizes[j])
        raise InsufficientQubits(f"node {bad} cannot hold its cascade share")
    copy_shares = {ids[j]: tuple(shares[i][j] for i in range(levels)) for j in range(k)}
    per_node: dict[int, tuple[int, ...]] = {}
    for j, nid in enumerate(ids):
        upper = tuple(n0 * s for s in copy_shares[nid])
        per_node[nid] = (sizes[j] - pre[j] - sum(upper),) + upper
    n1_final = sum(v[0] for v in per_node.values())
    return CascadePlan(
        base=base,
        levels=levels,
        n0=n0,
        n1=n1_final,
        prenarrow=prenarrow,
        node_ids=ids,
        copy_shares=copy_shares,
        per_node_allocation=per_node,
        per_node_prenarrow={ids[j]: pre[j] for j in range(k)},
    )


@dataclass(frozen=True)
class PhaseSample:
    per_node_phase: tuple[float, ...]
    com_phase: float

    @classmethod
    def from_phases(cls, phases: Sequence[float], weights: Sequence[float] | None = None) -> "PhaseSample":
        if weights is None:
            weights = [1.0 / len(phases)] * len(phases)
        s = float(sum(weights))
        com = sum(w * p for w, p in zip(weights, phases)) / s
        return cls(tuple(float(p) for p in phases), float(com))


# ---------------------------------------------------------------------------
# scenario files

_TOP_KEYS = {
    "schema_version", "nodes", "clock_frequency_rad_per_s", "gamma_ind_rad_per_s",
    "ramsey_time_s", "duration_s", "scheme", "feedback", "rng_seed", "cascade", "name",
}
_NODE_KEYS = {"node_id", "qubits", "gamma_lo_rad_per_s", "detuning_init_rad_per_s"}
_FEEDBACK_KEYS = {"mode", "regions"}
_CASCADE_KEYS = {"base", "n0", "n1", "prenarrow"}
_REQUIRED = {"nodes", "clock_frequency_rad_per_s", "gamma_ind_rad_per_s", "ramsey_time_s", "duration_s"}


def _unknown(obj: Mapping[str, Any], allowed: set[str], where: str) -> list[Violation]:
    return [Violation(f"{where}{key}", "unknown field") for key in sorted(set(obj) - allowed)]


def config_from_dict(data: Mapping[str, Any]) -> NetworkConfig:
    """Parse a scenario mapping; unknown or missing fields are rejected."""
    bad = _unknown(data, _TOP_KEYS, "")
    bad += [Violation(key, "missing") for key in sorted(_REQUIRED - set(data))]
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        bad.append(Violation("schema_version", f"unsupported version {version}"))
    nodes = []
    for i, nd in enumerate(data.get("nodes", [])):
        bad += _unknown(nd, _NODE_KEYS, f"nodes[{i}].")
        try:
            nodes.append(NodeSpec(
                node_id=int(nd["node_id"]),
                qubits=int(nd["qubits"]),
                gamma_lo=float(nd["gamma_lo_rad_per_s"]),
                detuning_init=float(nd.get("detuning_init_rad_per_s", 0.0)),
            ))
        except KeyError as exc:
            bad.append(Violation(f"nodes[{i}].{exc.args[0]}", "missing"))
    fb_raw = data.get("feedback", {"mode": "full"})
    bad += _unknown(fb_raw, _FEEDBACK_KEYS, "feedback.")
    try:
        kind = FeedbackKind(fb_raw.get("mode", "full"))
    except ValueError:
        bad.append(Violation("feedback.mode", f"unknown mode {fb_raw.get('mode')!r}"))
        kind = FeedbackKind.FULL
    feedback = FeedbackMode(kind, tuple(tuple(int(j) for j in r) for r in fb_raw.get("regions", ())))
    try:
        scheme = Scheme(data.get("scheme", Scheme.QUANTUM_COOP.value))
    except ValueError:
        bad.append(Violation("scheme", f"unknown scheme {data.get('scheme')!r}"))
        scheme = Scheme.QUANTUM_COOP
    cascade = None
    if "cascade" in data:
        bad += _unknown(data["cascade"], _CASCADE_KEYS, "cascade.")
        c = data["cascade"]
        cascade = CascadeSpec(
            base=int(c.get("base", 2)),
            n0=None if c.get("n0") is None else int(c["n0"]),
            n1=None if c.get("n1") is None else int(c["n1"]),
            prenarrow=int(c.get("prenarrow", 0)),
        )
    if bad:
        raise InvalidConfig(bad)
    return validate_config(NetworkConfig(
        nodes=tuple(nodes),
        clock_frequency=float(data["clock_frequency_rad_per_s"]),
        gamma_ind=float(data["gamma_ind_rad_per_s"]),
        ramsey_time=float(data["ramsey_time_s"]),
        duration=float(data["duration_s"]),
        scheme=scheme,
        feedback=feedback,
        rng_seed=int(data.get("rng_seed", 0)),
        cascade=cascade,
    ))


def config_to_dict(cfg: NetworkConfig) -> dict[str, Any]:
    out: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "nodes": [
            {
                "node_id": n.node_id,
                "qubits": n.qubits,
                "gamma_lo_rad_per_s": n.gamma_lo,
                "detuning_init_rad_per_s": n.detuning_init,
            }
            for n in cfg.nodes
        ],
        "clock_frequency_rad_per_s": cfg.clock_frequency,
        "gamma_ind_rad_per_s": cfg.gamma_ind,
        "ramsey_time_s": cfg.ramsey_time,
        "duration_s": cfg.duration,
        "scheme": cfg.scheme.value,
        "feedback": {"mode": cfg.feedback.kind.value},
        "rng_seed": cfg.rng_seed,
    }
    if cfg.feedback.kind is FeedbackKind.REGIONAL:
        out["feedback"]["regions"] = [list(r) for r in cfg.feedback.regions]
    if cfg.cascade is not None:
        c = cfg.cascade
        out["cascade"] = {"base": c.base, "n0": c.n0, "n1": c.n1, "prenarrow": c.prenarrow}
    return out


def load_scenario(path: str | Path) -> NetworkConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def canonical_json(obj: Any) -> str:
    """Serialization used for hashing: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def equal_network(
    k: int,
    qubits_per_node: int,
    gamma_lo: float,
    *,
    clock_frequency: float = 2 * 3.141592653589793 * 429e12,
    gamma_ind: float = 0.0,
    ramsey_time: float = 1.0,
    cycles: int = 100,
    scheme: Scheme = Scheme.QUANTUM_COOP,
    feedback: FeedbackMode | None = None,
    rng_seed: int = 0,
    cascade: CascadeSpec | None = None,
) -> NetworkConfig:
    """Convenience constructor for K identical nodes."""
    nodes = tuple(NodeSpec(j, qubits_per_node, gamma_lo) for j in range(1, k + 1))
    return validate_config(NetworkConfig(
        nodes=nodes,
        clock_frequency=clock_frequency,
        gamma_ind=gamma_ind,
        ramsey_time=ramsey_time,
        duration=ramsey_time * cycles,
        scheme=scheme,
        feedback=feedback or FeedbackMode.full(),
        rng_seed=rng_seed,
        cascade=cascade,
    ))
