"""Message-level simulation of the center/node exchange and the security checks.

A :class:`World` holds one discrete-event queue.  Per cycle the center
requests an EPR pair per node, Bell-measures as each arrives and sends the
two outcome bits; the node initialises its qubit group on receipt and
measures it exactly ``T`` later, reporting its partial parities and an LO
sample.  Once every report of a cycle is in, the center sends feedback.
Events with equal times run in (sender, kind) order.
"""
from __future__ import annotations

import enum
import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import noise
from .estimation import estimate_level_phase, sample_node_parities, sample_parity, split_quadratures, wrap
from .model import SCHEMA_VERSION

DEFAULT_LAMBDA = 4.0


class CausalityViolation(RuntimeError):
    """An event would run before something it depends on."""


class NotFullyConnected(ValueError):
    """A scheduled center lacks a link to some node."""


class Kind(str, enum.Enum):
    EPR_READY = "EprReady"
    BELL_OUTCOME = "BellOutcome"
    PARITY_REPORT = "ParityReport"
    LO_SAMPLE = "LoSample"
    FEEDBACK_SIGNAL = "FeedbackSignal"
    TEST_PROBE = "TestProbe"
    PROBE_REPORT = "ProbeReport"


class Local(str, enum.Enum):
    START = "CycleStart"
    INIT = "Init"
    ECHO = "Echo"
    MEASURE = "Measure"


@dataclass(frozen=True)
class Message:
    kind: Kind
    sender: int
    receiver: int
    send_time: float
    deliver_time: float
    payload: Mapping[str, Any] | None = None
    encrypted: bool = False
    cycle: int = 0

    def __post_init__(self):
        if self.deliver_time < self.send_time:
            raise CausalityViolation(f"{self.kind.value} delivered before it was sent")
        if self.kind is Kind.PARITY_REPORT and self.payload is not None and self.payload.get("value") not in (-1, 1):
            raise ValueError("parity reports carry +1 or -1")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind.value,
            "sender": self.sender,
            "receiver": self.receiver,
            "send_time": self.send_time,
            "deliver_time": self.deliver_time,
            "payload": None if self.encrypted else self.payload,
            "encrypted": self.encrypted,
            "cycle": self.cycle,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Message":
        return cls(Kind(d["kind"]), int(d["sender"]), int(d["receiver"]), float(d["send_time"]),
                   float(d["deliver_time"]), d.get("payload"), bool(d.get("encrypted", False)), int(d.get("cycle", 0)))


def dump_transcript(messages: Iterable[Message]) -> str:
    return "".join(json.dumps(m.to_dict(), sort_keys=True, separators=(",", ":")) + "\n" for m in messages)


def load_transcript(text: str) -> list[Message]:
    return [Message.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# world state


@dataclass
class NetworkParams:
    k: int
    ramsey_time: float
    cycles: int = 1
    latency: float | Mapping[tuple[int, int], float] = 0.0
    epr_latency: float = 0.0
    epr_success: float = 1.0
    cycle_period: float | None = None
    copies: int = 8
    gamma_lo: float = 1.0
    encrypted: bool = False
    links: set[frozenset[int]] | None = None  # None: fully connected

    @property
    def node_ids(self) -> tuple[int, ...]:
        return tuple(range(1, self.k + 1))

    def link_latency(self, a: int, b: int) -> float:
        if isinstance(self.latency, Mapping):
            return float(self.latency.get((a, b), self.latency.get((b, a), 0.0)))
        return float(self.latency)

    def connected(self, a: int, b: int) -> bool:
        return self.links is None or frozenset((a, b)) in self.links


@dataclass(frozen=True)
class LogEntry:
    time: float
    kind: str
    node: int
    cycle: int


@dataclass
class _Event:
    time: float
    kind: str
    node: int
    cycle: int
    requires: tuple = ()
    provides: tuple | None = None
    message: Message | None = None


@dataclass
class _CycleState:
    center: int
    lo_phases: np.ndarray
    chi: np.ndarray
    parities: np.ndarray | None = None  # (copies, K) partial parities
    reports: dict = field(default_factory=dict)
    lo_samples: dict = field(default_factory=dict)
    center_measured: bool = False
    estimate: float | None = None


@dataclass
class World:
    params: NetworkParams
    seed: int = 0
    schedule: list[int] | None = None
    time: float = 0.0
    queue: list = field(default_factory=list)
    done: set = field(default_factory=set)
    log: list[LogEntry] = field(default_factory=list)
    transcript: list[Message] = field(default_factory=list)
    cycles: dict[int, _CycleState] = field(default_factory=dict)
    _seq: Any = field(default_factory=itertools.count)

    def __post_init__(self):
        if self.schedule is None:
            self.schedule = [1] * self.params.cycles
        for c in range(self.params.cycles):
            period = self.params.cycle_period if self.params.cycle_period is not None else self.params.ramsey_time
            self.push(_Event(c * period, Local.START.value, self.center_of(c), c, (), ("start", c)))

    def center_of(self, cycle: int) -> int:
        return self.schedule[cycle % len(self.schedule)]

    def push(self, ev: _Event):
        heapq.heappush(self.queue, (ev.time, ev.node, ev.kind, next(self._seq), ev))

    def send(self, msg: Message, requires: tuple = (), provides: tuple | None = None):
        self.transcript.append(msg)
        self.push(_Event(msg.deliver_time, msg.kind.value, msg.sender, msg.cycle, requires, provides, msg))

    @property
    def finished(self) -> bool:
        return not self.queue

    def estimates(self) -> np.ndarray:
        return np.array([self.cycles[c].estimate for c in sorted(self.cycles)], dtype=float)

    def true_phases(self) -> np.ndarray:
        return np.array([self.cycles[c].lo_phases.sum() for c in sorted(self.cycles)])


def rotate_center(world: World, schedule: Sequence[int]) -> World:
    """Assign the center role per cycle (the schedule repeats if shorter)."""
    if not schedule:
        raise ValueError("schedule must be non-empty")
    p = world.params
    for center in set(schedule):
        if center not in p.node_ids:
            raise ValueError(f"unknown node {center}")
        missing = [j for j in p.node_ids if j != center and not p.connected(center, j)]
        if missing:
            raise NotFullyConnected(f"node {center} has no link to {missing}")
    if world.log:
        raise RuntimeError("the schedule must be fixed before the first event runs")
    world.schedule = list(schedule)
    world.queue.clear()
    world.__post_init__()
    return world


def _epr_attempts(rng: np.random.Generator, success: float) -> int:
    return 1 if success >= 1 else int(rng.geometric(success))


def step_network(world: World, rng: np.random.Generator | None = None) -> World:
    """Run the next event of the queue."""
    if not world.queue:
        return world
    t, _, _, _, ev = heapq.heappop(world.queue)
    if t < world.time:
        raise CausalityViolation(f"event at {t} after clock reached {world.time}")
    missing = [r for r in ev.requires if r not in world.done]
    if missing:
        raise CausalityViolation(f"{ev.kind} at node {ev.node} needs {missing}")
    world.time = t
    rng = rng if rng is not None else noise.stream(world.seed, noise.PROTOCOL, ev.cycle, 1, len(world.log))
    _HANDLERS[ev.kind](world, ev, rng)
    if ev.provides is not None:
        world.done.add(ev.provides)
    world.log.append(LogEntry(t, ev.kind, ev.node if ev.message is None else ev.message.receiver, ev.cycle))
    return world


def run_world(world: World) -> World:
    while world.queue:
        step_network(world)
    return world


def _on_start(world: World, ev: _Event, rng):
    p = world.params
    c = ev.cycle
    center = ev.node
    for j in p.node_ids:
        if j != center and not p.connected(center, j):
            raise NotFullyConnected(f"center {center} has no link to {j}")
    lo = noise.sample_lo_phase_increment(p.gamma_lo, p.ramsey_time, noise.stream(world.seed, noise.LO, c), p.k)
    nc, ns = split_quadratures(p.copies)
    chi = np.array([0.0] * nc + [math.pi / 2] * ns)
    world.cycles[c] = _CycleState(center, np.atleast_1d(lo).astype(float), chi)
    world.push(_Event(ev.time, Local.INIT.value, center, c, (("start", c),), ("init", c, center)))
    for j in p.node_ids:
        if j == center:
            continue
        delay = _epr_attempts(rng, p.epr_success) * p.epr_latency
        world.send(Message(Kind.EPR_READY, center, j, ev.time, ev.time + delay, {"pair": [center, j]}, cycle=c),
                   (("start", c),), ("epr", c, j))


def _on_epr(world: World, ev: _Event, rng):
    p = world.params
    c = ev.cycle
    center, j = ev.message.sender, ev.message.receiver
    bits = [int(b) for b in rng.integers(0, 2, size=2)]
    arrive = ev.time + p.link_latency(center, j)
    world.send(Message(Kind.BELL_OUTCOME, center, j, ev.time, arrive, {"bits": bits}, cycle=c),
               (("epr", c, j),), ("bell", c, j))
    if arrive > ev.time:
        world.push(_Event((ev.time + arrive) / 2, Local.ECHO.value, j, c, (("epr", c, j),), None))


def _on_bell(world: World, ev: _Event, rng):
    j = ev.message.receiver
    world.push(_Event(ev.time, Local.INIT.value, j, ev.cycle, (("bell", ev.cycle, j),), ("init", ev.cycle, j)))


def _on_init(world: World, ev: _Event, rng):
    world.push(_Event(ev.time + world.params.ramsey_time, Local.MEASURE.value, ev.node, ev.cycle,
                      (("init", ev.cycle, ev.node),), ("measure", ev.cycle, ev.node)))


def _on_echo(world: World, ev: _Event, rng):
    pass


def _ensure_parities(world: World, c: int):
    st = world.cycles[c]
    if st.parities is None:
        prng = noise.stream(world.seed, noise.PROTOCOL, c, 0)
        phase = float(st.lo_phases.sum())
        # column 0 is the center's share
        rows = [sample_node_parities(phase, chi, world.params.k, prng) for chi in st.chi]
        order = [st.center] + [j for j in world.params.node_ids if j != st.center]
        par = np.empty((len(rows), world.params.k), dtype=int)
        for col, nid in enumerate(order):
            par[:, nid - 1] = [r[col] for r in rows]
        st.parities = par
    return st


def _on_measure(world: World, ev: _Event, rng):
    p = world.params
    c, j = ev.cycle, ev.node
    st = _ensure_parities(world, c)
    if j == st.center:
        st.center_measured = True
        _maybe_feedback(world, c)
        return
    lat = p.link_latency(j, st.center)
    for copy in range(p.copies):
        world.send(Message(Kind.PARITY_REPORT, j, st.center, ev.time, ev.time + lat,
                           {"level": 1, "copy": copy, "value": int(st.parities[copy, j - 1])}, cycle=c),
                   (("measure", c, j),), ("report", c, j, copy))
    world.send(Message(Kind.LO_SAMPLE, j, st.center, ev.time, ev.time + lat,
                       {"detuning": float(st.lo_phases[j - 1] / p.ramsey_time)}, cycle=c),
               (("measure", c, j),), ("lo", c, j))


def _on_report(world: World, ev: _Event, rng):
    st = world.cycles[ev.cycle]
    m = ev.message
    st.reports[(m.sender, m.payload["copy"])] = m.payload["value"]
    _maybe_feedback(world, ev.cycle)


def _on_lo(world: World, ev: _Event, rng):
    st = world.cycles[ev.cycle]
    st.lo_samples[ev.message.sender] = ev.message.payload["detuning"]
    _maybe_feedback(world, ev.cycle)


def _maybe_feedback(world: World, c: int):
    p = world.params
    st = world.cycles[c]
    others = [j for j in p.node_ids if j != st.center]
    if not st.center_measured or len(st.reports) < len(others) * p.copies or len(st.lo_samples) < len(others):
        return
    if st.estimate is not None:
        return
    own = st.parities[:, st.center - 1]
    total = own.copy()
    for copy in range(p.copies):
        for j in others:
            total[copy] *= st.reports[(j, copy)]
    nc, _ = split_quadratures(p.copies)
    try:
        st.estimate = estimate_level_phase(list(total[:nc]), list(total[nc:]))
    except Exception:
        st.estimate = 0.0
    now = world.time
    for j in others:
        lat = p.link_latency(st.center, j)
        corr = -(st.estimate / p.ramsey_time) / p.k
        world.send(Message(Kind.FEEDBACK_SIGNAL, st.center, j, now, now + lat, {"correction": corr},
                           encrypted=p.encrypted, cycle=c))


def _on_feedback(world: World, ev: _Event, rng):
    pass


_HANDLERS = {
    Local.START.value: _on_start,
    Kind.EPR_READY.value: _on_epr,
    Kind.BELL_OUTCOME.value: _on_bell,
    Local.INIT.value: _on_init,
    Local.ECHO.value: _on_echo,
    Local.MEASURE.value: _on_measure,
    Kind.PARITY_REPORT.value: _on_report,
    Kind.LO_SAMPLE.value: _on_lo,
    Kind.FEEDBACK_SIGNAL.value: _on_feedback,
}


@dataclass(frozen=True)
class AuditReport:
    ok: bool
    windows: dict  # (cycle, node) -> measure - init
    problems: list


def audit_log(world: World) -> AuditReport:
    """Every measured group has exactly one initialisation exactly T earlier."""
    inits: dict = {}
    measures: dict = {}
    problems = []
    for e in world.log:
        key = (e.cycle, e.node)
        if e.kind == Local.INIT.value:
            if key in inits:
                problems.append(f"double init {key}")
            inits[key] = e.time
        elif e.kind == Local.MEASURE.value:
            measures[key] = e.time
    windows = {}
    for key, tm in measures.items():
        if key not in inits:
            problems.append(f"measure without init {key}")
            continue
        windows[key] = tm - inits[key]
        if tm != inits[key] + world.params.ramsey_time:
            problems.append(f"window {windows[key]} != T at {key}")
    return AuditReport(not problems, windows, problems)


# ---------------------------------------------------------------------------
# sabotage


class NodeModel:
    """Honest node: returns chi + phi with the tracking noise of the test."""

    def report(self, chi: np.ndarray, phi: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
        return wrap(chi + phi + rng.normal(0.0, sigma, np.shape(chi)))


HonestNode = NodeModel


class ConstantParityNode(NodeModel):
    """Reports +1 on every copy; the parity-derived phase is then atan2(-1, 1)."""

    def report(self, chi, phi, sigma, rng):
        return np.full(np.shape(chi), -math.pi / 4)


class RandomParityNode(NodeModel):
    def report(self, chi, phi, sigma, rng):
        return rng.uniform(-math.pi, math.pi, np.shape(chi))


@dataclass
class FrequencyOffsetNode(NodeModel):
    offset: float = 0.0  # rad of extra phase over one window

    def report(self, chi, phi, sigma, rng):
        return wrap(chi + phi + self.offset + rng.normal(0.0, sigma, np.shape(chi)))


@dataclass(frozen=True)
class SabotageVerdict:
    healthy: bool
    deviation: float
    threshold: float
    messages: tuple[Message, ...] = ()


def _threshold(lam: float, n: int, k: int) -> float:
    if lam <= 0:
        raise ValueError("Lambda must be positive")
    return lam * math.sqrt(k / n)


def sabotage_test(center: int, target_node: int, lam: float, n: int, k: int, rng: np.random.Generator,
                  node: NodeModel | None = None, send_time: float = 0.0, latency: float = 0.0) -> SabotageVerdict:
    """One assessment test of ``target_node`` by ``center``.

    The center draws a hidden chi, the node returns phi' from its parities,
    and the center checks |phi' - chi - phi_cl| <= Lambda sqrt(K/N).  The
    spread of phi - phi_cl, sqrt(K/N), is drawn as a single Gaussian.
    """
    node = node or NodeModel()
    thr = _threshold(lam, n, k)
    chi = rng.uniform(-math.pi, math.pi)
    phi = rng.normal(0.0, 1.0)
    phi_prime = float(node.report(np.array(chi), np.array(phi), math.sqrt(k / n), rng))
    dev = float(abs(wrap(phi_prime - chi - phi)))
    probe = Message(Kind.TEST_PROBE, center, target_node, send_time, send_time + latency, {"bits": [0, 0]})
    reply = Message(Kind.PROBE_REPORT, target_node, center, send_time + latency, send_time + 2 * latency,
                    {"phase": phi_prime})
    return SabotageVerdict(dev <= thr, dev, thr, (probe, reply))


def sabotage_detection_rate(trials: int, lam: float, n: int, k: int, rng: np.random.Generator,
                            node: NodeModel | None = None) -> float:
    """Fraction of ``trials`` independent tests that flag the node; vectorised."""
    node = node or NodeModel()
    thr = _threshold(lam, n, k)
    chi = rng.uniform(-math.pi, math.pi, trials)
    phi = rng.normal(0.0, 1.0, trials)
    dev = np.abs(wrap(node.report(chi, phi, math.sqrt(k / n), rng) - chi - phi))
    return float(np.mean(dev > thr))


def node_outcomes(probe: bool, phase: float, k: int, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Parities a non-center node sees in regular cycles or in test cycles.

    In a test cycle the node measures a teleported probe rotated by the
    hidden chi; in a regular cycle it holds one share of the GHZ parity.
    """
    if probe:
        chi = rng.uniform(-math.pi, math.pi, shots)
        return sample_parity(phase, chi, rng)
    return np.array([sample_node_parities(phase, 0.0, k, rng)[1] for _ in range(shots)])


def key_holder_correlation(k: int, cycles: int, rng: np.random.Generator, include_center: bool = False) -> float:
    """Pearson r between the product of node reports and sign(cos Phi_LO).

    Without the center's own parity the reports carry no phase information.
    """
    phases = rng.uniform(-math.pi, math.pi, cycles)
    rows = np.array([sample_node_parities(ph, 0.0, k, rng) for ph in phases])
    prod = rows.prod(axis=1) if include_center else rows[:, 1:].prod(axis=1)
    if np.all(prod == prod[0]):
        return 0.0
    return float(np.corrcoef(prod, np.sign(np.cos(phases)))[0, 1])


# ---------------------------------------------------------------------------
# eavesdropper


@dataclass(frozen=True)
class AdversaryView:
    intercepted: frozenset
    free_running_com: bool
    stabilized_com: bool


def eavesdropper_analysis(transcript: Sequence[Message], encryption_on: bool,
                          intercepted: Iterable[Kind] | None = None) -> AdversaryView:
    """What an adversary tapping the listed message kinds can synthesise."""
    taps = frozenset(Kind) if intercepted is None else frozenset(Kind(k) for k in intercepted)
    seen = frozenset(m.kind for m in transcript if m.kind in taps)
    lo_senders = {m.sender for m in transcript if m.kind is Kind.LO_SAMPLE}
    free = Kind.LO_SAMPLE in seen and bool(lo_senders)
    readable_feedback = any(m.kind is Kind.FEEDBACK_SIGNAL and not (encryption_on or m.encrypted) and m.payload
                            for m in transcript) and Kind.FEEDBACK_SIGNAL in seen
    return AdversaryView(seen, free, free and readable_feedback)


def transcript_from_closed_loop(result, trial: int, omega0: float, node_ids: Sequence[int], center: int = 1,
                                encrypted: bool = False, latency: float = 0.0) -> list[Message]:
    """LO samples and feedback messages that carried one closed-loop trial.

    Non-center nodes send their free-running LO detuning each window.  The
    center answers with the total phase correction applied to that node's
    window (accumulated steering, pre-narrowing and the current estimate), so
    free-running phase minus correction is the node's stabilized phase.
    """
    t = result.cycle_time
    msgs = []
    node_corr = (result.free_running_nodes[trial] - result.node_output[trial]) * omega0 * t
    for c in range(result.com_output.shape[1]):
        end = (c + 1) * t
        for j, nid in enumerate(node_ids):
            if nid == center:
                continue
            det = float(result.free_running_nodes[trial, j, c] * omega0)
            msgs.append(Message(Kind.LO_SAMPLE, nid, center, end, end + latency, {"detuning": det}, cycle=c))
        for j, nid in enumerate(node_ids):
            if nid == center:
                continue
            msgs.append(Message(Kind.FEEDBACK_SIGNAL, center, nid, end + latency, end + 2 * latency,
                                {"phase_correction": float(node_corr[j, c])}, encrypted=encrypted, cycle=c))
    return msgs


def adversary_com_series(transcript: Sequence[Message], view: AdversaryView, omega0: float, ramsey_time: float
                         ) -> np.ndarray:
    """Best COM fractional-frequency series the adversary can build.

    With readable feedback it subtracts each node's correction from the
    intercepted LO phase before averaging, the same arithmetic the center
    uses.  Otherwise it can only average the free-running samples.  The
    center's own LO never crosses a channel and is missing either way.
    """
    if not view.free_running_com:
        raise ValueError("no LO samples were intercepted")
    lo: dict[int, dict[int, float]] = {}
    fb: dict[int, dict[int, float]] = {}
    for m in transcript:
        if m.kind is Kind.LO_SAMPLE:
            lo.setdefault(m.cycle, {})[m.sender] = m.payload["detuning"] * ramsey_time
        elif m.kind is Kind.FEEDBACK_SIGNAL and view.stabilized_com and m.payload:
            fb.setdefault(m.cycle, {})[m.receiver] = m.payload["phase_correction"]
    cycles = sorted(lo)
    nodes = sorted({n for c in cycles for n in lo[c]})
    phases = np.array([[lo[c][n] for n in nodes] for c in cycles])
    if view.stabilized_com:
        phases = phases - np.array([[fb[c][n] for n in nodes] for c in cycles])
    return phases.mean(axis=1) / (omega0 * ramsey_time)
