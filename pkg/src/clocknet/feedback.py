"""Closed-loop servo of the network: COM synthesis, feedback distribution, simulation.

Each cycle every node LO accrues the phase ``(d_j + c_j) T + xi_j`` where
``d_j`` is its initial detuning, ``c_j`` the steering correction held by the
servo and ``xi_j`` the white-frequency-noise increment.  The scheme's
interrogation returns a phase estimate; the servo removes it from the
delivered signal and applies it, deadbeat, as a frequency correction for the
next cycle.

Qubits reserved for pre-narrowing run a local stage on each LO before the
cascade: the cascade then sees a residual LO increment at the effective
linewidth ``gamma_LO exp(-N*_j pi^2 / (2e ln(gamma_LO tau)))``, with ``N*_j``
the node's share.  The stage acts after the LO light is split off, so the
free-running series (and any intercepted LO signal) keeps the full linewidth.

Series are fractional frequencies:

* ``com_output`` / ``node_output``: the delivered, phase-corrected signal,
  ``(phi - phi_corr) / (omega0 T)``;
* ``com_detuning``: mean steered COM frequency over each window, ``Phi / (omega0 T)``;
* ``free_running_com``: the same with no corrections applied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import noise
from .estimation import interrogate_batch, wrap
from .model import CascadePlan, FeedbackKind, FeedbackMode, NetworkConfig, Scheme, build_cascade_plan
from .planner import alloc_n1, plan_cascade

Estimator = Callable[[np.ndarray], np.ndarray]

CHUNK = 64  # trials per random stream; fixes the seed layout independently of worker count


class ZeroWeights(ValueError):
    """All COM weights vanish."""


def synthesize_com(node_detunings: Sequence[float], weights: Sequence[float]) -> float:
    """Weighted mean of node detunings."""
    d = np.asarray(node_detunings, dtype=float)
    w = np.asarray(weights, dtype=float)
    if d.shape != w.shape:
        raise ValueError("detunings and weights must have equal length")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if total == 0:
        raise ZeroWeights("all weights are zero")
    return float(d @ w / total)


def _regions_index(mode: FeedbackMode, node_ids: Sequence[int]) -> list[list[int]]:
    pos = {nid: i for i, nid in enumerate(node_ids)}
    return [[pos[n] for n in region] for region in mode.regions]


def compute_feedback(mode: FeedbackMode, delta_com, node_detunings, nu_com, node_ids: Sequence[int] | None = None):
    """Per-node corrections (same units as the inputs).

    Works elementwise on a trailing node axis, so batches of trials can be
    passed with shape (B, K).
    """
    det = np.asarray(node_detunings, dtype=float)
    dc = np.asarray(delta_com, dtype=float)[..., None]
    nc = np.asarray(nu_com, dtype=float)[..., None]
    offsets = det - nc
    if mode.kind is FeedbackKind.FULL:
        out = dc + offsets
    elif mode.kind is FeedbackKind.COM_ONLY:
        out = np.broadcast_to(dc, det.shape).copy()
    else:
        ids = node_ids if node_ids is not None else tuple(range(1, det.shape[-1] + 1))
        out = np.empty(np.broadcast_shapes(det.shape, dc.shape))
        for idx in _regions_index(mode, ids):
            out[..., idx] = dc + offsets[..., idx].mean(axis=-1, keepdims=True)
    return out


@dataclass
class ServoState:
    corrections: np.ndarray  # (B, K) rad/s
    com_history: list = field(default_factory=list)
    cycle: int = 0

    def apply(self, per_node_phase_corr: np.ndarray, ramsey_time: float, com_estimate: np.ndarray):
        self.corrections = self.corrections - per_node_phase_corr / ramsey_time
        self.com_history.append(com_estimate / ramsey_time)
        self.cycle += 1


@dataclass
class ClosedLoopResult:
    scheme: Scheme
    cycle_time: float
    com_output: np.ndarray  # (B, C)
    node_output: np.ndarray  # (B, K, C)
    com_detuning: np.ndarray  # (B, C)
    node_detuning: np.ndarray  # (B, K, C)
    free_running_com: np.ndarray  # (B, C)
    free_running_nodes: np.ndarray  # (B, K, C)
    rounding_suspect: int = 0
    slip_suspect: int = 0
    degenerate: int = 0

    @property
    def trials(self) -> int:
        return self.com_output.shape[0]

    def scheme_output(self) -> np.ndarray:
        """The series the scheme delivers: COM when cooperating, otherwise node 1."""
        return self.com_output if self.scheme.cooperative else self.node_output[:, 0, :]


# ---------------------------------------------------------------------------
# interrogation per scheme


def default_plan(cfg: NetworkConfig) -> CascadePlan:
    """Cascade from the scenario's fixed values, the planner filling the rest."""
    spec = cfg.cascade
    base = spec.base if spec else 2
    pre = spec.prenarrow if spec else 0
    sizes = [n.qubits for n in cfg.nodes]
    if spec and spec.n0 is not None:
        n1 = spec.n1 if spec.n1 is not None else alloc_n1(spec.n0, cfg.k)[0]
        return build_cascade_plan(cfg.total_qubits, cfg.k, base, spec.n0, n1, pre, sizes, cfg.node_ids)
    return plan_cascade(cfg.total_qubits, cfg.k, base, pre, node_qubits=sizes, node_ids=cfg.node_ids)


def effective_linewidths(cfg: NetworkConfig, plan: CascadePlan | None) -> np.ndarray:
    """Per-node LO linewidth seen by the interrogation after pre-narrowing."""
    gamma = np.array([n.gamma_lo for n in cfg.nodes], dtype=float)
    if plan is None or plan.prenarrow == 0:
        return gamma
    out = gamma.copy()
    for j, nid in enumerate(plan.node_ids):
        g = gamma[j]
        if g * cfg.duration > 1:
            n_j = plan.per_node_prenarrow[nid]
            out[j] = g * math.exp(-n_j * math.pi**2 / (2 * math.e * math.log(g * cfg.duration)))
    return out


def _node_plans(cfg: NetworkConfig) -> list[CascadePlan]:
    base = cfg.cascade.base if cfg.cascade else 2
    return [plan_cascade(n.qubits, 1, base) for n in cfg.nodes]


class _Interrogator:
    """Returns (COM estimate, per-node estimates or None, flags) for a batch of phases."""

    def __init__(self, cfg: NetworkConfig, plan: CascadePlan | None, estimator: Estimator | None):
        self.cfg = cfg
        self.scheme = cfg.scheme
        self.estimator = estimator
        sizes = np.array([n.qubits for n in cfg.nodes], dtype=float)
        if self.scheme is Scheme.QUANTUM_COOP:
            self.plan = plan or default_plan(cfg)
            self.weights = np.array(self.plan.weights())
        else:
            self.plan = None
            self.weights = sizes / sizes.sum()
        self.node_plans = _node_plans(cfg) if self.scheme in (Scheme.QUANTUM_NO_COOP,
                                                               Scheme.QUANTUM_CLASSICAL_COOP) else None
        self.sizes = sizes

    def __call__(self, phases: np.ndarray, rng: np.random.Generator):
        b, k = phases.shape
        zeros = np.zeros(b, dtype=bool)
        if self.estimator is not None:
            # the hook supplies the COM estimate; nodes then read their own phase exactly
            com = np.asarray(self.estimator(phases), dtype=float)
            return com, phases.copy(), (zeros, zeros, zeros)
        t = self.cfg.ramsey_time
        g = self.cfg.gamma_ind
        if self.scheme is Scheme.QUANTUM_COOP:
            out = interrogate_batch(self.plan, phases, g, t, rng)
            return out.estimate, None, (out.rounding_suspect, out.slip_suspect, out.degenerate)
        if self.node_plans is not None:
            est = np.empty((b, k))
            flags = [zeros.copy(), zeros.copy(), zeros.copy()]
            for j, p in enumerate(self.node_plans):
                out = interrogate_batch(p, phases[:, j:j + 1], g, t, rng)
                est[:, j] = out.estimate
                for f, v in zip(flags, (out.rounding_suspect, out.slip_suspect, out.degenerate)):
                    f |= v
            return est @ self.weights, est, tuple(flags)
        # uncorrelated Ramsey on each node: projection variance 1/N_j plus dephasing
        sd = np.sqrt((1.0 + g * t) / self.sizes)
        est = wrap(phases + rng.normal(0.0, 1.0, phases.shape) * sd)
        slip = np.any(np.abs(phases) > math.pi, axis=1)
        return est @ self.weights, est, (zeros, slip, zeros)


def _node_phase_corrections(mode: FeedbackMode, scheme: Scheme, com_est: np.ndarray, node_est, phases: np.ndarray,
                            weights: np.ndarray, node_ids) -> np.ndarray:
    """Per-node phase to remove this cycle."""
    if not scheme.cooperative:
        return node_est
    com_true = phases @ weights
    return compute_feedback(mode, com_est, phases, com_true, node_ids)


def run_closed_loop(cfg: NetworkConfig, plan: CascadePlan | None = None, trials: int = 1,
                    cycles: int | None = None, estimator: Estimator | None = None,
                    seed: int | None = None) -> ClosedLoopResult:
    """Simulate ``trials`` independent runs of the servoed network.

    Random draws for trial blocks of ``CHUNK`` come from streams addressed by
    (seed, tag, block, cycle), so the output depends only on the scenario,
    the seed and the trial count.
    """
    seed = cfg.rng_seed if seed is None else seed
    cycles = cfg.cycles if cycles is None else cycles
    if cycles < 1 or trials < 1:
        raise ValueError("need at least one cycle and one trial")
    inter = _Interrogator(cfg, plan, estimator)
    k = cfg.k
    t = cfg.ramsey_time
    w0 = cfg.clock_frequency
    gamma = np.array([n.gamma_lo for n in cfg.nodes])
    gamma_eff = effective_linewidths(cfg, inter.plan)
    narrowed = bool(np.any(gamma_eff != gamma))
    d0 = np.array([n.detuning_init for n in cfg.nodes])
    node_ids = cfg.node_ids

    com_out = np.empty((trials, cycles))
    node_out = np.empty((trials, k, cycles))
    com_det = np.empty((trials, cycles))
    node_det = np.empty((trials, k, cycles))
    free_com = np.empty((trials, cycles))
    free_nodes = np.empty((trials, k, cycles))
    counts = np.zeros(3, dtype=np.int64)

    for block, start in enumerate(range(0, trials, CHUNK)):
        stop = min(trials, start + CHUNK)
        b = stop - start
        servo = ServoState(np.zeros((b, k)))
        for c in range(cycles):
            lo_rng = noise.stream(seed, noise.LO, block, c)
            xi = np.sqrt(gamma * t) * lo_rng.standard_normal((b, k))
            free = d0 * t + xi
            if narrowed:
                xi = np.sqrt(gamma_eff * t) * noise.stream(seed, noise.LO, block, c, 1).standard_normal((b, k))
            phases = (d0 + servo.corrections) * t + xi
            com_est, node_est, flags = inter(phases, noise.stream(seed, noise.CASCADE, block, c))
            degenerate = flags[2]
            corr = _node_phase_corrections(cfg.feedback, cfg.scheme, com_est, node_est, phases, inter.weights,
                                           node_ids)
            corr = np.where(degenerate[:, None], 0.0, corr)
            com_corr = np.where(degenerate, 0.0, com_est if cfg.scheme.cooperative else corr @ inter.weights)
            com_true = phases @ inter.weights
            com_out[start:stop, c] = (com_true - com_corr) / (w0 * t)
            node_out[start:stop, :, c] = (phases - corr) / (w0 * t)
            com_det[start:stop, c] = com_true / (w0 * t)
            node_det[start:stop, :, c] = phases / (w0 * t)
            free_com[start:stop, c] = free @ inter.weights / (w0 * t)
            free_nodes[start:stop, :, c] = free / (w0 * t)
            counts += [int(flags[0].sum()), int(flags[1].sum()), int(degenerate.sum())]
            servo.apply(corr, t, com_corr)
    return ClosedLoopResult(cfg.scheme, t, com_out, node_out, com_det, node_det, free_com, free_nodes,
                            int(counts[0]), int(counts[1]), int(counts[2]))


def oracle_estimator(weights: Sequence[float]) -> Estimator:
    """Noise-free COM phase, for deadbeat checks."""
    w = np.asarray(weights, dtype=float)
    return lambda phases: phases @ w
