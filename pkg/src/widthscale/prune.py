"""Iterative gated pruning used as a proxy for efficient width configurations.

After ``P`` pre-training epochs the network alternates ``Q`` training
iterations (accumulating squared gate gradients) with removal of the globally
least important channels. Once every prunable layer has lost at least one
channel, the (total parameter count, width vector) pair is recorded after each
prune step. Pruning stops when fewer than ``eps_fraction`` of the initial
channels remain.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .arch import ArchSpec, count_params
from .data import Dataset
from .engine import BatchStream, Network, TrainSchedule, init_network, sgd_step, train
from .errors import DomainError, EmptyTrajectoryError, TrainingDivergence

log = logging.getLogger(__name__)


class PruneExhausted(Exception):
    """Signal: the requested number of channels cannot be removed."""


@dataclass(frozen=True)
class PruneConfig:
    """Settings of one pruning run.

    ``prune_count`` is an absolute channel count when >= 1 and a fraction of
    the initial channel total when in (0, 1). ``prune_lr`` defaults to the
    pre-training rate after its step decays.
    """

    pretrain_epochs: int = 10
    pretrain_lr: float = 0.1
    lr_decay: float = 0.1
    decay_every: int = 10
    prune_lr: float | None = None
    q: int = 30
    prune_count: float = 0.02
    eps_fraction: float = 0.05
    batch_size: int = 64
    momentum: float = 0.5
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if self.pretrain_epochs < 0:
            raise DomainError("pretrain_epochs must be >= 0")
        if self.q < 1:
            raise DomainError("q must be >= 1")
        if not 0 < self.eps_fraction < 1:
            raise DomainError("eps_fraction must lie in (0, 1)")
        if not self.prune_count > 0 or (self.prune_count >= 1 and self.prune_count != int(self.prune_count)):
            raise DomainError("prune_count is a positive integer or a fraction in (0, 1)")

    def resolve_count(self, total: int) -> int:
        if self.prune_count >= 1:
            return int(self.prune_count)
        return max(1, int(round(self.prune_count * total)))

    def pretrain_schedule(self) -> TrainSchedule:
        milestones = tuple(range(self.decay_every, self.pretrain_epochs, self.decay_every))
        return TrainSchedule(self.pretrain_lr, self.momentum, self.weight_decay, self.pretrain_epochs,
                             milestones, self.lr_decay, self.batch_size, self.seed)

    def phase_lr(self) -> float:
        if self.prune_lr is not None:
            return self.prune_lr
        return self.pretrain_lr * self.lr_decay ** (self.pretrain_epochs // self.decay_every)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrajectoryRecord:
    step: int
    tau: int
    phi: tuple[int, ...]


@dataclass
class PruneTrajectory:
    arch_name: str
    num_layers: int
    records: list[TrajectoryRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    @property
    def taus(self) -> np.ndarray:
        return np.array([r.tau for r in self.records], dtype=np.int64)

    @property
    def phis(self) -> np.ndarray:
        return np.array([r.phi for r in self.records], dtype=np.int64).reshape(len(self.records), self.num_layers)


class _Proxy:
    """Short-burst trainer shared by the prune steps of one run."""

    def __init__(self, stream: BatchStream, lr: float, momentum: float, weight_decay: float):
        self.stream = stream
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.step = 0


def gate_importance(net: Network, data: Dataset, q: int, *, lr=0.01, momentum=0.5, weight_decay=5e-4,
                    batch_size=64, seed=0, _proxy: _Proxy | None = None) -> list[np.ndarray]:
    """Train ``q`` mini-batch iterations, scoring each gate by its mean squared
    loss gradient over those batches.

    Dead gates score ``-inf``. The scores are also stored on
    ``net.importance`` for :func:`prune_step`.
    """
    if q < 1:
        raise DomainError("q must be >= 1")
    if _proxy is None:
        x, y = data.train_split()
        _proxy = _Proxy(BatchStream(x, y, batch_size, seed), lr, momentum, weight_decay)
    acc = [np.zeros(len(g.z)) for g in net.gates]
    for _ in range(q):
        xb, yb = _proxy.stream.next()
        loss = net.loss_and_grad(xb, yb)
        if not math.isfinite(loss):
            raise TrainingDivergence(_proxy.step, loss)
        for a, g in zip(acc, net.gates):
            a += g.grad ** 2
        sgd_step(net, _proxy.lr, _proxy.momentum, _proxy.weight_decay)
        _proxy.step += 1
    scores = []
    for a, g in zip(acc, net.gates):
        s = a / q
        s[~g.alive] = -np.inf
        scores.append(s)
    net.importance = scores
    return scores


def prune_step(net: Network, k: int, scores: list[np.ndarray] | None = None) -> list[tuple[int, int]]:
    """Remove the ``k`` alive channels with the lowest score, network-wide.

    A channel whose removal would empty its layer is skipped in favour of the
    next-lowest one. Ties are broken by (layer, channel) order.
    """
    scores = net.importance if scores is None else scores
    if scores is None:
        raise DomainError("no importance scores; run gate_importance first")
    alive = list(net.alive_widths())
    if k < 1:
        raise DomainError("k must be >= 1")
    if sum(a - 1 for a in alive) < k:
        raise PruneExhausted(f"only {sum(a - 1 for a in alive)} removable channels, asked for {k}")
    layer_idx, chan_idx, vals = [], [], []
    for l, (s, g) in enumerate(zip(scores, net.gates)):
        ch = np.flatnonzero(g.alive)
        layer_idx.append(np.full(len(ch), l))
        chan_idx.append(ch)
        vals.append(s[ch])
    layer_idx = np.concatenate(layer_idx)
    chan_idx = np.concatenate(chan_idx)
    vals = np.concatenate(vals)
    order = np.lexsort((chan_idx, layer_idx, vals))
    removed = []
    for i in order:
        l, c = int(layer_idx[i]), int(chan_idx[i])
        if alive[l] <= 1:
            continue
        net.kill(l, c)
        alive[l] -= 1
        removed.append((l, c))
        if len(removed) == k:
            break
    return removed


def _start(arch, data, cfg, widths):
    widths = arch.default_widths if widths is None else tuple(widths)
    net = init_network(arch, widths, cfg.seed)
    if cfg.pretrain_epochs:
        train(net, data, cfg.pretrain_schedule())
    x, y = data.train_split()
    stream = BatchStream(x, y, cfg.batch_size, cfg.seed + 7919)
    return net, _Proxy(stream, cfg.phase_lr(), cfg.momentum, cfg.weight_decay)


def _meta(arch, cfg, widths):
    return {"arch": arch.name, "seed": cfg.seed, "config": cfg.to_dict(),
            "initial_widths": list(widths), "initial_params": count_params(arch, widths)}


def iterative_prune(arch: ArchSpec, data: Dataset, cfg: PruneConfig, widths=None,
                    on_step: Callable[[int, tuple[int, ...]], None] | None = None) -> PruneTrajectory:
    """Run the pruning proxy and return its recorded trajectory.

    Records strictly decrease in parameter count: when a projection shortcut
    appears because block widths stopped matching, the count can rise by a
    step; such records are skipped.
    """
    net, proxy = _start(arch, data, cfg, widths)
    initial = net.total_alive()
    eps_count = cfg.eps_fraction * initial
    k = cfg.resolve_count(initial)
    traj = PruneTrajectory(arch.name, arch.num_prunable, meta=_meta(arch, cfg, net.widths))
    # a layer already at the one-channel floor can never lose a channel
    touched = [w <= 1 for w in net.alive_widths()]
    step = 0
    while net.total_alive() >= eps_count:
        removable = sum(a - 1 for a in net.alive_widths())
        if removable == 0:
            break
        gate_importance(net, data, cfg.q, _proxy=proxy)
        removed = prune_step(net, min(k, removable))
        for l, _ in removed:
            touched[l] = True
        step += 1
        phi = net.alive_widths()
        if on_step:
            on_step(step, phi)
        if not all(touched):
            continue
        tau = count_params(arch, phi)
        if traj.records and tau >= traj.records[-1].tau:
            log.debug("step %d: count %d did not decrease, not recorded", step, tau)
            continue
        traj.records.append(TrajectoryRecord(step, tau, phi))
    traj.meta["steps"] = step
    traj.meta["final_alive"] = net.total_alive()
    if not traj.records:
        raise EmptyTrajectoryError("pruning stopped before every layer lost a channel")
    return traj


def prune_to_fraction(arch: ArchSpec, data: Dataset, cfg: PruneConfig, fraction=0.5, widths=None):
    """Prune until exactly ``ceil(fraction * initial)`` channels remain.

    Returns the surviving width vector and the network.
    """
    net, proxy = _start(arch, data, cfg, widths)
    target = math.ceil(fraction * net.total_alive())
    if target < arch.num_prunable:
        raise DomainError(f"cannot keep {target} channels with {arch.num_prunable} layers of >= 1")
    k = cfg.resolve_count(net.total_alive())
    while net.total_alive() > target:
        gate_importance(net, data, cfg.q, _proxy=proxy)
        prune_step(net, min(k, net.total_alive() - target))
    return net.alive_widths(), net
