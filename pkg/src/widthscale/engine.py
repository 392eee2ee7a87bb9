"""Small numpy training engine with per-channel gates.

Every prunable layer is followed by normalization (optional) and a gate: a
per-channel multiplicative scalar whose loss gradient is the pruning signal.
Gates stay at 1 during training; a pruned channel has its gate set to 0 and
every parameter that feeds only that channel frozen.

All arithmetic is float64 and single-path, so a fixed seed gives
bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .arch import ArchSpec, Family, LayerKind, check_widths, layer_widths, resolve_shortcuts, ShortcutKind
from .data import Dataset
from .errors import DomainError, TrainingDivergence

NORM_EPS = 1e-5
NORM_MOMENTUM = 0.1


class Param:
    __slots__ = ("value", "grad", "velocity", "frozen")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)
        self.velocity = np.zeros_like(value)
        self.frozen = np.zeros(value.shape, dtype=bool)


def _uniform(rng, shape, fan_in, gain=math.sqrt(6.0)):
    bound = gain / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    def params(self) -> list[Param]:
        return []

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError


class Dense(Module):
    def __init__(self, fan_in, fan_out, rng, classifier=False):
        gain = 1.0 if classifier else math.sqrt(6.0)
        self.w = Param(_uniform(rng, (fan_out, fan_in), fan_in, gain))
        self.b = Param(_uniform(rng, (fan_out,), fan_in, 1.0) if classifier else np.zeros(fan_out))

    def params(self):
        return [self.w, self.b]

    def forward(self, x, train):
        self.x = x
        return x @ self.w.value.T + self.b.value

    def backward(self, g):
        self.w.grad += g.T @ self.x
        self.b.grad += g.sum(axis=0)
        return g @ self.w.value


def _pad(x, p):
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x


def _windows(xp, k, stride, ho, wo):
    # (N, C, Ho, Wo, kh, kw)
    v = sliding_window_view(xp, k, axis=(2, 3))
    return v[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]


def _scatter(dwin, shape, k, stride, p):
    """Adjoint of _windows followed by padding."""
    n, c, h, w = shape
    ho, wo = dwin.shape[2:4]
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p))
    for i in range(k[0]):
        for j in range(k[1]):
            dxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += dwin[..., i, j]
    return dxp[:, :, p : p + h, p : p + w] if p else dxp


class Conv(Module):
    """Dense 2-d convolution, 'same' padding, no bias."""

    def __init__(self, cin, cout, kernel, stride, rng):
        self.k = tuple(kernel)
        self.stride = stride
        self.pad = kernel[0] // 2
        self.w = Param(_uniform(rng, (cout, cin, *kernel), cin * kernel[0] * kernel[1]))

    def params(self):
        return [self.w]

    def _out_hw(self, h, w):
        return ((h + 2 * self.pad - self.k[0]) // self.stride + 1,
                (w + 2 * self.pad - self.k[1]) // self.stride + 1)

    def forward(self, x, train):
        n, c, h, w = x.shape
        ho, wo = self._out_hw(h, w)
        self.shape = x.shape
        win = _windows(_pad(x, self.pad), self.k, self.stride, ho, wo)
        self.cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)
        cout = self.w.value.shape[0]
        out = self.cols @ self.w.value.reshape(cout, -1).T
        return out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(self, g):
        n, cout, ho, wo = g.shape
        gf = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        self.w.grad += (gf.T @ self.cols).reshape(self.w.value.shape)
        dcols = (gf @ self.w.value.reshape(cout, -1)).reshape(n, ho, wo, self.shape[1], *self.k)
        return _scatter(dcols.transpose(0, 3, 1, 2, 4, 5), self.shape, self.k, self.stride, self.pad)


class Depthwise(Module):
    def __init__(self, channels, kernel, stride, rng):
        self.k = tuple(kernel)
        self.stride = stride
        self.pad = kernel[0] // 2
        self.w = Param(_uniform(rng, (channels, *kernel), kernel[0] * kernel[1]))

    def params(self):
        return [self.w]

    def forward(self, x, train):
        n, c, h, w = x.shape
        ho = (h + 2 * self.pad - self.k[0]) // self.stride + 1
        wo = (w + 2 * self.pad - self.k[1]) // self.stride + 1
        self.shape = x.shape
        self.win = _windows(_pad(x, self.pad), self.k, self.stride, ho, wo)
        return np.einsum("nchwij,cij->nchw", self.win, self.w.value)

    def backward(self, g):
        self.w.grad += np.einsum("nchw,nchwij->cij", g, self.win)
        dwin = g[..., None, None] * self.w.value[None, :, None, None]
        return _scatter(dwin, self.shape, self.k, self.stride, self.pad)


def _channel_view(v, ndim):
    return v if ndim == 2 else v[None, :, None, None]


class Norm(Module):
    """Per-channel standardization with learned scale and shift.

    Batch statistics in training mode, running averages in evaluation mode.
    """

    def __init__(self, channels):
        self.gamma = Param(np.ones(channels))
        self.beta = Param(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.update_stats = True

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x, train):
        axes = (0,) if x.ndim == 2 else (0, 2, 3)
        cv = lambda v: _channel_view(v, x.ndim)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if self.update_stats:
                m = x.size // x.shape[1]
                unbiased = var * m / max(m - 1, 1)
                self.running_mean = (1 - NORM_MOMENTUM) * self.running_mean + NORM_MOMENTUM * mean
                self.running_var = (1 - NORM_MOMENTUM) * self.running_var + NORM_MOMENTUM * unbiased
        else:
            mean, var = self.running_mean, self.running_var
        self.train = train
        self.axes = axes
        self.inv_std = 1.0 / np.sqrt(var + NORM_EPS)
        self.xhat = (x - cv(mean)) * cv(self.inv_std)
        return self.xhat * cv(self.gamma.value) + cv(self.beta.value)

    def backward(self, g):
        nd = g.ndim
        cv = lambda v: _channel_view(v, nd)
        self.gamma.grad += (g * self.xhat).sum(axis=self.axes)
        self.beta.grad += g.sum(axis=self.axes)
        dxhat = g * cv(self.gamma.value)
        if not self.train:
            return dxhat * cv(self.inv_std)
        m = g.size // g.shape[1]
        s1 = dxhat.sum(axis=self.axes)
        s2 = (dxhat * self.xhat).sum(axis=self.axes)
        return cv(self.inv_std / m) * (m * dxhat - cv(s1) - self.xhat * cv(s2))


class Gate(Module):
    def __init__(self, channels):
        self.z = np.ones(channels)
        self.alive = np.ones(channels, dtype=bool)
        self.grad = np.zeros(channels)

    def forward(self, x, train):
        self.x = x
        nd = x.ndim
        return np.where(_channel_view(self.alive, nd), x * _channel_view(self.z, nd), 0.0)

    def backward(self, g):
        axes = (0,) if g.ndim == 2 else (0, 2, 3)
        self.grad += (g * self.x).sum(axis=axes)
        nd = g.ndim
        return np.where(_channel_view(self.alive, nd), g * _channel_view(self.z, nd), 0.0)


class ReLU(Module):
    def forward(self, x, train):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, g):
        return np.where(self.mask, g, 0.0)


class MaxPool2(Module):
    """2x2 max-pool; skipped when the map is already smaller than 2x2."""

    def forward(self, x, train):
        n, c, h, w = x.shape
        self.shape = x.shape
        if h < 2 or w < 2:
            self.skip = True
            return x
        self.skip = False
        ho, wo = h // 2, w // 2
        v = x[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
        self.arg = v.argmax(axis=-1)
        return np.take_along_axis(v, self.arg[..., None], axis=-1)[..., 0]

    def backward(self, g):
        if self.skip:
            return g
        n, c, h, w = self.shape
        ho, wo = g.shape[2:]
        dv = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(dv, self.arg[..., None], g[..., None], axis=-1)
        dx = np.zeros(self.shape)
        dx[:, :, : 2 * ho, : 2 * wo] = dv.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
        return dx


class GlobalAvgPool(Module):
    def forward(self, x, train):
        self.shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, g):
        n, c, h, w = self.shape
        return np.broadcast_to(g[:, :, None, None] / (h * w), self.shape).copy()


class Sequential(Module):
    def __init__(self, modules):
        self.modules = list(modules)

    def params(self):
        return [p for m in self.modules for p in m.params()]

    def forward(self, x, train):
        for m in self.modules:
            x = m.forward(x, train)
        return x

    def backward(self, g):
        for m in reversed(self.modules):
            g = m.backward(g)
        return g


class Block(Module):
    """Residual block: branch(x) + shortcut(x), optionally followed by ReLU."""

    def __init__(self, branch: Sequential, shortcut: Sequential | None, post_relu: bool):
        self.branch = branch
        self.shortcut = shortcut
        self.relu = ReLU() if post_relu else None

    def params(self):
        return self.branch.params() + (self.shortcut.params() if self.shortcut else [])

    def forward(self, x, train):
        out = self.branch.forward(x, train)
        out = out + (self.shortcut.forward(x, train) if self.shortcut else x)
        return self.relu.forward(out, train) if self.relu else out

    def backward(self, g):
        if self.relu:
            g = self.relu.backward(g)
        dx = self.branch.backward(g)
        return dx + (self.shortcut.backward(g) if self.shortcut else g)


@dataclass
class GatedLayer:
    """Bookkeeping for one prunable layer: its gate and the parameters that
    feed only its channels (frozen along axis 0 when a channel is pruned)."""

    gate: Gate
    feeders: list[Param] = field(default_factory=list)


class Network:
    """A trainable instance of an ArchSpec at a fixed width configuration."""

    def __init__(self, arch: ArchSpec, widths, body: Sequential, head: Dense, gated: list[GatedLayer]):
        self.arch = arch
        self.widths = tuple(widths)
        self.body = body
        self.head = head
        self.gated = gated
        self.importance: list[np.ndarray] | None = None

    # -- structure -----------------------------------------------------------
    def params(self) -> list[Param]:
        return self.body.params() + self.head.params()

    @property
    def gates(self) -> list[Gate]:
        return [g.gate for g in self.gated]

    def alive_widths(self) -> tuple[int, ...]:
        return tuple(int(g.gate.alive.sum()) for g in self.gated)

    def total_alive(self) -> int:
        return sum(self.alive_widths())

    def kill(self, layer: int, channel: int) -> None:
        gl = self.gated[layer]
        if not gl.gate.alive[channel]:
            raise DomainError(f"channel {channel} of layer {layer} is already pruned")
        if gl.gate.alive.sum() <= 1:
            raise DomainError(f"layer {layer} must keep at least one channel")
        gl.gate.alive[channel] = False
        gl.gate.z[channel] = 0.0
        for p in gl.feeders:
            p.frozen[channel] = True
            p.velocity[channel] = 0.0

    # -- computation ---------------------------------------------------------
    def forward(self, x, train=False):
        return self.head.forward(self.body.forward(x, train), train)

    def zero_grad(self):
        for p in self.params():
            p.grad.fill(0.0)
        for g in self.gates:
            g.grad.fill(0.0)

    def loss_and_grad(self, x, y, train=True, update_stats=True) -> float:
        """Mean cross-entropy on (x, y); fills parameter and gate gradients."""
        for m in self._norms():
            m.update_stats = update_stats
        self.zero_grad()
        logits = self.forward(x, train)
        loss, dlogits = _softmax_xent(logits, y)
        self.body.backward(self.head.backward(dlogits))
        for m in self._norms():
            m.update_stats = True
        return loss

    def loss(self, x, y, train=True) -> float:
        for m in self._norms():
            m.update_stats = False
        try:
            return _softmax_xent(self.forward(x, train), y)[0]
        finally:
            for m in self._norms():
                m.update_stats = True

    def _norms(self):
        out = []

        def walk(mod):
            if isinstance(mod, Norm):
                out.append(mod)
            elif isinstance(mod, Sequential):
                for m in mod.modules:
                    walk(m)
            elif isinstance(mod, Block):
                walk(mod.branch)
                if mod.shortcut:
                    walk(mod.shortcut)

        walk(self.body)
        return out


def _softmax_xent(logits, y):
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    n = len(y)
    loss = -logp[np.arange(n), y].mean()
    d = np.exp(logp)
    d[np.arange(n), y] -= 1.0
    return float(loss), d / n


def init_network(arch: ArchSpec, widths, seed: int) -> Network:
    """Build a network with fan-in scaled uniform weights; deterministic in seed."""
    widths = check_widths(arch, widths)
    rng = np.random.default_rng(seed)
    lw = layer_widths(arch, widths)
    gated: list[GatedLayer] = []
    built: list[Module] = []  # one Sequential per layer

    for layer, (cin, cout) in zip(arch.layers, lw):
        mods: list[Module] = []
        feeders: list[Param] = []
        if layer.kind is LayerKind.DENSE:
            op = Dense(cin, cout, rng)
            feeders += [op.w, op.b]
        elif layer.kind is LayerKind.DEPTHWISE:
            op = Depthwise(cout, layer.kernel, layer.stride, rng)
        else:
            op = Conv(cin, cout, layer.kernel, layer.stride, rng)
            feeders.append(op.w)
        mods.append(op)
        if layer.norm:
            nm = Norm(cout)
            mods.append(nm)
            feeders += [nm.gamma, nm.beta]
        if layer.prunable:
            gate = Gate(cout)
            mods.append(gate)
            gated.append(GatedLayer(gate, feeders))
        if layer.relu:
            mods.append(ReLU())
        if layer.pool:
            mods.append(MaxPool2())
        built.append(Sequential(mods))

    body: list[Module] = []
    shortcuts = resolve_shortcuts(arch, widths) if arch.blocks else []
    starts = {a: (b, kind) for (a, b), kind in zip(arch.blocks, shortcuts)}
    i = 0
    while i < len(arch.layers):
        if i in starts:
            end, kind = starts[i]
            branch = Sequential(built[i:end])
            sc = None
            if kind is ShortcutKind.CONV1X1:
                cin, cout = lw[i][0], lw[end - 1][1]
                stride = math.prod(arch.layers[j].stride for j in range(i, end))
                mods = [Conv(cin, cout, (1, 1), stride, rng)]
                if arch.layers[end - 1].norm:
                    mods.append(Norm(cout))
                sc = Sequential(mods)
            body.append(Block(branch, sc, post_relu=arch.family is Family.RESIDUAL))
            i = end
        else:
            body.append(built[i])
            i += 1
    if arch.family is not Family.DENSE:
        body.append(GlobalAvgPool())
    head = Dense(lw[-1][1], arch.num_classes, rng, classifier=True)
    return Network(arch, widths, Sequential(body), head, gated)


@dataclass(frozen=True)
class TrainSchedule:
    learning_rate: float = 0.1
    momentum: float = 0.5
    weight_decay: float = 5e-4
    epochs: int = 10
    milestones: tuple[int, ...] = ()
    decay: float = 0.1
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise DomainError("need learning_rate >= 0, momentum in [0, 1), weight_decay >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise DomainError("need epochs >= 0 and batch_size >= 1")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.decay ** sum(epoch >= m for m in self.milestones)


class BatchStream:
    """Endless mini-batches, reshuffled every pass with a seeded generator."""

    def __init__(self, x, y, batch_size, seed):
        if len(x) == 0:
            raise DomainError("empty training split")
        self.x, self.y = x, y
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    def epoch_batches(self):
        order = self.rng.permutation(len(self.x))
        for s in range(0, len(order), self.batch_size):
            idx = order[s : s + self.batch_size]
            yield self.x[idx], self.y[idx]

    def next(self):
        if self._pos >= len(self._order):
            self._order = self.rng.permutation(len(self.x))
            self._pos = 0
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return self.x[idx], self.y[idx]


def sgd_step(net: Network, lr: float, momentum: float, weight_decay: float) -> None:
    """SGD with momentum and coupled weight decay; frozen entries never move."""
    for p in net.params():
        d = p.grad + weight_decay * p.value
        d[p.frozen] = 0.0
        p.velocity *= momentum
        p.velocity += d
        p.value -= lr * p.velocity


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)

    @property
    def best_accuracy(self) -> float:
        return max(self.val_accuracy) if self.val_accuracy else float("nan")


def train(net: Network, data: Dataset, sched: TrainSchedule, eval_every_epoch=False,
          step_offset=0) -> TrainLog:
    """Train in place; returns one mean training loss per epoch."""
    x, y = data.train_split()
    stream = BatchStream(x, y, sched.batch_size, sched.seed)
    log = TrainLog()
    step = step_offset
    for epoch in range(sched.epochs):
        lr = sched.lr_at(epoch)
        total, count = 0.0, 0
        for xb, yb in stream.epoch_batches():
            loss = net.loss_and_grad(xb, yb)
            if not math.isfinite(loss):
                raise TrainingDivergence(step, loss)
            sgd_step(net, lr, sched.momentum, sched.weight_decay)
            total += loss * len(yb)
            count += len(yb)
            step += 1
        log.losses.append(total / count)
        if eval_every_epoch:
            log.val_accuracy.append(evaluate(net, data)[0])
    return log


def evaluate(net: Network, data: Dataset, split="val", batch_size=512) -> tuple[float, float]:
    """(accuracy, mean loss) in evaluation mode; ties go to the lowest class."""
    x, y = data.val_split() if split == "val" else data.train_split()
    if len(x) == 0:
        raise DomainError(f"empty {split} split")
    correct, loss = 0, 0.0
    for s in range(0, len(x), batch_size):
        xb, yb = x[s : s + batch_size], y[s : s + batch_size]
        logits = net.forward(xb, train=False)
        correct += int((logits.argmax(axis=1) == yb).sum())
        loss += _softmax_xent(logits, yb)[0] * len(yb)
    return correct / len(x), loss / len(x)
