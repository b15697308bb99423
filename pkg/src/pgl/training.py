"""The training loop: epoch scheduling, Nesterov SGD with weight decay and
cosine annealing, local and globally-guided epochs, and evaluation.

Three regimes share one loop.  ``dgl`` runs every epoch on per-block local
losses.  ``bp`` runs every epoch end-to-end with the heads idle.  ``pgl``
interleaves: local epochs, punctuated by Q guided epochs whenever the epoch
index crosses a multiple of the period P.  During guidance the global loss
updates the backbone while local losses update only the auxiliary heads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import layers as L
from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor

LOCAL = "local"
GUIDED = "guided"

REGIMES = ("pgl", "dgl", "bp")


@dataclass
class Schedule:
    E: int
    P: int = 10
    Q: int = 2
    regime: str = "pgl"

    def validate(self):
        if self.E < 1:
            raise ConfigError(f"E must be >= 1, got {self.E}")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.regime == "pgl" and not 1 <= self.Q < self.P:
            # P > E is allowed: guidance simply never fires (collapses to dgl).
            raise ConfigError(f"pgl needs 1 <= Q < P, got P={self.P}, Q={self.Q}")


def mode_of_epoch(e: int, schedule: Schedule) -> str:
    """Guided iff some k >= 1 has kP <= e < kP + Q; epoch 0 is always local."""
    if not 0 <= e < schedule.E:
        raise ConfigError(f"epoch {e} out of [0, {schedule.E})")
    if schedule.regime == "dgl":
        return LOCAL
    if schedule.regime == "bp":
        return GUIDED
    return GUIDED if e >= schedule.P and e % schedule.P < schedule.Q else LOCAL


def guided_epoch_count(schedule: Schedule) -> int:
    return sum(1 for e in range(schedule.E) if mode_of_epoch(e, schedule) == GUIDED)


def lr_at(e: int, E: int, lr0: float) -> float:
    """Cosine annealing from lr0 at epoch 0 toward 0 at epoch E."""
    if not 0 <= e < E:
        raise ConfigError(f"epoch {e} out of [0, {E})")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * e / E))


class NesterovSGD:
    """g <- grad + wd*theta; v <- mu*v + g; theta <- theta - lr*(g + mu*v).

    Velocities live per parameter name and persist across epoch-mode
    switches.  Weight decay applies to every parameter, biases and batchnorm
    affine terms included.
    """

    def __init__(self, momentum: float = 0.9, weight_decay: float = 1e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {}

    def step(self, named_params, grads: dict, lr: float):
        mu = np.float32(self.momentum)
        wd = np.float32(self.weight_decay)
        lr = np.float32(lr)
        for name, p in named_params:
            g = grads.get(p.node_id)
            if g is None:
                raise ContractError(f"no gradient for parameter {name}")
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {list(g.shape)} != param shape {list(p.shape)} ({name})")
            gd = g.data + wd * p.data
            v = self.velocity.get(name)
            v = gd if v is None else mu * v + gd
            self.velocity[name] = v
            p.data -= lr * (gd + mu * v)


# ---------------------------------------------------------------------------
# epochs

def local_epoch(model, batch_list, opt: NesterovSGD, lr: float) -> list:
    """One sweep of greedy per-block updates.

    For each mini-batch, blocks run in order: detach the boundary input,
    forward the block and its head, backpropagate the block-local loss, and
    step that block's parameters together with its head.  The activation
    handed to the next block comes from the pre-update weights (one forward
    sweep per batch).  Returns per-block mean losses.
    """
    J = model.J
    sums = [0.0] * J
    seen = 0
    for x, y in batch_list:
        T.clear_tape()
        n = len(y)
        h = Tensor(x)
        for j in range(1, J + 1):
            x_j, logits = model.forward_local(h, j, train=True)
            loss = L.softmax_cross_entropy(logits, y)
            grads = T.backward(loss)
            params = list(model.block_named_params(j))
            if j < J:
                params += list(model.head_named_params(j))
            opt.step(params, grads, lr)
            sums[j - 1] += loss.item() * n
            h = x_j.detach()
        seen += n
    T.clear_tape()
    return [s / seen for s in sums]


def guided_epoch(model, batch_list, opt: NesterovSGD, lr: float,
                 update_aux: bool = True):
    """One sweep of global-loss updates over the whole backbone.

    A single forward pass serves both losses: the global cross-entropy steps
    every block, and (when ``update_aux``) each head is refreshed from its
    detached boundary copy so the heads stay off the global tape.  Returns
    (mean global loss, per-block aux losses or None).
    """
    J = model.J
    gsum = 0.0
    asums = [0.0] * (J - 1)
    seen = 0
    theta = [(name, p) for j in range(1, J + 1) for name, p in model.block_named_params(j)]
    for x, y in batch_list:
        T.clear_tape()
        n = len(y)
        logits, boundary = model.forward_global(Tensor(x), train=True)
        gloss = L.softmax_cross_entropy(logits, y)
        grads = T.backward(gloss)
        opt.step(theta, grads, lr)
        if update_aux:
            for j in range(1, J):
                alogits = model.aux_logits(boundary[j - 1], j, train=True)
                aloss = L.softmax_cross_entropy(alogits, y)
                agrads = T.backward(aloss)
                opt.step(list(model.head_named_params(j)), agrads, lr)
                asums[j - 1] += aloss.item() * n
        gsum += gloss.item() * n
        seen += n
    T.clear_tape()
    aux_means = [s / seen for s in asums] if (update_aux and J > 1) else None
    return gsum / seen, aux_means


def evaluate(model, batch_list) -> float:
    """Fraction of argmax(global logits) == label, in eval mode."""
    correct = 0
    total = 0
    with T.no_grad():
        for x, y in batch_list:
            logits, _ = model.forward_global(Tensor(x), train=False)
            pred = np.argmax(logits.data, axis=1)
            correct += int((pred == np.asarray(y)).sum())
            total += len(y)
    return correct / total


# ---------------------------------------------------------------------------
# the full loop

@dataclass
class MetricsRecord:
    epoch: int
    mode: str
    lr: float
    global_loss: float | None
    local_losses: list          # length J; None where untracked
    train_acc: float
    test_acc: float


def train(config, force_mode: str | None = None):
    """Run the configured regime end to end.

    Returns (metrics records, model, optimizer).  ``force_mode`` overrides
    the schedule for every epoch; it exists for trajectory-equivalence
    diagnostics (e.g. an all-guided run compared against plain bp).
    """
    from . import data as D

    schedule = Schedule(config.epochs, config.P, config.Q, config.regime)
    schedule.validate()
    model = config.build_model()
    train_set, test_set = config.build_datasets()
    opt = NesterovSGD(config.momentum, config.weight_decay)

    J = model.J
    records = []
    for e in range(schedule.E):
        lr = lr_at(e, schedule.E, config.lr0)
        mode = force_mode if force_mode is not None else mode_of_epoch(e, schedule)
        batch_list = D.batches(train_set, config.batch_size, config.seed, e)
        if mode == LOCAL:
            local_losses = local_epoch(model, batch_list, opt, lr)
            global_loss = None
        else:
            global_loss, aux = guided_epoch(model, batch_list, opt, lr,
                                            update_aux=(config.regime != "bp"))
            local_losses = (aux + [None]) if aux is not None else [None] * J
        train_acc = evaluate(model, D.batches(train_set, config.batch_size, None, 0))
        test_acc = evaluate(model, D.batches(test_set, config.batch_size, None, 0))
        records.append(MetricsRecord(e, mode, lr, global_loss, list(local_losses),
                                     train_acc, test_acc))
    return records, model, opt
