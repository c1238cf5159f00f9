"""The SGD training loop shared by the CLI and the estimator."""

import logging
import math
from dataclasses import dataclass, field

from . import model
from .data import next_batch
from .errors import NonFiniteError
from .optim import OptimizerState, lr_at, sgd_step

logger = logging.getLogger(__name__)


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def append(self, iteration, lr, loss):
        self.rows.append((iteration, lr, loss))

    def to_csv(self):
        lines = ["iter,lr,train_loss"]
        lines += [f"{it},{lr:.6g},{loss:.6f}" for it, lr, loss in self.rows]
        return "\n".join(lines) + "\n"


def train(
    state,
    train_set,
    mean_image,
    cfg,
    optimizer=None,
    until=None,
    on_log=None,
    on_checkpoint=None,
):
    """Run SGD from ``optimizer.iteration`` up to iteration ``until``.

    ``until`` defaults to ``cfg.max_iter``. ``on_log(iteration, lr, loss)``
    fires every ``cfg.log_every`` iterations and ``on_checkpoint(state,
    optimizer)`` every ``cfg.checkpoint_every``. Parameters are updated in
    place. Returns the optimizer state and a :class:`TrainLog`.
    """
    optimizer = optimizer or OptimizerState.zeros_like(state.params)
    until = cfg.max_iter if until is None else until
    crop = state.spec.input_size
    log = TrainLog()
    while optimizer.iteration < until:
        it = optimizer.iteration
        batch = next_batch(train_set, mean_image, crop, cfg.batch_size, cfg.seed, it, "train")
        loss, grads = model.backward(
            state, batch.images, batch.labels, seed=(cfg.seed, it), dropout_rate=cfg.dropout_rate
        )
        if not math.isfinite(loss):
            raise NonFiniteError(f"non-finite training loss at iteration {it}")
        lr = lr_at(it, cfg)
        sgd_step(optimizer, state.params, grads, cfg, lr=lr)
        done = optimizer.iteration
        if cfg.log_every and (done % cfg.log_every == 0 or done == until):
            log.append(done, lr, loss)
            logger.debug("iter %d lr %g loss %.6f", done, lr, loss)
            if on_log is not None:
                on_log(done, lr, loss)
        if on_checkpoint is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            on_checkpoint(state, optimizer)
    return optimizer, log
