"""Two-party split training/inference over an in-memory message channel.

The bottom party (features) sends forward embeddings; the top party
(labels) answers with the gradient of its loss w.r.t. those embeddings.
Every exchange goes through a :class:`PartyChannel`, whose transcript can
be serialized to the ``SPLTLOG1`` binary format and replayed.
"""

import logging
import math
import struct
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from splitlab.autograd import Tape, Tensor
from splitlab.errors import ContractError, DivergenceError, FramingError, NonFiniteError, ShapeError
from splitlab.losses import LossConfig, combined_loss, flip_labels
from splitlab.nn import AdamState, adam_step

log = logging.getLogger(__name__)

LOG_MAGIC = b"SPLTLOG1"
BOTTOM_TO_TOP = 0
TOP_TO_BOTTOM = 1
EMBEDDING = 0
EMBEDDING_GRAD = 1
_FRAME_HEAD = struct.Struct("<BIIBII")


@dataclass
class Message:
    direction: int
    epoch: int
    batch: int
    kind: int
    payload: np.ndarray

    def encode(self):
        p = np.ascontiguousarray(self.payload, dtype="<f8")
        rows, cols = p.shape
        body = _FRAME_HEAD.pack(self.direction, self.epoch, self.batch, self.kind, rows, cols) + p.tobytes()
        return struct.pack("<I", len(body)) + body


class PartyChannel:
    """FIFO of framed messages between the two parties.

    Only message headers are retained unless ``record`` is set, in which
    case payload copies are kept for the transcript.
    """

    def __init__(self, embedding_dim, record=False):
        self.embedding_dim = embedding_dim
        self.record = record
        self._queue = deque()
        self.headers = []  # (direction, epoch, batch, kind, rows, cols)
        self.messages = []

    def send(self, msg):
        if msg.payload.ndim != 2 or msg.payload.shape[1] != self.embedding_dim:
            raise ShapeError(f"payload shape {msg.payload.shape} does not match split width {self.embedding_dim}")
        expected = EMBEDDING if msg.direction == BOTTOM_TO_TOP else EMBEDDING_GRAD
        if msg.kind != expected:
            raise ContractError("embeddings flow bottom->top, embedding gradients top->bottom")
        if self.headers:
            last = self.headers[-1]
            if last[3] == msg.kind:
                raise ContractError("messages must alternate embedding -> embedding_grad")
        elif msg.kind != EMBEDDING:
            raise ContractError("the first message must be an embedding")
        self.headers.append((msg.direction, msg.epoch, msg.batch, msg.kind) + msg.payload.shape)
        if self.record:
            self.messages.append(Message(msg.direction, msg.epoch, msg.batch, msg.kind, msg.payload.copy()))
        self._queue.append(msg)

    def receive(self):
        return self._queue.popleft()

    def __len__(self):
        return len(self.headers)

    def kinds_toward(self, direction):
        return {h[3] for h in self.headers if h[0] == direction}

    def transcript(self):
        return encode_transcript(self.messages)


def encode_transcript(messages):
    return LOG_MAGIC + b"".join(m.encode() for m in messages)


def decode_transcript(blob):
    """Parse a ``SPLTLOG1`` log into messages; framing errors carry offsets."""
    if blob[: len(LOG_MAGIC)] != LOG_MAGIC:
        raise FramingError("bad transcript magic", 0)
    off = len(LOG_MAGIC)
    out = []
    while off < len(blob):
        start = off
        if len(blob) - off < 4:
            raise FramingError("truncated frame length", start)
        (length,) = struct.unpack_from("<I", blob, off)
        off += 4
        if length < _FRAME_HEAD.size or len(blob) - off < length:
            raise FramingError("truncated frame", start)
        direction, epoch, batch, kind, rows, cols = _FRAME_HEAD.unpack_from(blob, off)
        if length != _FRAME_HEAD.size + 8 * rows * cols:
            raise FramingError("frame length disagrees with payload shape", start)
        payload = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=off + _FRAME_HEAD.size)
        out.append(Message(direction, epoch, batch, kind, payload.reshape(rows, cols).astype(np.float64)))
        off += length
    return out


def write_transcript(channel, path):
    with open(path, "wb") as fh:
        fh.write(channel.transcript())


def replay_logits(blob, model):
    """Top-model logits for every embedding frame in a transcript."""
    return [
        model.forward_top(Tensor(m.payload)).values
        for m in decode_transcript(blob)
        if m.kind == EMBEDDING
    ]


def split_infer(model, X, channel=None, batch_size=64):
    """Run inference through the channel; returns the concatenated logits."""
    channel = PartyChannel(model.embedding_dim) if channel is None else channel
    outs = []
    for b, lo in enumerate(range(0, len(X), batch_size)):
        z = model.forward_bottom(Tensor(X[lo : lo + batch_size])).values
        channel.send(Message(BOTTOM_TO_TOP, 0, b, EMBEDDING, z))
        msg = channel.receive()
        outs.append(model.forward_top(Tensor(msg.payload)).values)
        # inference acknowledges with an empty gradient frame to keep framing uniform
        channel.send(Message(TOP_TO_BOTTOM, 0, b, EMBEDDING_GRAD, np.zeros((0, model.embedding_dim))))
        channel.receive()
    if not outs:
        return np.zeros((0, model.out_dim))
    return np.concatenate(outs)


# --- training ---------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 20


@dataclass
class TrainRunResult:
    model: object
    history: list
    selection_rule: str
    best_epoch: int
    best_val_accuracy: float
    seed: int
    wall_clock: float
    channel: PartyChannel = None
    meta: dict = field(default_factory=dict)


def selection_window(defense, epochs):
    """Eligible 1-based epoch range for checkpoint selection."""
    if defense in ("pe", "dcor"):
        return max(1, math.ceil(0.9 * epochs)), epochs
    if defense == "label_dp":
        return max(1, math.ceil(0.5 * epochs)), epochs
    return 1, epochs


def _accuracy(model, X, Y):
    if len(Y) == 0:
        return float("nan")
    return float(np.mean(np.argmax(model.predict_logits(X), axis=1) == Y))


def split_step(model, xb, yb, loss_config, adam_bottom, adam_top, channel, epoch=0, batch=0, n_classes=None):
    """One protocol round: embedding out, gradient back, both parties update."""
    # bottom party
    with Tape() as bottom_tape:
        z = model.forward_bottom(Tensor(xb))
    channel.send(Message(BOTTOM_TO_TOP, epoch, batch, EMBEDDING, z.values))

    # top party
    received = Tensor(channel.receive().payload, requires_grad=True)
    with Tape() as top_tape:
        logits = model.forward_top(received)
        loss = combined_loss(logits, yb, received, loss_config, n_classes)
    top_tape.backward(loss)
    channel.send(Message(TOP_TO_BOTTOM, epoch, batch, EMBEDDING_GRAD, received.grad))
    adam_step(adam_top)

    # bottom party
    bottom_tape.backward_from(z, channel.receive().payload)
    adam_step(adam_bottom)
    model.zero_grad()
    return loss.item()


def centralized_step(model, xb, yb, loss_config, adam, n_classes=None):
    """The same update computed on the unsplit model with a single tape."""
    with Tape() as tape:
        z = model.forward_bottom(Tensor(xb))
        logits = model.forward_top(z)
        loss = combined_loss(logits, yb, z, loss_config, n_classes)
    tape.backward(loss)
    adam_step(adam)
    model.zero_grad()
    return loss.item()


def make_adams(model, cfg):
    hyper = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    return AdamState(model.bottom_params(), **hyper), AdamState(model.top_params(), **hyper)


def split_train(model, data, loss_config=None, train_config=None, seed=0, record=False):
    """Train ``model`` in place through the protocol and select a checkpoint.

    Selection: vanilla uses early stopping with ``patience``; pe/dcor keep
    the best validation epoch in the last 10% of epochs; label_dp in the
    last 50%.  The returned result holds a copy of the selected model.
    """
    loss_config = loss_config or LossConfig()
    cfg = train_config or TrainConfig()
    if model.in_dim != data.n_features or model.out_dim != data.n_classes:
        raise ShapeError(
            f"model maps {model.in_dim}->{model.out_dim} but data has {data.n_features} features, "
            f"{data.n_classes} classes"
        )
    if loss_config.needs_norm and not model.split_has_norm:
        log.warning("defense %s without layer_norm at the split", loss_config.defense)
    t0 = time.perf_counter()
    xtr, ytr = data.train
    xva, yva = data.validation
    if loss_config.defense == "label_dp":
        ytr = flip_labels(ytr, loss_config.flip_ratio, data.n_classes, seed)
    channel = PartyChannel(model.embedding_dim, record=record)
    adam_bottom, adam_top = make_adams(model, cfg)
    rng = np.random.default_rng(seed)
    lo, hi = selection_window(loss_config.defense, cfg.epochs)
    rule = "early_stopping" if loss_config.defense == "vanilla" else f"best_val_epochs_{lo}_{hi}"

    best_state, best_epoch, best_acc = model.state(), 0, -1.0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(ytr))
        losses = []
        for b, start in enumerate(range(0, len(perm), cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            try:
                loss = split_step(model, xtr[idx], ytr[idx], loss_config, adam_bottom, adam_top,
                                  channel, epoch, b, data.n_classes)
            except NonFiniteError as exc:
                loss, cause = float("nan"), exc
            else:
                cause = None
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"training diverged at epoch {epoch} (defense={loss_config.defense}, "
                    f"alpha={loss_config.alpha}, flip_ratio={loss_config.flip_ratio})",
                    loss_config.defense, loss_config.strength, epoch,
                ) from cause
            losses.append(loss)
        val_acc = _accuracy(model, xva, yva)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_accuracy": val_acc})
        if lo <= epoch <= hi and val_acc >= best_acc:
            best_state, best_epoch, best_acc = model.state(), epoch, val_acc
        if loss_config.defense == "vanilla" and epoch - best_epoch >= cfg.patience:
            break

    chosen = model.clone()
    chosen.load_state(best_state)
    return TrainRunResult(
        model=chosen,
        history=history,
        selection_rule=rule,
        best_epoch=best_epoch,
        best_val_accuracy=best_acc if best_epoch else float("nan"),
        seed=seed,
        wall_clock=time.perf_counter() - t0,
        channel=channel,
        meta={"train_config": cfg.__dict__.copy(), "loss_config": loss_config.__dict__.copy()},
    )
