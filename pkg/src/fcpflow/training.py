"""Maximum-likelihood training of :class:`~fcpflow.flowcore.FlowModel`.

The loss is the mean per-row negative log-likelihood. Each step builds a
fresh graph, back-propagates, clips the global gradient norm and applies an
Adam update.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .data import ProfileDataset, Scaler
from .errors import CheckpointError, ConfigurationError, ContractError, NumericError, TrainingError
from .flowcore import CouplingLayer, FCPBlock, FlowModel, LinearFactor, NormState

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    clip_norm: float = 10.0
    seed: int = 0
    alpha: float = 0.6
    blocks: int = 3
    hidden: int = 64
    eval_every: int = 0
    schedule: str = "constant"  # or "cosine"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigurationError("batch size must be at least 2")
        if self.lr < 0:
            raise ConfigurationError("learning rate must be non-negative")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if self.schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")

    def lr_at(self, epoch: int) -> float:
        if self.schedule == "cosine":
            return 0.5 * self.lr * (1.0 + math.cos(math.pi * epoch / self.epochs))
        return self.lr


# --- optimizer -----------------------------------------------------------


@dataclass
class OptimizerState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw) -> "OptimizerState":
        return cls([np.zeros_like(p.value) for p in params], [np.zeros_like(p.value) for p in params], **kw)


def clip_global_norm(grads, max_norm: float | None) -> tuple[list, float]:
    """Scale ``grads`` so their joint L2 norm is at most ``max_norm``. Returns (grads, norm)."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm is not None and norm > max_norm:
        factor = max_norm / norm
        grads = [g * factor for g in grads]
    return grads, norm


def optimizer_step(params, grads, state: OptimizerState, lr: float, clip_norm: float | None = None) -> float:
    """In-place Adam update; returns the pre-clip gradient norm."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("parameter, gradient and state lists differ in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    grads, norm = clip_global_norm(grads, clip_norm)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.value.shape:
            raise ContractError(f"gradient shape {g.shape} differs from parameter {p.value.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return norm


# --- training loop -------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    mean_nll: float
    wall_ms: float


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)

    @property
    def nll(self) -> np.ndarray:
        return np.array([r.mean_nll for r in self.records])

    def to_csv(self, path, timings: bool = False) -> None:
        # wall times are off by default so same-seed runs write identical files
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "mean_nll"] + (["wall_ms"] if timings else []))
            for r in self.records:
                w.writerow([r.epoch, repr(r.mean_nll)] + ([f"{r.wall_ms:.3f}"] if timings else []))


def build_model(T: int, B: int, config: TrainConfig) -> FlowModel:
    return FlowModel(
        T=T, B=B, K=config.blocks, hidden=(config.hidden, config.hidden), alpha=config.alpha, seed=config.seed
    )


def fit(dataset: ProfileDataset, config: TrainConfig, model: FlowModel | None = None):
    """Train on ``dataset`` as given (scale it first with :mod:`fcpflow.data`).

    Returns ``(model, log)``; the model is left in inference mode.
    """
    x_all, c_all = dataset.profiles, dataset.conditions
    n = x_all.shape[0]
    if n < config.batch_size:
        raise ContractError(f"dataset has {n} rows, fewer than batch size {config.batch_size}")
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    if model is None:
        model = build_model(dataset.T, dataset.B, config)
    model.scaler = dataset.scaler
    model.train()
    model.calibrate(x_all, c_all)
    params = model.parameters()
    opt = OptimizerState.for_params(params)
    rng = np.random.default_rng(seeds[1])
    train_log = TrainingLog()
    good_state = model.get_state()

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        lr = config.lr_at(epoch - 1)
        perm = rng.permutation(n)
        losses, weights = [], []
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start:start + config.batch_size]
            if idx.size < 2:
                continue
            dc.zero_grad(params)
            try:
                loss = model.nll(x_all[idx], c_all[idx])
            except NumericError as exc:
                model.set_state(good_state)
                raise TrainingError(f"epoch {epoch} batch {b}: {exc}", model.eval(), epoch, b) from exc
            value = float(loss.value[0, 0])
            if not math.isfinite(value):
                model.set_state(good_state)
                raise TrainingError(f"epoch {epoch} batch {b}: non-finite loss", model.eval(), epoch, b)
            good_state = model.get_state()
            dc.backward(loss)
            optimizer_step(params, [p.grad for p in params], opt, lr, config.clip_norm)
            losses.append(value)
            weights.append(idx.size)
        mean_nll = float(np.average(losses, weights=weights))
        train_log.records.append(EpochRecord(epoch, mean_nll, 1000.0 * (time.perf_counter() - t0)))
        if config.eval_every and epoch % config.eval_every == 0:
            log.info("epoch %d  mean nll %.5f", epoch, mean_nll)
    model.meta["train_config"] = asdict(config)
    return model.eval(), train_log


# --- checkpoints ---------------------------------------------------------


def _arr(a) -> dict:
    a = np.asarray(a)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _unarr(d, key: str, dtype=np.float64) -> np.ndarray:
    try:
        shape, data = d["shape"], d["data"]
    except (KeyError, TypeError):
        raise CheckpointError(f"array field {key!r} needs 'shape' and 'data'") from None
    a = np.asarray(data, dtype=dtype)
    if a.size != int(np.prod(shape)):
        raise CheckpointError(f"array field {key!r}: {a.size} values for shape {shape}")
    return a.reshape(shape)


def model_to_dict(model: FlowModel) -> dict:
    blocks = []
    for blk in model.blocks:
        nets = {}
        for name, net in blk.coupling.nets().items():
            nets[name] = {
                "widths": net.widths,
                "weights": [_arr(w.value) for w in net.weights],
                "biases": [_arr(b.value) for b in net.biases],
            }
        blocks.append({
            "norm": {
                "gamma": _arr(blk.norm.gamma),
                "beta": _arr(blk.norm.beta),
                "eps": blk.norm.eps,
                "momentum": blk.norm.momentum,
                "populated": blk.norm.populated,
            },
            "linear": {
                "perm": _arr(blk.linear.perm),
                "sign": _arr(blk.linear.sign),
                "lower": _arr(blk.linear.lower.value),
                "upper": _arr(blk.linear.upper.value),
                "log_diag": _arr(blk.linear.log_diag.value),
            },
            "coupling": nets,
        })
    return {
        "format_version": FORMAT_VERSION,
        "K": model.K,
        "T": model.T,
        "B": model.B,
        "alpha": model.alpha,
        "validate_alpha": model.validate_alpha,
        "hidden": list(model.hidden),
        "scaler": None if model.scaler is None else model.scaler.to_dict(),
        "meta": model.meta,
        "blocks": blocks,
    }


def _field(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise CheckpointError(f"checkpoint is missing field {where}{key!r}")
    return d[key]


def model_from_dict(doc: dict) -> FlowModel:
    version = _field(doc, "format_version", "")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r} (expected {FORMAT_VERSION})")
    K, T, B = (int(_field(doc, k, "")) for k in ("K", "T", "B"))
    alpha = float(_field(doc, "alpha", ""))
    hidden = tuple(_field(doc, "hidden", ""))
    raw_blocks = _field(doc, "blocks", "")
    if len(raw_blocks) != K:
        raise CheckpointError(f"checkpoint declares K={K} but holds {len(raw_blocks)} blocks")
    validate = bool(doc.get("validate_alpha", True))
    blocks = []
    for j, rb in enumerate(raw_blocks):
        where = f"blocks[{j}]."
        rn = _field(rb, "norm", where)
        norm = NormState(T, float(_field(rn, "eps", where + "norm.")), float(_field(rn, "momentum", where + "norm.")))
        norm.gamma = _unarr(_field(rn, "gamma", where + "norm."), "gamma").reshape(T)
        norm.beta = _unarr(_field(rn, "beta", where + "norm."), "beta").reshape(T)
        norm.populated = bool(_field(rn, "populated", where + "norm."))
        rl = _field(rb, "linear", where)
        lin = LinearFactor(T, identity=True)
        lin.perm = _unarr(_field(rl, "perm", where + "linear."), "perm", np.int64).reshape(T)
        lin.sign = _unarr(_field(rl, "sign", where + "linear."), "sign").reshape(T)
        lin.lower.value = _unarr(_field(rl, "lower", where + "linear."), "lower").reshape(T, T).copy()
        lin.upper.value = _unarr(_field(rl, "upper", where + "linear."), "upper").reshape(T, T).copy()
        lin.log_diag.value = _unarr(_field(rl, "log_diag", where + "linear."), "log_diag").reshape(1, T).copy()
        cpl = CouplingLayer(T, B, hidden, alpha, validate_alpha=validate)
        rc = _field(rb, "coupling", where)
        for name, net in cpl.nets().items():
            rnet = _field(rc, name, where + "coupling.")
            ws = _field(rnet, "weights", where + f"coupling.{name}.")
            bs = _field(rnet, "biases", where + f"coupling.{name}.")
            if len(ws) != len(net.weights) or len(bs) != len(net.biases):
                raise CheckpointError(f"{where}coupling.{name}: layer count mismatch")
            for i, (w, b) in enumerate(zip(ws, bs)):
                wv, bv = _unarr(w, f"{name}.W{i}"), _unarr(b, f"{name}.b{i}")
                if wv.shape != net.weights[i].shape or bv.shape != net.biases[i].shape:
                    raise CheckpointError(f"{where}coupling.{name} layer {i}: shape mismatch")
                net.weights[i].value = wv.copy()
                net.biases[i].value = bv.copy()
        blocks.append(FCPBlock(norm, lin, cpl))
    scaler = doc.get("scaler")
    model = FlowModel(
        T=T, B=B, K=K, hidden=hidden, alpha=alpha, validate_alpha=validate, blocks=blocks,
        scaler=None if scaler is None else Scaler.from_dict(scaler), meta=dict(doc.get("meta") or {}),
    )
    return model.eval()


def save_checkpoint(model: FlowModel, path) -> None:
    """Write atomically: a failed save never leaves a partial file at ``path``."""
    doc = model_to_dict(model)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> FlowModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint ({exc.msg})") from None
    return model_from_dict(doc)
