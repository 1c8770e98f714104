"""Dual-block seq2seq LSTM with a Poisson rate head, trained from scratch.

Architecture
------------
Encoder and decoder each stack two LSTM blocks.  Block 1 (default 100
units) uses ReLU for both the candidate cell state and the output
activation; block 2 (default 70 units) uses tanh for both.  Gate equations
per step, with z = [h_prev, x]:

    f = sigmoid(W_f z + b_f)        i = sigmoid(W_i z + b_i)
    ctilde = act_c(W_c z + b_c)     c = f * c_prev + i * ctilde
    o = sigmoid(W_o z + b_o)        h = o * act_h(c)

Inverted dropout (0.2 between the blocks, 0.3 after block 2) is active in
train mode only.  The encoder's final (h, c) pairs initialize the decoder,
which runs autoregressively: step 1 consumes a zero input, later steps
consume the previous predicted rate (optionally teacher-forced).  Each
decoder step passes block 2's output through a ReLU dense layer and then
the rate head: ``exp`` (rate = exp(Wh + b), strictly positive) or
``linear``.

Everything here is plain float64 numpy; the backward pass is analytic
backpropagation through time and is validated against central finite
differences by the test suite.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (CacheConsistencyError, DivergenceError, DomainError,
                     ParameterError, ShapeError)
from .numerics import activation, activation_deriv, log_gamma, make_rng
from .preprocess import (MAX_HORIZON, ScalerParams, SupervisedSet,
                         scale_invert, train_test_split)

EPS_RATE = 1e-8


@dataclass
class LstmBlockParams:
    """Gate weights (hidden x (hidden+input)), biases, and activations."""

    w_f: np.ndarray
    w_i: np.ndarray
    w_c: np.ndarray
    w_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    hidden_size: int
    input_size: int
    candidate_activation: str = "tanh"
    output_activation: str = "tanh"
    leaky_alpha: float = 0.01


@dataclass
class ModelConfig:
    """Shape and architecture knobs; defaults follow the reference design."""

    n_features: int
    n_out: int
    hidden1: int = 100
    hidden2: int = 70
    dense_size: int = 32
    head_kind: str = "exp"
    block1_candidate: str = "relu"
    block1_output: str = "relu"
    block2_candidate: str = "tanh"
    block2_output: str = "tanh"
    dropout1: float = 0.2
    dropout2: float = 0.3
    leaky_alpha: float = 0.01

    def validate(self):
        if min(self.n_features, self.hidden1, self.hidden2, self.dense_size) < 1:
            raise ParameterError("all layer sizes must be >= 1")
        if not 1 <= self.n_out <= MAX_HORIZON:
            raise ParameterError(f"n_out must be in [1, {MAX_HORIZON}], got {self.n_out}")
        if self.head_kind not in ("exp", "linear"):
            raise ParameterError(f"head_kind must be 'exp' or 'linear', got {self.head_kind!r}")
        if not (0.0 <= self.dropout1 < 1.0 and 0.0 <= self.dropout2 < 1.0):
            raise ParameterError("dropout rates must lie in [0, 1)")
        for name in (self.block1_candidate, self.block2_candidate):
            if name not in ("relu", "tanh", "leaky_relu"):
                raise ParameterError(f"candidate activation must be relu|tanh|leaky_relu, "
                                     f"got {name!r}")
        for name in (self.block1_output, self.block2_output):
            if name not in ("relu", "tanh"):
                raise ParameterError(f"output activation must be relu|tanh, got {name!r}")


@dataclass
class Seq2SeqModel:
    enc1: LstmBlockParams
    enc2: LstmBlockParams
    dec1: LstmBlockParams
    dec2: LstmBlockParams
    dense_w: np.ndarray
    dense_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    config: ModelConfig

    _BLOCKS = ("enc1", "enc2", "dec1", "dec2")
    _GATES = ("w_f", "w_i", "w_c", "w_o", "b_f", "b_i", "b_c", "b_o")

    def param_dict(self) -> dict[str, np.ndarray]:
        """Ordered name -> array view of every learnable parameter."""
        params = {}
        for block_name in self._BLOCKS:
            block = getattr(self, block_name)
            for gate in self._GATES:
                params[f"{block_name}.{gate}"] = getattr(block, gate)
        params["dense_w"] = self.dense_w
        params["dense_b"] = self.dense_b
        params["head_w"] = self.head_w
        params["head_b"] = self.head_b
        return params

    def set_param(self, name: str, value: np.ndarray) -> None:
        if "." in name:
            block_name, gate = name.split(".", 1)
            setattr(getattr(self, block_name), gate, value)
        else:
            setattr(self, name, value)

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.param_dict().items()}

    def load_params(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, value in snapshot.items():
            self.set_param(name, value.copy())

    def clone(self) -> "Seq2SeqModel":
        return copy.deepcopy(self)


def _glorot(rng, rows, cols):
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def _init_block(rng, hidden, inputs, cand, out, alpha) -> LstmBlockParams:
    width = hidden + inputs
    mats = {g: _glorot(rng, hidden, width) for g in ("w_f", "w_i", "w_c", "w_o")}
    return LstmBlockParams(
        **mats,
        b_f=np.ones(hidden),  # forget bias 1 eases early gradient flow
        b_i=np.zeros(hidden),
        b_c=np.zeros(hidden),
        b_o=np.zeros(hidden),
        hidden_size=hidden, input_size=inputs,
        candidate_activation=cand, output_activation=out, leaky_alpha=alpha,
    )


def init_params(config: ModelConfig, seed: int) -> Seq2SeqModel:
    """Glorot-uniform weights, zero biases except forget-gate biases = 1."""
    config.validate()
    rng = make_rng(seed)
    enc1 = _init_block(rng, config.hidden1, config.n_features,
                       config.block1_candidate, config.block1_output, config.leaky_alpha)
    enc2 = _init_block(rng, config.hidden2, config.hidden1,
                       config.block2_candidate, config.block2_output, config.leaky_alpha)
    dec1 = _init_block(rng, config.hidden1, 1,
                       config.block1_candidate, config.block1_output, config.leaky_alpha)
    dec2 = _init_block(rng, config.hidden2, config.hidden1,
                       config.block2_candidate, config.block2_output, config.leaky_alpha)
    return Seq2SeqModel(
        enc1=enc1, enc2=enc2, dec1=dec1, dec2=dec2,
        dense_w=_glorot(rng, config.dense_size, config.hidden2),
        dense_b=np.zeros(config.dense_size),
        head_w=_glorot(rng, 1, config.dense_size),
        head_b=np.zeros(1),
        config=config,
    )


# ---------------------------------------------------------------- forward


def lstm_cell_forward(block: LstmBlockParams, x_t, h_prev, c_prev):
    """One gate-equation step; returns (h, c, cache) for the backward pass."""
    x_t, h_prev, c_prev = (np.atleast_2d(np.asarray(a, dtype=np.float64))
                           for a in (x_t, h_prev, c_prev))
    if x_t.shape[1] != block.input_size or h_prev.shape[1] != block.hidden_size:
        raise ShapeError(f"cell expected input {block.input_size} / hidden "
                         f"{block.hidden_size}, got x {x_t.shape} h {h_prev.shape}")
    z = np.concatenate([h_prev, x_t], axis=1)
    f = activation(z @ block.w_f.T + block.b_f, "sigmoid")
    i = activation(z @ block.w_i.T + block.b_i, "sigmoid")
    ctilde = activation(z @ block.w_c.T + block.b_c,
                        block.candidate_activation, block.leaky_alpha)
    o = activation(z @ block.w_o.T + block.b_o, "sigmoid")
    c = f * c_prev + i * ctilde
    hc = activation(c, block.output_activation, block.leaky_alpha)
    h = o * hc
    cache = (z, f, i, ctilde, o, c_prev, hc)
    return h, c, cache


def _lstm_cell_backward(block, cache, dh, dc_in, grads, prefix):
    """Backprop one cell step; accumulates weight grads into ``grads``."""
    z, f, i, ctilde, o, c_prev, hc = cache
    hidden = block.hidden_size
    do = dh * hc
    dc = dc_in + dh * o * activation_deriv(hc, block.output_activation, block.leaky_alpha)
    df = dc * c_prev
    di = dc * ctilde
    dctilde = dc * i
    dc_prev = dc * f
    da_f = df * f * (1.0 - f)
    da_i = di * i * (1.0 - i)
    da_c = dctilde * activation_deriv(ctilde, block.candidate_activation, block.leaky_alpha)
    da_o = do * o * (1.0 - o)
    grads[f"{prefix}.w_f"] += da_f.T @ z
    grads[f"{prefix}.w_i"] += da_i.T @ z
    grads[f"{prefix}.w_c"] += da_c.T @ z
    grads[f"{prefix}.w_o"] += da_o.T @ z
    grads[f"{prefix}.b_f"] += da_f.sum(axis=0)
    grads[f"{prefix}.b_i"] += da_i.sum(axis=0)
    grads[f"{prefix}.b_c"] += da_c.sum(axis=0)
    grads[f"{prefix}.b_o"] += da_o.sum(axis=0)
    dz = da_f @ block.w_f + da_i @ block.w_i + da_c @ block.w_c + da_o @ block.w_o
    return dz[:, hidden:], dz[:, :hidden], dc_prev


def sample_dropout_masks(model: Seq2SeqModel, batch: int, n_in: int, rng) -> dict:
    """Draw every train-mode mask in one fixed order (determinism)."""
    cfg = model.config
    return {
        "enc1": [(rng.random((batch, cfg.hidden1)) >= cfg.dropout1).astype(np.float64)
                 for _ in range(n_in)],
        "enc2_final": (rng.random((batch, cfg.hidden2)) >= cfg.dropout2).astype(np.float64),
        "dec1": [(rng.random((batch, cfg.hidden1)) >= cfg.dropout1).astype(np.float64)
                 for _ in range(cfg.n_out)],
        "dec2": [(rng.random((batch, cfg.hidden2)) >= cfg.dropout2).astype(np.float64)
                 for _ in range(cfg.n_out)],
    }


def encoder_forward(model: Seq2SeqModel, x, mode: str = "eval",
                    rng=None, masks: dict | None = None):
    """Run the stacked encoder; returns (context, cache).

    Context is ((h1, c1), (h2, c2)) from the final step, with the 0.3
    dropout applied to the block-2 hidden state in train mode (it is the
    stream that block consumes downstream).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, :, :]
    if x.ndim != 3 or x.shape[1] < 1:
        raise ShapeError(f"encoder input must be (batch, n_in, features), got {x.shape}")
    batch, n_in, n_feat = x.shape
    cfg = model.config
    if n_feat != cfg.n_features:
        raise ShapeError(f"expected {cfg.n_features} features, got {n_feat}")
    train = _check_mode(mode)
    if train and masks is None:
        if rng is None:
            raise ParameterError("train mode requires an rng (or precomputed masks)")
        masks = sample_dropout_masks(model, batch, n_in, rng)

    keep1, keep2 = 1.0 - cfg.dropout1, 1.0 - cfg.dropout2
    h1 = np.zeros((batch, cfg.hidden1))
    c1 = np.zeros((batch, cfg.hidden1))
    h2 = np.zeros((batch, cfg.hidden2))
    c2 = np.zeros((batch, cfg.hidden2))
    caches1, caches2 = [], []
    for t in range(n_in):
        h1, c1, cache1 = lstm_cell_forward(model.enc1, x[:, t], h1, c1)
        u = h1 * masks["enc1"][t] / keep1 if train else h1
        h2, c2, cache2 = lstm_cell_forward(model.enc2, u, h2, c2)
        caches1.append(cache1)
        caches2.append(cache2)
    h2_out = h2 * masks["enc2_final"] / keep2 if train else h2
    context = ((h1, c1), (h2_out, c2))
    cache = {"caches1": caches1, "caches2": caches2, "masks": masks,
             "train": train, "batch": batch, "n_in": n_in}
    return context, cache


def decoder_forward(model: Seq2SeqModel, context, mode: str = "eval", rng=None,
                    masks: dict | None = None, teacher_values=None,
                    teacher_steps=None):
    """Autoregressive decode of n_out rates from the encoder context.

    Step 1 consumes a zero input; step h consumes rate_{h-1}, or the true
    target when that step is teacher-forced (gradients never flow through
    forced inputs).
    """
    cfg = model.config
    if not 1 <= cfg.n_out <= MAX_HORIZON:
        raise ParameterError(f"n_out must be in [1, {MAX_HORIZON}], got {cfg.n_out}")
    (h1, c1), (h2, c2) = context
    batch = h1.shape[0]
    train = _check_mode(mode)
    if train and masks is None:
        if rng is None:
            raise ParameterError("train mode requires an rng (or precomputed masks)")
        masks = sample_dropout_masks(model, batch, 0, rng)
    keep1, keep2 = 1.0 - cfg.dropout1, 1.0 - cfg.dropout2

    x_in = np.zeros((batch, 1))
    rates = np.empty((batch, cfg.n_out))
    steps = []
    for h in range(cfg.n_out):
        fed_back = h > 0 and not (teacher_steps is not None and teacher_steps[h - 1])
        h1, c1, cache1 = lstm_cell_forward(model.dec1, x_in, h1, c1)
        u = h1 * masks["dec1"][h] / keep1 if train else h1
        h2, c2, cache2 = lstm_cell_forward(model.dec2, u, h2, c2)
        v = h2 * masks["dec2"][h] / keep2 if train else h2
        dense_out = activation(v @ model.dense_w.T + model.dense_b, "relu")
        a = dense_out @ model.head_w.T + model.head_b
        rate = np.exp(a) if cfg.head_kind == "exp" else a
        rates[:, h] = rate[:, 0]
        steps.append({"cache1": cache1, "cache2": cache2, "v": v,
                      "dense_out": dense_out, "rate": rate, "fed_back": fed_back})
        if h + 1 < cfg.n_out:
            if teacher_steps is not None and teacher_steps[h]:
                x_in = np.asarray(teacher_values, dtype=np.float64)[:, h:h + 1]
            else:
                x_in = rate
    cache = {"steps": steps, "masks": masks, "train": train,
             "batch": batch, "n_out": cfg.n_out}
    return rates, cache


def seq2seq_forward(model: Seq2SeqModel, x, mode: str = "eval", rng=None,
                    masks: dict | None = None, teacher_values=None,
                    teacher_steps=None):
    """Full encoder + decoder pass; returns (rates, caches)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, :, :]
    train = _check_mode(mode)
    if train and masks is None:
        if rng is None:
            raise ParameterError("train mode requires an rng (or precomputed masks)")
        masks = sample_dropout_masks(model, x.shape[0], x.shape[1], rng)
    context, enc_cache = encoder_forward(model, x, mode=mode, masks=masks)
    rates, dec_cache = decoder_forward(model, context, mode=mode, masks=masks,
                                       teacher_values=teacher_values,
                                       teacher_steps=teacher_steps)
    return rates, {"enc": enc_cache, "dec": dec_cache, "x": x}


def _check_mode(mode: str) -> bool:
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == "train"


# ----------------------------------------------------------------- losses


def loss_poisson_nll(rates, targets) -> float:
    """Mean Poisson negative log-likelihood: lam - y*ln(lam) + ln(y!)."""
    lam = np.asarray(rates, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if lam.shape != y.shape:
        raise ShapeError(f"rates shape {lam.shape} != targets shape {y.shape}")
    if lam.size == 0:
        raise ParameterError("empty input")
    if np.any(lam <= 0):
        raise DomainError("Poisson NLL requires strictly positive rates "
                          "(route non-positive predictions to MSE first)")
    if np.any(y < 0) or not np.allclose(y, np.round(y), atol=1e-6):
        raise DomainError("Poisson NLL requires non-negative integer targets")
    return float(np.mean(lam - y * np.log(lam) + log_gamma(y + 1.0)))


def loss_mse(preds, targets) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ShapeError(f"preds shape {preds.shape} != targets shape {targets.shape}")
    if preds.size == 0:
        raise ParameterError("empty input")
    return float(np.mean((preds - targets) ** 2))


def loss_select(preds, targets, mode: str = "auto") -> tuple[float, str]:
    """Route to Poisson NLL or MSE.

    ``auto`` picks Poisson when every prediction is positive and falls back
    to MSE otherwise.  Fixed ``poisson`` clamps non-positive predictions to
    a tiny epsilon (with a warning) instead of failing.
    """
    preds = np.asarray(preds, dtype=np.float64)
    if mode == "auto":
        if np.any(preds <= 0):
            return loss_mse(preds, targets), "mse"
        return loss_poisson_nll(preds, targets), "poisson"
    if mode == "poisson":
        if np.any(preds <= 0):
            warnings.warn("poisson loss requested with non-positive predictions; "
                          f"clamping to {EPS_RATE}", stacklevel=2)
            preds = np.maximum(preds, EPS_RATE)
        return loss_poisson_nll(preds, targets), "poisson"
    if mode == "mse":
        return loss_mse(preds, targets), "mse"
    raise ParameterError(f"loss mode must be poisson|mse|auto, got {mode!r}")


def loss_grad_wrt_rates(rates, targets, branch: str,
                        slope: float = 1.0, intercept: float = 0.0) -> np.ndarray:
    """d(mean loss)/d(raw model rates) for the chosen branch.

    ``slope``/``intercept`` describe the affine map from model output space
    to the space the loss was computed in (count space in the pipeline);
    the chain rule contributes one factor of slope.
    """
    rates = np.asarray(rates, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    lam = slope * rates + intercept
    m = rates.size
    if branch == "poisson":
        lam_safe = np.maximum(lam, EPS_RATE)
        grad = (1.0 - y / lam_safe) / m * slope
        grad[lam <= 0] = 0.0  # clamped entries carry no dependence
        return grad
    if branch == "mse":
        return 2.0 * (lam - y) / m * slope
    raise ParameterError(f"unknown loss branch {branch!r}")


# ---------------------------------------------------------------- backward


def backward(model: Seq2SeqModel, targets, caches, loss_branch: str,
             slope: float = 1.0, intercept: float = 0.0) -> dict[str, np.ndarray]:
    """Analytic gradients of the selected loss w.r.t. every parameter.

    Backpropagates through the head, dense layer, both decoder blocks
    (including the autoregressive feedback of predicted rates), the context
    hand-off, and both encoder blocks, honouring the dropout masks stored
    in the caches.
    """
    dec_cache = caches["dec"]
    enc_cache = caches["enc"]
    rates = np.stack([s["rate"][:, 0] for s in dec_cache["steps"]], axis=1)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != rates.shape:
        raise CacheConsistencyError(f"targets shape {targets.shape} does not match "
                                    f"cached rates shape {rates.shape}")
    if dec_cache["n_out"] != model.config.n_out or \
            enc_cache["caches1"][0][0].shape[1] != model.config.hidden1 + model.config.n_features:
        raise CacheConsistencyError("caches were produced by a different model shape")
    d_rates = loss_grad_wrt_rates(rates, targets, loss_branch, slope, intercept)
    return backward_from_rate_grads(model, caches, d_rates)


def backward_from_rate_grads(model: Seq2SeqModel, caches,
                             d_rates: np.ndarray) -> dict[str, np.ndarray]:
    cfg = model.config
    enc_cache, dec_cache = caches["enc"], caches["dec"]
    train = dec_cache["train"]
    masks = dec_cache["masks"]
    keep1, keep2 = 1.0 - cfg.dropout1, 1.0 - cfg.dropout2
    grads = {name: np.zeros_like(arr) for name, arr in model.param_dict().items()}

    steps = dec_cache["steps"]
    batch = dec_cache["batch"]
    d_h1_next = np.zeros((batch, cfg.hidden1))
    d_c1_next = np.zeros((batch, cfg.hidden1))
    d_h2_next = np.zeros((batch, cfg.hidden2))
    d_c2_next = np.zeros((batch, cfg.hidden2))
    d_x_next = None  # input grad flowing from step h+1 back to rate_h

    for h in range(cfg.n_out - 1, -1, -1):
        step = steps[h]
        d_rate = d_rates[:, h:h + 1].copy()
        if d_x_next is not None and steps[h + 1]["fed_back"]:
            d_rate += d_x_next
        d_a = d_rate * step["rate"] if cfg.head_kind == "exp" else d_rate
        grads["head_w"] += d_a.T @ step["dense_out"]
        grads["head_b"] += d_a.sum(axis=0)
        d_dense_out = d_a @ model.head_w
        d_dense_pre = d_dense_out * (step["dense_out"] > 0)
        grads["dense_w"] += d_dense_pre.T @ step["v"]
        grads["dense_b"] += d_dense_pre.sum(axis=0)
        d_v = d_dense_pre @ model.dense_w
        d_h2 = d_v * masks["dec2"][h] / keep2 if train else d_v
        d_h2 = d_h2 + d_h2_next
        d_u, d_h2_next, d_c2_next = _lstm_cell_backward(
            model.dec2, step["cache2"], d_h2, d_c2_next, grads, "dec2")
        d_h1 = d_u * masks["dec1"][h] / keep1 if train else d_u
        d_h1 = d_h1 + d_h1_next
        d_x_next, d_h1_next, d_c1_next = _lstm_cell_backward(
            model.dec1, step["cache1"], d_h1, d_c1_next, grads, "dec1")

    # context hand-off: decoder initial states came from the encoder finals
    d_h2_enc = d_h2_next * masks["enc2_final"] / keep2 if train else d_h2_next
    d_c2_enc = d_c2_next
    d_h1_enc = d_h1_next
    d_c1_enc = d_c1_next

    enc_masks = enc_cache["masks"]
    for t in range(enc_cache["n_in"] - 1, -1, -1):
        d_u, d_h2_enc, d_c2_enc = _lstm_cell_backward(
            model.enc2, enc_cache["caches2"][t], d_h2_enc, d_c2_enc, grads, "enc2")
        d_h1_from_block2 = d_u * enc_masks["enc1"][t] / keep1 if train else d_u
        _, d_h1_enc, d_c1_enc = _lstm_cell_backward(
            model.enc1, enc_cache["caches1"][t], d_h1_enc + d_h1_from_block2,
            d_c1_enc, grads, "enc1")
    return grads


# ------------------------------------------------------------------- adam


@dataclass
class AdamState:
    """First/second moment estimates per parameter plus the step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: Seq2SeqModel, lr: float = 1e-3) -> "AdamState":
        params = model.param_dict()
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()}, lr=lr)


def adam_step(model: Seq2SeqModel, grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[Seq2SeqModel, AdamState]:
    """In-place Adam update with bias-corrected moments."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, param in model.param_dict().items():
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        param -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return model, state


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    validation_fraction: float = 0.2
    early_stopping_patience: int = 5
    seed: int = 0
    loss_mode: str = "auto"
    learning_rate: float = 1e-3
    teacher_forcing_ratio: float = 0.0

    def validate(self):
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ParameterError("validation_fraction must be in (0, 1)")
        if self.early_stopping_patience < 1:
            raise ParameterError("early_stopping_patience must be >= 1")
        if self.loss_mode not in ("poisson", "mse", "auto"):
            raise ParameterError(f"loss_mode must be poisson|mse|auto, got {self.loss_mode!r}")
        if not 0.0 <= self.teacher_forcing_ratio <= 1.0:
            raise ParameterError("teacher_forcing_ratio must be in [0, 1]")


def _target_transform(scaler: ScalerParams | None, target_col: str) -> tuple[float, float]:
    """Affine map from model output space to count space (slope, intercept)."""
    if scaler is None or target_col not in scaler.columns:
        return 1.0, 0.0
    lo, hi = scaler.mins[target_col], scaler.maxs[target_col]
    return (hi - lo, lo) if hi > lo else (1.0, lo)


def evaluate_loss(model: Seq2SeqModel, sset: SupervisedSet, loss_mode: str,
                  slope: float = 1.0, intercept: float = 0.0) -> tuple[float, str]:
    """Eval-mode loss over a whole set, in count space."""
    rates, _ = seq2seq_forward(model, sset.inputs, mode="eval")
    preds = slope * rates + intercept
    targets = slope * sset.targets + intercept
    return loss_select(preds, targets, loss_mode)


def train(model: Seq2SeqModel, train_set: SupervisedSet, config: TrainConfig,
          scaler: ScalerParams | None = None, target_col: str = "y"):
    """Mini-batch training with seeded shuffling and early stopping.

    The last ``validation_fraction`` of samples (chronologically, per
    region) is held out for the per-epoch validation loss; early stopping
    restores the parameters of the best-validation epoch.  When a scaler is
    given, predictions and targets are mapped back to count space before
    the loss, so Poisson likelihoods see genuine integer counts.

    Returns (model, history) where history is a list of dicts with keys
    epoch, train_loss, val_loss.
    """
    config.validate()
    if len(train_set) == 0:
        raise ParameterError("empty training set")
    slope, intercept = _target_transform(scaler, target_col)
    fit_set, val_set = train_test_split(train_set, config.validation_fraction)
    rng = make_rng(config.seed)
    state = AdamState.for_model(model, lr=config.learning_rate)
    n_fit = len(fit_set)
    history = []
    best_val = np.inf
    best_snapshot = model.copy_params()
    epochs_since_best = 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_fit)
        epoch_loss = 0.0
        for batch_idx, start in enumerate(range(0, n_fit, config.batch_size)):
            sel = order[start:start + config.batch_size]
            xb = fit_set.inputs[sel]
            yb = fit_set.targets[sel]
            teacher_steps = None
            if config.teacher_forcing_ratio > 0 and model.config.n_out > 1:
                teacher_steps = rng.random(model.config.n_out - 1) < config.teacher_forcing_ratio
            rates, caches = seq2seq_forward(model, xb, mode="train", rng=rng,
                                            teacher_values=yb, teacher_steps=teacher_steps)
            y_count = slope * yb + intercept
            loss, branch = loss_select(slope * rates + intercept, y_count, config.loss_mode)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, batch_idx)
            grads = backward(model, y_count, caches, branch, slope, intercept)
            adam_step(model, grads, state)
            epoch_loss += loss * len(sel)
        train_loss = epoch_loss / n_fit
        val_loss, _ = evaluate_loss(model, val_set, config.loss_mode, slope, intercept)
        if not np.isfinite(val_loss):
            raise DivergenceError(epoch, -1)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_snapshot = model.copy_params()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.early_stopping_patience:
                break
    model.load_params(best_snapshot)
    return model, history


# ---------------------------------------------------------------- forecast


def forecast(model: Seq2SeqModel, recent_window, scaler: ScalerParams,
             pca=None, target_col: str = "y"):
    """Eval-mode rates for one window batch, inverted to count space.

    Returns (rates, counts): rates are clamped at zero after inverse
    scaling; counts round half-up.
    """
    x = np.asarray(recent_window, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, :, :]
    if x.shape[2] != model.config.n_features:
        raise ShapeError(f"window has {x.shape[2]} features but the model expects "
                         f"{model.config.n_features}; scaler/PCA column set mismatch")
    if pca is not None and pca.k > model.config.n_features:
        raise ShapeError("PCA model retains more components than the model consumes")
    rates_scaled, _ = seq2seq_forward(model, x, mode="eval")
    rates = np.maximum(scale_invert(rates_scaled, scaler, target_col), 0.0)
    counts = np.floor(rates + 0.5).astype(np.int64)
    return rates, counts
