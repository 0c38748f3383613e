"""FCPFlow: stacked blocks of invertible normalization, invertible linear
mixing and soft-clamped combining coupling.

Two directions are exposed throughout:

* *normalize* maps data to latent space and returns per-row log-determinants;
  it is what likelihood evaluation and training use.
* *generate* maps latent samples back to data space.

Within a block the normalizing order is normalization -> linear -> coupling,
and generation runs the same layers backwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu, solve_triangular

from . import diffcore as dc
from .diffcore import Node
from .errors import ConfigurationError, ContractError, DimensionError, FCPFlowError, NumericError, StateError

LOG_2PI = math.log(2.0 * math.pi)


# --- soft clamp -----------------------------------------------------------


@dataclass(frozen=True)
class ClampConfig:
    alpha: float = 0.6
    validate: bool = True

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")
        if self.validate and not 0.1 <= self.alpha <= 1.0:
            raise ConfigurationError(
                f"alpha={self.alpha} outside [0.1, 1]; pass validate=False to override"
            )


def soft_clamp(s_raw, alpha: float):
    """Bound ``s_raw`` to (-alpha, alpha) via ``2*alpha/pi * arctan(s_raw/alpha)``.

    Accepts a :class:`Node` (differentiable) or anything array-like.
    """
    if alpha <= 0:
        raise ConfigurationError(f"soft_clamp: alpha must be positive, got {alpha}")
    if isinstance(s_raw, Node):
        return dc.scale(dc.arctan(dc.scale(s_raw, 1.0 / alpha)), 2.0 * alpha / math.pi)
    return 2.0 * alpha / math.pi * np.arctan(np.asarray(s_raw, dtype=np.float64) / alpha)


# --- coupling -------------------------------------------------------------


class CouplingNet:
    """Fully connected tanh network; the output layer is linear."""

    def __init__(self, in_width: int, out_width: int, hidden=(64, 64), rng=None, name="net"):
        rng = np.random.default_rng(rng)
        self.widths = [int(in_width), *map(int, hidden), int(out_width)]
        self.weights: list[Node] = []
        self.biases: list[Node] = []
        n_layers = len(self.widths) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            if i == n_layers - 1:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.standard_normal((fan_in, fan_out)) / math.sqrt(max(fan_in, 1))
            self.weights.append(dc.parameter(w, name=f"{name}.W{i}"))
            self.biases.append(dc.parameter(np.zeros((1, fan_out)), name=f"{name}.b{i}"))

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    def parameters(self) -> list[Node]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __call__(self, h: Node) -> Node:
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = dc.matmul(h, w) + b
            if i < last:
                h = dc.tanh(h)
        return h


class CouplingLayer:
    """Combining coupling layer with separate s1, t1, s2, t2 networks.

    ``x1``/``x2`` are the even/odd columns of the input. The first stage
    transforms ``x2`` conditioned on ``x1``; the second transforms ``x1``
    conditioned on the first stage's output.
    """

    def __init__(self, T: int, B: int, hidden=(64, 64), alpha=0.6, rng=None, validate_alpha=True):
        if T < 2:
            raise DimensionError(f"coupling layer needs at least 2 features, got {T}")
        rng = np.random.default_rng(rng)
        self.T, self.B = int(T), int(B)
        self.clamp = ClampConfig(alpha, validate_alpha)
        n_even, n_odd = (T + 1) // 2, T // 2
        self.s1 = CouplingNet(n_even + B, n_odd, hidden, rng, "s1")
        self.t1 = CouplingNet(n_even + B, n_odd, hidden, rng, "t1")
        self.s2 = CouplingNet(n_odd + B, n_even, hidden, rng, "s2")
        self.t2 = CouplingNet(n_odd + B, n_even, hidden, rng, "t2")

    @property
    def alpha(self) -> float:
        return self.clamp.alpha

    def nets(self) -> dict[str, CouplingNet]:
        return {"s1": self.s1, "t1": self.t1, "s2": self.s2, "t2": self.t2}

    def parameters(self) -> list[Node]:
        return [p for net in self.nets().values() for p in net.parameters()]

    def _combine(self, first: Node, second: Node) -> Node:
        # equal halves: first stage output on even positions; odd T puts the
        # longer second stage output there so the map stays invertible
        if first.shape[1] >= second.shape[1]:
            return dc.interleave_cols(first, second)
        return dc.interleave_cols(second, first)

    def _split_latent(self, z: Node) -> tuple[Node, Node]:
        even, odd = dc.split_even_odd(z)
        if self.T % 2 == 0:
            return even, odd
        return odd, even

    def _check(self, x: Node, c: Node):
        if x.shape[1] != self.T:
            raise DimensionError(f"coupling expects {self.T} features, got {x.shape[1]}")
        if c.shape != (x.shape[0], self.B):
            raise DimensionError(f"coupling expects conditions of shape {(x.shape[0], self.B)}, got {c.shape}")

    def normalize(self, x: Node, c: Node) -> tuple[Node, Node]:
        x, c = dc.as_node(x), dc.as_node(c)
        self._check(x, c)
        a = self.alpha
        x1, x2 = dc.split_even_odd(x)
        h1 = dc.concat_cols(x1, c)
        s1 = soft_clamp(self.s1(h1), a)
        z1 = dc.exp(s1) * x2 + self.t1(h1)
        h2 = dc.concat_cols(z1, c)
        s2 = soft_clamp(self.s2(h2), a)
        z2 = dc.exp(s2) * x1 + self.t2(h2)
        logdet = dc.reduce_sum(s1, axis=1) + dc.reduce_sum(s2, axis=1)
        return self._combine(z1, z2), logdet

    def generate(self, z, c) -> np.ndarray:
        z, c = dc.as_node(z), dc.as_node(c)
        self._check(z, c)
        a = self.alpha
        z1, z2 = self._split_latent(z)
        h2 = dc.concat_cols(z1, c)
        x1 = (z2 - self.t2(h2)) / dc.exp(soft_clamp(self.s2(h2), a))
        h1 = dc.concat_cols(x1, c)
        x2 = (z1 - self.t1(h1)) / dc.exp(soft_clamp(self.s1(h1), a))
        return dc.interleave_cols(x1, x2).value


# --- invertible normalization ---------------------------------------------


class NormState:
    """Per-feature mean ``gamma`` and standard deviation ``beta``.

    These are statistics, never trained. ``populated`` is False until a
    training pass or :meth:`set_stats` fills them in.
    """

    def __init__(self, T: int, eps: float = 1e-6, momentum: float = 0.1):
        if eps < 0:
            raise ConfigurationError("eps must be non-negative")
        if not 0 < momentum <= 1:
            raise ConfigurationError("momentum must lie in (0, 1]")
        self.T = int(T)
        self.gamma = np.zeros(self.T)
        self.beta = np.ones(self.T)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.populated = False

    def set_stats(self, gamma, beta) -> None:
        gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
        beta = np.asarray(beta, dtype=np.float64).reshape(-1)
        if gamma.shape != (self.T,) or beta.shape != (self.T,):
            raise DimensionError(f"stats must have length {self.T}")
        if np.any(beta < 0):
            raise ConfigurationError("beta (standard deviation) must be non-negative")
        self.gamma, self.beta = gamma.copy(), beta.copy()
        self.populated = True

    def update(self, batch_mean: np.ndarray, batch_std: np.ndarray, momentum: float | None = None) -> None:
        m = self.momentum if momentum is None else momentum
        if not self.populated:
            m = 1.0
        self.gamma = (1.0 - m) * self.gamma + m * batch_mean.reshape(-1)
        self.beta = (1.0 - m) * self.beta + m * batch_std.reshape(-1)
        self.populated = True

    def denominator(self) -> np.ndarray:
        return np.sqrt(self.beta**2 + self.eps)

    def logdet(self) -> float:
        return -0.5 * float(np.sum(np.log(self.beta**2 + self.eps)))


def norm_normalize_node(x: Node, state: NormState, use_batch: bool, momentum: float | None = 0.0):
    """Standardize ``x`` and return ``(z, logdet)`` with logdet of shape (1, 1).

    With ``use_batch`` the statistics come from ``x`` itself and stay in the
    graph. ``momentum=None`` uses the state's momentum for the running update,
    ``0.0`` skips the update.
    """
    x = dc.as_node(x)
    if x.shape[1] != state.T:
        raise DimensionError(f"normalization expects {state.T} features, got {x.shape[1]}")
    if use_batch:
        if x.shape[0] < 2:
            raise ContractError("training-mode normalization needs a batch of at least 2 rows")
        mean = dc.reduce_mean(x, axis=0)
        var_eps = dc.reduce_var(x, axis=0) + state.eps
        z = (x - mean) / dc.sqrt(var_eps)
        logdet = dc.scale(dc.reduce_sum(dc.log(var_eps)), -0.5)
        if momentum is None or momentum > 0:
            std = np.sqrt(np.var(x.value, axis=0))
            state.update(mean.value, std, momentum)
        return z, logdet
    if not state.populated:
        raise StateError("normalization statistics are not populated")
    z = (x - state.gamma.reshape(1, -1)) / state.denominator().reshape(1, -1)
    return z, dc.constant([[state.logdet()]])


# --- invertible linear ----------------------------------------------------


class LinearFactor:
    """``M = P L U`` with unit-lower ``L`` and ``diag(U) = sign * exp(log_diag)``.

    ``M`` plays the role of the inverse mixing matrix in the normalizing
    direction: ``z = M x``. Its log-determinant is ``sum(log_diag)``.
    """

    def __init__(self, T: int, rng=None, identity: bool = False):
        self.T = T = int(T)
        rng = np.random.default_rng(rng)
        if identity:
            perm = np.arange(T)
            lower = np.zeros((T, T))
            upper = np.zeros((T, T))
            sign = np.ones(T)
            log_diag = np.zeros(T)
        else:
            q, r = np.linalg.qr(rng.standard_normal((T, T)))
            q = q * np.sign(np.diag(r))
            p_mat, l_mat, u_mat = lu(q)
            perm = np.argmax(p_mat, axis=0)  # p_mat[perm[j], j] == 1
            lower = np.tril(l_mat, -1)
            upper = np.triu(u_mat, 1)
            d = np.diag(u_mat)
            sign = np.sign(d)
            log_diag = np.log(np.abs(d))
        self.perm = np.asarray(perm, dtype=np.int64)
        self.sign = np.asarray(sign, dtype=np.float64)
        self.lower = dc.parameter(lower, name="lower")
        self.upper = dc.parameter(upper, name="upper")
        self.log_diag = dc.parameter(np.asarray(log_diag).reshape(1, T), name="log_diag")
        self._lower_mask = np.tril(np.ones((T, T)), -1)
        self._upper_mask = np.triu(np.ones((T, T)), 1)

    @classmethod
    def from_matrix(cls, m) -> "LinearFactor":
        m = np.asarray(m, dtype=np.float64)
        fac = cls(m.shape[0], identity=True)
        p_mat, l_mat, u_mat = lu(m)
        d = np.diag(u_mat)
        if np.any(d == 0):
            raise ConfigurationError("matrix is singular")
        fac.perm = np.argmax(p_mat, axis=0).astype(np.int64)
        fac.sign = np.sign(d)
        fac.lower.value[...] = np.tril(l_mat, -1)
        fac.upper.value[...] = np.triu(u_mat, 1)
        fac.log_diag.value[...] = np.log(np.abs(d)).reshape(1, -1)
        return fac

    def parameters(self) -> list[Node]:
        return [self.lower, self.upper, self.log_diag]

    def permutation_matrix(self) -> np.ndarray:
        p = np.zeros((self.T, self.T))
        p[self.perm, np.arange(self.T)] = 1.0
        return p

    def _l_node(self) -> Node:
        return dc.mul(self.lower, self._lower_mask) + np.eye(self.T)

    def _u_node(self) -> Node:
        diag = dc.mul(np.eye(self.T), self.sign.reshape(1, -1)) * dc.exp(self.log_diag)
        return dc.mul(self.upper, self._upper_mask) + diag

    def matrix(self) -> np.ndarray:
        return self.permutation_matrix() @ self._l_node().value @ self._u_node().value

    def logdet(self) -> float:
        return float(np.sum(self.log_diag.value))

    def normalize(self, x) -> tuple[Node, Node]:
        x = dc.as_node(x)
        if x.shape[1] != self.T:
            raise DimensionError(f"linear layer expects {self.T} features, got {x.shape[1]}")
        # rows: z = x (P L U)^T = x U^T L^T P^T
        h = dc.matmul(x, dc.transpose(self._u_node()))
        h = dc.matmul(h, dc.transpose(self._l_node()))
        z = dc.matmul(h, self.permutation_matrix().T)
        return z, dc.reduce_sum(self.log_diag)

    def generate(self, z) -> np.ndarray:
        z = dc.as_node(z).value
        if z.shape[1] != self.T:
            raise DimensionError(f"linear layer expects {self.T} features, got {z.shape[1]}")
        l_mat = self._l_node().value
        u_mat = self._u_node().value
        rhs = z.T[self.perm]  # P^T z
        y = solve_triangular(l_mat, rhs, lower=True, unit_diagonal=True)
        return solve_triangular(u_mat, y, lower=False).T


# --- blocks and model -----------------------------------------------------


@dataclass
class FCPBlock:
    norm: NormState
    linear: LinearFactor
    coupling: CouplingLayer

    def parameters(self) -> list[Node]:
        return self.linear.parameters() + self.coupling.parameters()


@dataclass
class FlowModel:
    """A stack of ``K`` FCPFlow blocks over profiles of length ``T`` with ``B`` conditions."""

    T: int
    B: int
    K: int = 3
    hidden: tuple = (64, 64)
    alpha: float = 0.6
    seed: int | None = 0
    eps: float = 1e-6
    momentum: float = 0.1
    validate_alpha: bool = True
    blocks: list = field(default_factory=list)
    scaler: object = None
    meta: dict = field(default_factory=dict)
    training: bool = True

    def __post_init__(self):
        if self.T < 2:
            raise DimensionError("profile length must be at least 2")
        if self.K < 1:
            raise ConfigurationError("need at least one block")
        self.hidden = tuple(int(h) for h in self.hidden)
        ClampConfig(self.alpha, self.validate_alpha)
        if not self.blocks:
            rng = np.random.default_rng(self.seed)
            self.blocks = [
                FCPBlock(
                    NormState(self.T, self.eps, self.momentum),
                    LinearFactor(self.T, rng),
                    CouplingLayer(self.T, self.B, self.hidden, self.alpha, rng, self.validate_alpha),
                )
                for _ in range(self.K)
            ]

    # -- bookkeeping

    def parameters(self) -> list[Node]:
        return [p for blk in self.blocks for p in blk.parameters()]

    def named_parameters(self) -> list[tuple[str, Node]]:
        out = []
        for j, blk in enumerate(self.blocks):
            out += [(f"block{j}.linear.{n}", p) for n, p in
                    zip(("lower", "upper", "log_diag"), blk.linear.parameters())]
            for net_name, net in blk.coupling.nets().items():
                for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                    out += [(f"block{j}.{net_name}.W{i}", w), (f"block{j}.{net_name}.b{i}", b)]
        return out

    def get_state(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.parameters()]

    def set_state(self, values) -> None:
        for p, v in zip(self.parameters(), values):
            p.value[...] = v

    def train(self) -> "FlowModel":
        self.training = True
        return self

    def eval(self) -> "FlowModel":
        self.training = False
        return self

    def _prepare(self, x, c) -> tuple[Node, Node]:
        x = dc.as_node(x)
        if x.shape[1] != self.T:
            raise DimensionError(f"model expects {self.T} profile columns, got {x.shape[1]}")
        c = _conditions(c, x.shape[0], self.B)
        return x, c

    # -- directions

    def normalize(self, x, c=None, update_stats: bool = True) -> tuple[Node, Node]:
        """Data -> latent. Returns ``(z0, total_logdet)`` with logdet shape (batch, 1)."""
        x, c = self._prepare(x, c)
        n = x.shape[0]
        total = dc.constant(np.zeros((n, 1)))
        h = x
        momentum = None if update_stats else 0.0
        for j, blk in enumerate(self.blocks):
            try:
                h, ld_norm = norm_normalize_node(h, blk.norm, self.training, momentum)
                h, ld_lin = blk.linear.normalize(h)
                h, ld_cpl = blk.coupling.normalize(h, c)
            except FCPFlowError as exc:
                raise type(exc)(f"block {j}: {exc}") from exc
            if not np.all(np.isfinite(h.value)):
                raise NumericError(f"block {j}: non-finite activations in the normalizing pass")
            total = total + ld_norm + ld_lin + ld_cpl
        return h, total

    def generate(self, z0, c=None) -> np.ndarray:
        """Latent -> data, applying every block's layers in reverse."""
        if self.training:
            raise StateError("generation requires inference mode; call model.eval()")
        z, c = self._prepare(z0, c)
        h = z.value
        for j in reversed(range(self.K)):
            blk = self.blocks[j]
            try:
                h = blk.coupling.generate(h, c)
                h = blk.linear.generate(h)
                if not blk.norm.populated:
                    raise StateError("normalization statistics are not populated")
                h = h * blk.norm.denominator() + blk.norm.gamma
            except FCPFlowError as exc:
                raise type(exc)(f"block {j}: {exc}") from exc
        return h

    def log_likelihood_node(self, x, c=None, update_stats: bool = True) -> Node:
        z0, logdet = self.normalize(x, c, update_stats)
        base = dc.scale(dc.reduce_sum(dc.square(z0), axis=1), -0.5) - 0.5 * self.T * LOG_2PI
        return base + logdet

    def nll(self, x, c=None, update_stats: bool = True) -> Node:
        """Mean negative log-likelihood per row, as a 1x1 node."""
        return dc.neg(dc.reduce_mean(self.log_likelihood_node(x, c, update_stats)))

    def log_likelihood(self, x, c=None) -> np.ndarray:
        ll = self.log_likelihood_node(x, c, update_stats=False).value[:, 0]
        if not np.all(np.isfinite(ll)):
            raise NumericError("log-likelihood is not finite")
        return ll

    def calibrate(self, x, c=None) -> "FlowModel":
        """Set every block's running statistics from ``x`` (data-dependent init)."""
        x, c = self._prepare(x, c)
        h = x
        for blk in self.blocks:
            h, _ = norm_normalize_node(h, blk.norm, True, momentum=1.0)
            h, _ = blk.linear.normalize(h)
            h, _ = blk.coupling.normalize(h, c)
        return self

    def sample(self, c=None, n: int | None = None, seed=None) -> np.ndarray:
        return sample(self, c, n, seed)


def _conditions(c, n: int, B: int) -> Node:
    if c is None:
        if B:
            raise DimensionError(f"model expects {B} condition columns, none given")
        return dc.constant(np.zeros((n, 0)))
    c = np.asarray(c.value if isinstance(c, Node) else c, dtype=np.float64)
    if c.ndim == 1:
        c = c.reshape(1, -1) if B else c.reshape(-1, 0)
    if c.shape[1] != B:
        raise DimensionError(f"model expects {B} condition columns, got {c.shape[1]}")
    if c.shape[0] == 1 and n != 1:
        c = np.repeat(c, n, axis=0)
    if c.shape[0] != n:
        raise DimensionError(f"condition rows ({c.shape[0]}) do not match profile rows ({n})")
    return dc.constant(c)


# --- functional surface ---------------------------------------------------


def coupling_normalize(x, c, layer: CouplingLayer) -> tuple[np.ndarray, np.ndarray]:
    z, logdet = layer.normalize(x, c)
    return z.value, logdet.value[:, 0]


def coupling_generate(z, c, layer: CouplingLayer) -> np.ndarray:
    return layer.generate(z, c)


def norm_normalize(x, state: NormState, training: bool = False) -> tuple[np.ndarray, np.ndarray]:
    z, logdet = norm_normalize_node(dc.as_node(x), state, training, None if training else 0.0)
    return z.value, np.full(z.shape[0], logdet.value[0, 0])


def norm_generate(z, state: NormState) -> np.ndarray:
    if not state.populated:
        raise StateError("normalization statistics are not populated")
    z = dc.as_node(z).value
    return z * state.denominator() + state.gamma


def linear_normalize(x, factor: LinearFactor) -> tuple[np.ndarray, np.ndarray]:
    z, logdet = factor.normalize(x)
    return z.value, np.full(z.shape[0], logdet.value[0, 0])


def linear_generate(z, factor: LinearFactor) -> np.ndarray:
    return factor.generate(z)


def model_normalize(x, c, model: FlowModel) -> tuple[np.ndarray, np.ndarray]:
    z0, logdet = model.normalize(x, c, update_stats=model.training)
    return z0.value, logdet.value[:, 0]


def model_generate(z0, c, model: FlowModel) -> np.ndarray:
    return model.generate(z0, c)


def log_likelihood(x, c, model: FlowModel) -> np.ndarray:
    return model.log_likelihood(x, c)


def sample(model: FlowModel, c=None, n: int | None = None, seed=None) -> np.ndarray:
    """Draw ``z0 ~ N(0, I)`` and map it to data space.

    ``c`` may hold one row per sample or a single row replicated ``n`` times.
    """
    if model.training:
        raise StateError("sampling requires inference mode; call model.eval()")
    if c is not None and model.B:
        c = np.atleast_2d(np.asarray(c, dtype=np.float64))
        if n is None:
            n = c.shape[0]
    if n is None:
        raise ConfigurationError("number of samples is required for unconditional sampling")
    rng = np.random.default_rng(seed)
    z0 = rng.standard_normal((int(n), model.T))
    return model.generate(z0, c if model.B else None)
