"""ADRENALINE encoder-decoder network and the CNN / SELDNet(m) baselines."""

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormStats, Tensor
from .init import kaiming_init, ones, zeros

VARIANTS = ("adrenaline", "cnn-baseline", "seldnet-m")


@dataclass
class ModelConfig:
    channels: int = 4  # C (input has 2C planes)
    frames: int = 25  # K
    bins: int = 1024  # L
    conv_filters: int = 64
    pool_widths: Tuple[int, ...] = (8, 8, 2)
    feature_dim: Optional[int] = None  # D_y, derived when None
    hidden: int = 64  # D_h
    max_sources: int = 4  # S
    variant: str = "adrenaline"
    seldnet_hidden: int = 128
    seldnet_layers: int = 2

    def __post_init__(self):
        self.pool_widths = tuple(int(p) for p in self.pool_widths)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        width = self.bins
        for p in self.pool_widths:
            width //= p
        if width < 1:
            raise ValueError(f"pooling {self.pool_widths} leaves no frequency bins from L={self.bins}")
        derived = self.conv_filters * width
        if self.feature_dim is None:
            self.feature_dim = derived
        elif self.feature_dim != derived:
            raise ValueError(
                f"feature_dim {self.feature_dim} != conv_filters x pooled bins = {derived}"
            )

    @property
    def decoder_hidden(self) -> int:
        return 2 * self.hidden

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pool_widths"] = list(self.pool_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class SelOutput:
    activity: Tensor  # B x K x S, in (0, 1)
    azimuth: Tensor  # B x K x S, radians, unbounded
    elevation: Tensor  # B x K x S
    attention: Optional[Tensor] = None  # B x K x K, rows = decoder steps


@dataclass
class GruCell:
    """GRU weights with gates fused as [update | reset | candidate]."""

    w_x: Tensor  # I x 3H
    w_h: Tensor  # H x 3H
    b_x: Tensor  # 3H
    b_h: Tensor  # 3H

    @property
    def hidden(self) -> int:
        return self.w_h.shape[0]

    @classmethod
    def create(cls, input_dim: int, hidden: int, rng: np.random.Generator) -> "GruCell":
        return cls(
            kaiming_init((input_dim, 3 * hidden), input_dim, rng),
            kaiming_init((hidden, 3 * hidden), hidden, rng),
            zeros((3 * hidden,)),
            zeros((3 * hidden,)),
        )

    def named(self, prefix: str) -> Dict[str, Tensor]:
        return {f"{prefix}.w_x": self.w_x, f"{prefix}.w_h": self.w_h, f"{prefix}.b_x": self.b_x, f"{prefix}.b_h": self.b_h}


def gru_step(cell: GruCell, h_prev: Tensor, x: Tensor = None, x_proj: Tensor = None) -> Tensor:
    """One GRU update. ``x_proj`` may carry a precomputed ``x @ w_x + b_x``."""
    hd = cell.hidden
    gx = x_proj if x_proj is not None else ad.add(ad.matmul(x, cell.w_x), cell.b_x)
    gh = ad.add(ad.matmul(h_prev, cell.w_h), cell.b_h)
    z = ad.sigmoid(gx[..., :hd] + gh[..., :hd])
    r = ad.sigmoid(gx[..., hd:2 * hd] + gh[..., hd:2 * hd])
    n = ad.tanh(gx[..., 2 * hd:] + r * gh[..., 2 * hd:])
    return n + z * (h_prev - n)


def run_gru(cell: GruCell, seq: Tensor, reverse: bool = False) -> Tensor:
    """Run a GRU over ``B x K x I`` from a zero state; returns ``B x K x H``."""
    b, k = seq.shape[0], seq.shape[1]
    proj = ad.add(ad.matmul(seq, cell.w_x), cell.b_x)
    h = Tensor(np.zeros((b, cell.hidden)))
    states: List[Optional[Tensor]] = [None] * k
    order = range(k - 1, -1, -1) if reverse else range(k)
    for t in order:
        h = gru_step(cell, h, x_proj=proj[:, t, :])
        states[t] = h
    return ad.stack(states, axis=1)


def bidirectional(fwd: GruCell, bwd: GruCell, seq: Tensor) -> Tensor:
    return ad.concat([run_gru(fwd, seq), run_gru(bwd, seq, reverse=True)], axis=-1)


def attend(encoder_states: Tensor, decoder_hidden: Tensor) -> Tuple[Tensor, Tensor]:
    """Scaled dot-product attention of one decoder state over all encoder states.

    Shapes: ``B x K x D`` and ``B x D`` -> context ``B x D``, weights ``B x K``.
    """
    b, k, d = encoder_states.shape
    if decoder_hidden.shape[-1] != d:
        raise ValueError(f"decoder hidden dim {decoder_hidden.shape[-1]} != encoder dim {d}")
    scores = ad.reshape(ad.matmul(encoder_states, ad.reshape(decoder_hidden, (b, d, 1))), (b, k))
    weights = ad.softmax(ad.scale(scores, 1.0 / np.sqrt(d)), axis=-1)
    context = ad.reshape(ad.matmul(ad.reshape(weights, (b, 1, k)), encoder_states), (b, d))
    return context, weights


class SelModel:
    """Parameter container plus forward passes for all three variants."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.params: Dict[str, Tensor] = {}
        self.bn_stats: List[BatchNormStats] = []
        cin = 2 * config.channels
        for i, _ in enumerate(config.pool_widths):
            f = config.conv_filters
            self.params[f"cnn.{i}.kernel"] = kaiming_init((f, 3, 3, cin), 9 * cin, rng)
            self.params[f"cnn.{i}.bias"] = zeros((f,))
            self.params[f"cnn.{i}.bn.gamma"] = ones((f,))
            self.params[f"cnn.{i}.bn.beta"] = zeros((f,))
            self.bn_stats.append(BatchNormStats(f))
            cin = f

        dy, s = config.feature_dim, config.max_sources
        if config.variant == "adrenaline":
            self.enc_fwd = GruCell.create(dy, config.hidden, rng)
            self.enc_bwd = GruCell.create(dy, config.hidden, rng)
            dh = config.decoder_hidden
            self.dec = GruCell.create(dh + 3 * s, dh, rng)
            self.params.update(self.enc_fwd.named("enc.fwd"))
            self.params.update(self.enc_bwd.named("enc.bwd"))
            self.params.update(self.dec.named("dec"))
            head_in = dh
        elif config.variant == "seldnet-m":
            self.rnn_layers = []
            width = dy
            for layer in range(config.seldnet_layers):
                fwd = GruCell.create(width, config.seldnet_hidden, rng)
                bwd = GruCell.create(width, config.seldnet_hidden, rng)
                self.params.update(fwd.named(f"rnn.{layer}.fwd"))
                self.params.update(bwd.named(f"rnn.{layer}.bwd"))
                self.rnn_layers.append((fwd, bwd))
                width = 2 * config.seldnet_hidden
            head_in = width
        else:
            head_in = dy
        for head in ("activity", "azimuth", "elevation"):
            self.params[f"head.{head}.w"] = kaiming_init((head_in, s), head_in, rng)
            self.params[f"head.{head}.b"] = zeros((s,))

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.params.items()}
        for i, st in enumerate(self.bn_stats):
            state[f"cnn.{i}.bn.running_mean"] = st.mean.copy()
            state[f"cnn.{i}.bn.running_var"] = st.var.copy()
            state[f"cnn.{i}.bn.initialized"] = np.array([1.0 if st.initialized else 0.0])
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        expected = set(self.state_dict())
        missing, unexpected = expected - set(state), set(state) - expected
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, p in self.params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)
        for i, st in enumerate(self.bn_stats):
            st.mean = np.array(state[f"cnn.{i}.bn.running_mean"], dtype=np.float64)
            st.var = np.array(state[f"cnn.{i}.bn.running_var"], dtype=np.float64)
            st.initialized = bool(state[f"cnn.{i}.bn.initialized"][0])

    # -- building blocks ----------------------------------------------------

    def cnn_extract(self, features, train: bool = True) -> Tensor:
        """``B x K x L x 2C`` -> ``B x K x D_y`` (pooling acts on frequency only)."""
        cfg = self.config
        x = features if isinstance(features, Tensor) else Tensor(features)
        if x.ndim == 3:
            x = ad.reshape(x, (1,) + x.shape)
        expected = (cfg.frames, cfg.bins, 2 * cfg.channels)
        if tuple(x.shape[1:]) != expected:
            raise ValueError(f"input shape {x.shape[1:]} does not match config {expected}")
        mode = "train" if train else "eval"
        for i, pool in enumerate(cfg.pool_widths):
            x = ad.conv2d(x, self.params[f"cnn.{i}.kernel"], self.params[f"cnn.{i}.bias"])
            x = ad.batchnorm(x, self.params[f"cnn.{i}.bn.gamma"], self.params[f"cnn.{i}.bn.beta"], mode, self.bn_stats[i])
            x = ad.maxpool2d(ad.relu(x), 1, pool)
        b, k = x.shape[0], x.shape[1]
        return ad.reshape(x, (b, k, cfg.feature_dim))

    def heads(self, h: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        p = self.params
        gamma = ad.sigmoid(ad.add(ad.matmul(h, p["head.activity.w"]), p["head.activity.b"]))
        phi = ad.add(ad.matmul(h, p["head.azimuth.w"]), p["head.azimuth.b"])
        theta = ad.add(ad.matmul(h, p["head.elevation.w"]), p["head.elevation.b"])
        return gamma, phi, theta

    def encode(self, y: Tensor) -> Tensor:
        """Bidirectional GRU encoder: ``B x K x D_y`` -> ``B x K x 2D_h``."""
        return bidirectional(self.enc_fwd, self.enc_bwd, y)

    def decode(self, encoder_states: Tensor, steps: Optional[int] = None, teacher: Optional[np.ndarray] = None) -> SelOutput:
        """Attention decoder.

        ``teacher`` (``B x K x 3S`` ground-truth stacks) switches to teacher
        forcing: step k is fed the true output of step k-1 instead of its own.
        """
        b, k, d = encoder_states.shape
        s = self.config.max_sources
        steps = k if steps is None else steps
        if teacher is not None and steps != k:
            raise ValueError("teacher forcing requires steps == K")
        h = Tensor(np.zeros((b, d)))
        x_prev = Tensor(np.zeros((b, 3 * s)))
        gammas, phis, thetas, alphas = [], [], [], []
        for step in range(steps):
            context, alpha = attend(encoder_states, h)
            h = gru_step(self.dec, h, ad.concat([context, x_prev], axis=-1))
            gamma, phi, theta = self.heads(h)
            gammas.append(gamma)
            phis.append(phi)
            thetas.append(theta)
            alphas.append(alpha)
            if teacher is None:
                x_prev = ad.concat([gamma, phi, theta], axis=-1)
            else:
                x_prev = Tensor(teacher[:, step, :])
        return SelOutput(
            ad.stack(gammas, axis=1), ad.stack(phis, axis=1), ad.stack(thetas, axis=1), ad.stack(alphas, axis=1)
        )

    # -- full forward -------------------------------------------------------

    def forward(self, features, train: bool = True, teacher: Optional[np.ndarray] = None) -> SelOutput:
        y = self.cnn_extract(features, train=train)
        variant = self.config.variant
        if variant == "adrenaline":
            return self.decode(self.encode(y), teacher=teacher)
        if variant == "seldnet-m":
            for fwd, bwd in self.rnn_layers:
                y = bidirectional(fwd, bwd, y)
        return SelOutput(*self.heads(y))

    __call__ = forward
