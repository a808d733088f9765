"""Band-split separator with rotary axial attention.

The input spectrogram is partitioned into frequency bands, each band is
projected to a shared embedding width, and a stack of transformer blocks
alternates self-attention along the time axis (within each band) and along
the band axis (at each time step). A bounded complex mask per band is then
scattered back over the bins and applied to the mixture spectrogram.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .audio_io import ALL_STEMS, AudioBuffer
from .dsp import StftParams, istft_graph, stft_graph
from .tensor import Tensor


# -- frequency band partition -------------------------------------------------


@dataclass(frozen=True)
class BandSpec:
    """Contiguous partition of [0, F) into half-open bin intervals."""

    edges: tuple
    scale: str = "linear"

    def __post_init__(self):
        if not self.edges:
            raise ValueError("band spec needs at least one band")
        prev = 0
        for start, end in self.edges:
            if start != prev or end <= start:
                raise ValueError(f"bands must be contiguous, non-empty, sorted; got {self.edges}")
            prev = end

    @property
    def n_bands(self) -> int:
        return len(self.edges)

    @property
    def n_bins(self) -> int:
        return self.edges[-1][1]

    @property
    def widths(self):
        return tuple(end - start for start, end in self.edges)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def make_band_spec(scale: str, n_bins: int, n_bands: int, sample_rate: int = 44100,
                   n_fft: int | None = None) -> BandSpec:
    """Equal-width linear bands, or mel-spaced edges snapped to bins.

    Linear splits spread the remainder over the lowest bands. Mel edges that
    collapse onto the same bin are deduplicated, so the result may hold fewer
    than `n_bands` bands; coverage of [0, n_bins) is always exact.
    """
    if not 1 <= n_bands <= n_bins:
        raise ValueError(f"n_bands must be in [1, {n_bins}], got {n_bands}")
    if scale == "linear":
        base, rem = divmod(n_bins, n_bands)
        widths = [base + (1 if i < rem else 0) for i in range(n_bands)]
        bounds = np.concatenate([[0], np.cumsum(widths)])
    elif scale == "mel":
        if n_fft is None:
            n_fft = 2 * (n_bins - 1)
        mel_pts = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_bands + 1)
        bins = np.round(mel_to_hz(mel_pts) * n_fft / sample_rate).astype(int)
        bins[0], bins[-1] = 0, n_bins
        bounds = np.unique(np.clip(bins, 0, n_bins))
    else:
        raise ValueError(f"unknown band scale {scale!r}")
    edges = tuple((int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]))
    return BandSpec(edges, scale)


# -- configuration -------------------------------------------------------------


@dataclass
class ModelConfig:
    dim: int = 64
    depth: int = 2
    heads: int = 4
    band_spec: BandSpec = field(default_factory=lambda: make_band_spec("linear", 1025, 12))
    stft: StftParams = field(default_factory=StftParams)
    target: str = "vocals"
    sample_rate: int = 44100
    rope_time: bool = True
    rope_band: bool = True
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if (self.dim // self.heads) % 2:
            raise ValueError("head_dim must be even for rotary pairs")
        if self.band_spec.n_bins != self.stft.bins:
            raise ValueError(
                f"band spec covers {self.band_spec.n_bins} bins, STFT produces {self.stft.bins}"
            )
        if self.target not in ALL_STEMS:
            raise ValueError(f"unknown target stem {self.target!r}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def to_text(self) -> str:
        edges = "|".join(f"{a}:{b}" for a, b in self.band_spec.edges)
        lines = [
            f"dim = {self.dim}",
            f"depth = {self.depth}",
            f"heads = {self.heads}",
            f"target = {self.target}",
            f"sample_rate = {self.sample_rate}",
            f"n_fft = {self.stft.n_fft}",
            f"hop = {self.stft.hop}",
            f"rope_time = {int(self.rope_time)}",
            f"rope_band = {int(self.rope_band)}",
            f"rope_base = {self.rope_base!r}",
            f"band_scale = {self.band_spec.scale}",
            f"band_edges = {edges}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        edges = tuple(
            (int(a), int(b)) for a, b in (pair.split(":") for pair in kv["band_edges"].split("|"))
        )
        return cls(
            dim=int(kv["dim"]),
            depth=int(kv["depth"]),
            heads=int(kv["heads"]),
            band_spec=BandSpec(edges, kv["band_scale"]),
            stft=StftParams(n_fft=int(kv["n_fft"]), hop=int(kv["hop"])),
            target=kv["target"],
            sample_rate=int(kv["sample_rate"]),
            rope_time=bool(int(kv["rope_time"])),
            rope_band=bool(int(kv["rope_band"])),
            rope_base=float(kv["rope_base"]),
        )


def desk_config(**overrides) -> ModelConfig:
    """Small CPU-friendly default: dim 64, depth 2, 4 heads, 12 linear bands."""
    return ModelConfig(**overrides)


# -- rotary position embedding --------------------------------------------------

_ROPE_CACHE: dict = {}


def _rope_tables(seq: int, head_dim: int, base: float):
    key = (seq, head_dim, base)
    hit = _ROPE_CACHE.get(key)
    if hit is None:
        inv = base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
        angles = np.arange(seq, dtype=np.float64)[:, None] * inv[None, :]
        hit = (
            np.cos(angles).astype(np.float32)[:, :, None],  # [seq, head_dim/2, 1]
            np.sin(angles).astype(np.float32)[:, :, None],
        )
        _ROPE_CACHE[key] = hit
    return hit


def rope_rotate(x: Tensor, base: float = 10000.0) -> Tensor:
    """Rotate dim pairs (2i, 2i+1) of [..., seq, head_dim] by p * base^(-2i/hd)."""
    *lead, seq, hd = x.shape
    if hd % 2:
        raise ValueError("head_dim must be even")
    cos, sin = _rope_tables(seq, hd, float(base))
    pairs = x.reshape(*lead, seq, hd // 2, 2)
    xe = T.narrow(pairs, -1, 0, 1)
    xo = T.narrow(pairs, -1, 1, 1)
    ye = T.sub(T.mul(xe, Tensor(cos)), T.mul(xo, Tensor(sin)))
    yo = T.add(T.mul(xe, Tensor(sin)), T.mul(xo, Tensor(cos)))
    return T.concat([ye, yo], axis=-1).reshape(*lead, seq, hd)


# -- transformer blocks ----------------------------------------------------------


@dataclass
class AttentionParams:
    norm_gain: Tensor
    norm_bias: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


@dataclass
class FeedForwardParams:
    norm_gain: Tensor
    norm_bias: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class BlockParams:
    attn: AttentionParams
    ffn: FeedForwardParams


@dataclass
class LayerParams:
    time: BlockParams
    band: BlockParams


@dataclass
class BandInParams:
    norm_gain: Tensor
    norm_bias: Tensor
    weight: Tensor
    bias: Tensor


@dataclass
class MaskOutParams:
    weight: Tensor
    bias: Tensor


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, s, d = x.shape
    hd = d // heads
    y = x.reshape(*lead, s, heads, hd)
    n = y.ndim
    perm = tuple(range(n - 3)) + (n - 2, n - 3, n - 1)  # [..., H, S, hd]
    return T.transpose(y, perm)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, s, hd = x.shape
    n = x.ndim
    perm = tuple(range(n - 3)) + (n - 2, n - 3, n - 1)  # [..., S, H, hd]
    return T.transpose(x, perm).reshape(*lead, s, h * hd)


def attention(x: Tensor, p: AttentionParams, heads: int, use_rope: bool = True,
              rope_base: float = 10000.0) -> Tensor:
    """Pre-norm multi-head self-attention over the second-to-last axis."""
    hd = x.shape[-1] // heads
    h = T.layer_norm(x, p.norm_gain, p.norm_bias)
    q = _split_heads(T.add(T.matmul(h, p.wq), p.bq), heads)
    k = _split_heads(T.add(T.matmul(h, p.wk), p.bk), heads)
    v = _split_heads(T.add(T.matmul(h, p.wv), p.bv), heads)
    if use_rope:
        q = rope_rotate(q, rope_base)
        k = rope_rotate(k, rope_base)
    kt = T.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    scores = T.scale(T.matmul(q, kt), 1.0 / np.sqrt(hd))
    ctx = T.matmul(T.softmax(scores, axis=-1), v)
    out = T.add(T.matmul(_merge_heads(ctx), p.wo), p.bo)
    return T.add(x, out)


def feed_forward(x: Tensor, p: FeedForwardParams) -> Tensor:
    """Pre-norm two-layer MLP (4x expansion, gelu) with residual."""
    h = T.layer_norm(x, p.norm_gain, p.norm_bias)
    h = T.gelu(T.add(T.matmul(h, p.w1), p.b1))
    h = T.add(T.matmul(h, p.w2), p.b2)
    return T.add(x, h)


def axial_layer(feats: Tensor, p: LayerParams, heads: int, rope_time: bool,
                rope_band: bool, rope_base: float) -> Tensor:
    """Time pass per band, then band pass per time step, on [N, B, T, dim]."""
    h = attention(feats, p.time.attn, heads, rope_time, rope_base)
    h = feed_forward(h, p.time.ffn)
    h = T.transpose(h, (0, 2, 1, 3))  # [N, T, B, dim]
    h = attention(h, p.band.attn, heads, rope_band, rope_base)
    h = feed_forward(h, p.band.ffn)
    return T.transpose(h, (0, 2, 1, 3))


# -- band projection in/out -------------------------------------------------------


def band_split(spec: Tensor, bands: BandSpec, band_in) -> Tensor:
    """Embed [N, T, F, 2] into per-band features [N, B, T, dim]."""
    if spec.shape[-2] != bands.n_bins:
        raise ValueError(f"spectrogram has {spec.shape[-2]} bins, band spec covers {bands.n_bins}")
    n, t = spec.shape[0], spec.shape[1]
    pieces = T.split(spec, list(bands.widths), axis=-2)
    feats = []
    for piece, params, width in zip(pieces, band_in, bands.widths):
        flat = piece.reshape(n, t, width * 2)
        h = T.layer_norm(flat, params.norm_gain, params.norm_bias)
        h = T.add(T.matmul(h, params.weight), params.bias)
        feats.append(h.reshape(n, 1, t, h.shape[-1]))
    return T.concat(feats, axis=1)


def mask_estimate(feats: Tensor, bands: BandSpec, mask_out) -> Tensor:
    """Map features [N, B, T, dim] to a tanh-bounded complex mask [N, T, F, 2]."""
    if feats.shape[1] != bands.n_bands:
        raise ValueError(f"features carry {feats.shape[1]} bands, spec has {bands.n_bands}")
    n, _, t, _ = feats.shape
    per_band = T.split(feats, [1] * bands.n_bands, axis=1)
    chunks = []
    for piece, params, width in zip(per_band, mask_out, bands.widths):
        h = piece.reshape(n, t, piece.shape[-1])
        h = T.tanh(T.add(T.matmul(h, params.weight), params.bias))
        chunks.append(h.reshape(n, t, width, 2))
    return T.concat(chunks, axis=-2)


def complex_mul(a: Tensor, b: Tensor) -> Tensor:
    """Pointwise complex product of two [..., 2] re/im tensors."""
    ar, ai = T.narrow(a, -1, 0, 1), T.narrow(a, -1, 1, 1)
    br, bi = T.narrow(b, -1, 0, 1), T.narrow(b, -1, 1, 1)
    re = T.sub(T.mul(ar, br), T.mul(ai, bi))
    im = T.add(T.mul(ar, bi), T.mul(ai, br))
    return T.concat([re, im], axis=-1)


# -- the separator -----------------------------------------------------------------


class SeparatorModel:
    """One trained mapping: mixture waveform -> one target stem waveform."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = rng or np.random.default_rng(0)
        self._params: dict[str, Tensor] = {}
        dim = config.dim

        def weight(name, shape, std=0.02):
            t = Tensor(rng.normal(0.0, std, shape).astype(np.float32), requires_grad=True)
            self._params[name] = t
            return t

        def zeros(name, shape):
            t = Tensor(np.zeros(shape, np.float32), requires_grad=True)
            self._params[name] = t
            return t

        def ones(name, shape):
            t = Tensor(np.ones(shape, np.float32), requires_grad=True)
            self._params[name] = t
            return t

        self.band_in = []
        for i, w in enumerate(config.band_spec.widths):
            pre = f"band_in.{i}"
            self.band_in.append(
                BandInParams(
                    norm_gain=ones(f"{pre}.norm_gain", (w * 2,)),
                    norm_bias=zeros(f"{pre}.norm_bias", (w * 2,)),
                    weight=weight(f"{pre}.weight", (w * 2, dim)),
                    bias=zeros(f"{pre}.bias", (dim,)),
                )
            )

        def block(pre):
            return BlockParams(
                attn=AttentionParams(
                    norm_gain=ones(f"{pre}.attn.norm_gain", (dim,)),
                    norm_bias=zeros(f"{pre}.attn.norm_bias", (dim,)),
                    wq=weight(f"{pre}.attn.wq", (dim, dim)),
                    bq=zeros(f"{pre}.attn.bq", (dim,)),
                    wk=weight(f"{pre}.attn.wk", (dim, dim)),
                    bk=zeros(f"{pre}.attn.bk", (dim,)),
                    wv=weight(f"{pre}.attn.wv", (dim, dim)),
                    bv=zeros(f"{pre}.attn.bv", (dim,)),
                    wo=weight(f"{pre}.attn.wo", (dim, dim)),
                    bo=zeros(f"{pre}.attn.bo", (dim,)),
                ),
                ffn=FeedForwardParams(
                    norm_gain=ones(f"{pre}.ffn.norm_gain", (dim,)),
                    norm_bias=zeros(f"{pre}.ffn.norm_bias", (dim,)),
                    w1=weight(f"{pre}.ffn.w1", (dim, 4 * dim)),
                    b1=zeros(f"{pre}.ffn.b1", (4 * dim,)),
                    w2=weight(f"{pre}.ffn.w2", (4 * dim, dim)),
                    b2=zeros(f"{pre}.ffn.b2", (dim,)),
                ),
            )

        self.layers = [
            LayerParams(time=block(f"layers.{l}.time"), band=block(f"layers.{l}.band"))
            for l in range(config.depth)
        ]

        # start masks at 0.5 + 0i (pass half the mixture): a zero-magnitude
        # start sits against the log-magnitude loss barrier and can trap the
        # estimate at the wrong sign, since the spectral terms are phase-blind
        mask_bias0 = np.zeros(2, np.float32)
        mask_bias0[0] = np.arctanh(0.5)
        self.mask_out = []
        for i, w in enumerate(config.band_spec.widths):
            pre = f"mask_out.{i}"
            bias = zeros(f"{pre}.bias", (w * 2,))
            bias.data[:] = np.tile(mask_bias0, w)
            self.mask_out.append(
                MaskOutParams(
                    weight=weight(f"{pre}.weight", (dim, w * 2)),
                    bias=bias,
                )
            )

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def parameters(self):
        return list(self._params.values())

    def param_shapes(self) -> dict[str, tuple]:
        return {name: tuple(t.shape) for name, t in self._params.items()}

    def forward(self, waves, identity_mask: bool = False) -> Tensor:
        """Differentiable mixture -> stem on waveform rows [N, frames].

        `identity_mask` bypasses mask estimation with an exact 1+0i mask,
        which reduces the model to the STFT round trip (diagnostic hook).
        """
        x = waves if isinstance(waves, Tensor) else Tensor(np.asarray(waves, dtype=np.float32))
        if x.ndim != 2:
            raise ValueError(f"expected [rows, frames], got shape {x.shape}")
        cfg = self.config
        frames = x.shape[-1]
        spec = stft_graph(x, cfg.stft)  # [N, T, F, 2]
        if identity_mask:
            return istft_graph(spec, cfg.stft, frames)
        feats = band_split(spec, cfg.band_spec, self.band_in)
        for layer in self.layers:
            feats = axial_layer(feats, layer, cfg.heads, cfg.rope_time, cfg.rope_band, cfg.rope_base)
        mask = mask_estimate(feats, cfg.band_spec, self.mask_out)
        return istft_graph(complex_mul(mask, spec), cfg.stft, frames)

    def separate(self, mixture: AudioBuffer, identity_mask: bool = False) -> AudioBuffer:
        """Inference wrapper: channels run as independent batch rows."""
        if mixture.sample_rate != self.config.sample_rate:
            raise ValueError(
                f"mixture rate {mixture.sample_rate} != model rate {self.config.sample_rate}; resample first"
            )
        with T.no_grad():
            out = self.forward(mixture.samples, identity_mask=identity_mask)
        return AudioBuffer(out.data, mixture.sample_rate)


def separate(model: SeparatorModel, mixture: AudioBuffer) -> AudioBuffer:
    return model.separate(mixture)
