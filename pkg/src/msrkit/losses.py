"""Training objective: waveform L1 plus multi-resolution spectral loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dsp import StftParams, stft_graph
from .tensor import Tensor

LOG_EPS = 1e-7


@dataclass(frozen=True)
class MrStftConfig:
    resolutions: tuple = ((512, 128), (1024, 256), (2048, 512))
    sc_weight: float = 1.0
    mag_weight: float = 1.0
    lambda_spec: float = 1.0

    def __post_init__(self):
        if not self.resolutions:
            raise ValueError("need at least one STFT resolution")
        for n_fft, hop in self.resolutions:
            if hop > n_fft:
                raise ValueError(f"hop {hop} exceeds n_fft {n_fft}")

    @property
    def max_n_fft(self) -> int:
        return max(n for n, _ in self.resolutions)


def _as_pair(est, ref):
    est = est if isinstance(est, Tensor) else Tensor(np.asarray(est, dtype=np.float32))
    ref = ref if isinstance(ref, Tensor) else Tensor(np.asarray(ref, dtype=np.float32))
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {ref.shape}")
    return est, ref


def l1_loss(est, ref) -> Tensor:
    """Mean absolute difference over all samples."""
    est, ref = _as_pair(est, ref)
    return T.absolute(T.sub(est, ref)).mean()


def mrstft_loss(est, ref, cfg: MrStftConfig = MrStftConfig()) -> Tensor:
    """Spectral convergence + log-magnitude distance, averaged over resolutions.

    Per resolution: sc_weight * ||S_ref| - |S_est||_F / ||S_ref||_F
                  + mag_weight * mean |log(|S_ref|+eps) - log(|S_est|+eps)|.
    A spectrally silent reference drops the (undefined) convergence term.
    """
    est, ref = _as_pair(est, ref)
    if est.shape[-1] < cfg.max_n_fft:
        raise ValueError(f"signals must hold at least {cfg.max_n_fft} samples, got {est.shape[-1]}")
    terms = []
    for n_fft, hop in cfg.resolutions:
        params = StftParams(n_fft=n_fft, hop=hop)
        mag_est = T.complex_abs(stft_graph(est, params))
        mag_ref = T.complex_abs(stft_graph(ref, params))
        diff = T.sub(mag_ref, mag_est)
        ref_energy = T.mul(mag_ref, mag_ref).sum()
        term = None
        if cfg.sc_weight and ref_energy.item() > 0.0:
            sc = T.div(T.sqrt(T.mul(diff, diff).sum()), T.sqrt(ref_energy))
            term = T.scale(sc, cfg.sc_weight)
        if cfg.mag_weight:
            log_diff = T.sub(
                T.log(T.add(mag_ref, Tensor(np.float32(LOG_EPS)))),
                T.log(T.add(mag_est, Tensor(np.float32(LOG_EPS)))),
            )
            mag = T.scale(T.absolute(log_diff).mean(), cfg.mag_weight)
            term = mag if term is None else T.add(term, mag)
        terms.append(term if term is not None else Tensor(np.float32(0.0)))
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.scale(total, 1.0 / len(terms))


def combined_loss(est, ref, cfg: MrStftConfig = MrStftConfig()) -> Tensor:
    """l1 + lambda_spec * mrstft, differentiable end to end."""
    base = l1_loss(est, ref)
    if cfg.lambda_spec == 0.0:
        return base
    return T.add(base, T.scale(mrstft_loss(est, ref, cfg), cfg.lambda_spec))
