"""Pairwise sigmoid contrastive objective and the momentum-only/AdamW
hybrid optimizer.

The loss treats every (volume i, text j) pair in a batch as an independent
binary classification: matched pairs (i == i) are positives, everything
else a negative. The optimizer routes each parameter to exactly one rule:
rank >= 2 tensors get the non-adaptive momentum-only update with decoupled
decay, everything else (biases, gains, scalars, rank-1) falls back to
AdamW.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .tensor import ContractError, Tensor


def sigmoid_pair_loss_from_sims(sims: Tensor, log_temp: Tensor,
                                pair_bias: Tensor) -> Tensor:
    """Loss over a precomputed square similarity matrix (diagonal = positives)."""
    if sims.ndim != 2 or sims.shape[0] != sims.shape[1]:
        raise ContractError(f"similarity matrix must be square, got {sims.shape}")
    bsz = sims.shape[0]
    if bsz < 1:
        raise ContractError("sigmoid_pair_loss needs at least one pair")
    logits = sims * tz.exp(log_temp) + pair_bias
    signs = tz.constant(2.0 * np.eye(bsz) - 1.0)
    loglik = tz.logsigmoid(logits * signs)
    return loglik.sum() * (-1.0 / bsz)


def sigmoid_pair_loss(img: Tensor, txt: Tensor, log_temp: Tensor,
                      pair_bias: Tensor) -> Tensor:
    """-(1/B) sum_ij log sigmoid(z_ij * (exp(t') <img_i, txt_j> + b')).

    z is +1 on the diagonal and -1 off it. Rows of img/txt must be unit
    vectors; log_temp and pair_bias are learnable scalars.
    """
    if img.ndim != 2 or txt.ndim != 2 or img.shape != txt.shape:
        raise ContractError(f"paired embeddings must share [B, D], got {img.shape} / {txt.shape}")
    return sigmoid_pair_loss_from_sims(tz.matmul(img, txt.transpose((1, 0))),
                                       log_temp, pair_bias)


@dataclass
class MuonState:
    momentum: np.ndarray


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def muon_step(param: Tensor, grad: np.ndarray, state: MuonState, lr: float,
              weight_decay: float, momentum: float) -> None:
    """u_t = beta u_{t-1} + (1-beta) g_t ; w <- (1 - lr*decay) w - lr u_t.

    No second-moment normalization of any kind.
    """
    state.momentum = momentum * state.momentum + (1.0 - momentum) * grad
    param.data = (1.0 - lr * weight_decay) * param.data - lr * state.momentum


def adamw_step(param: Tensor, grad: np.ndarray, state: AdamState, lr: float,
               weight_decay: float, beta1: float, beta2: float, eps: float) -> None:
    """AdamW with bias correction and decoupled weight decay."""
    state.step += 1
    t = state.step
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** t)
    v_hat = state.v / (1.0 - beta2 ** t)
    param.data = param.data - lr * (m_hat / (np.sqrt(v_hat) + eps)
                                    + weight_decay * param.data)


MUON_HYBRID = "muon_hybrid"
ADAMW_ONLY = "adamw_only"


@dataclass
class HybridConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    muon_momentum: float = 0.95
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mode: str = MUON_HYBRID


class HybridOptimizer:
    """Routes rank>=2 parameters to the momentum-only rule, the rest to AdamW.

    In ADAMW_ONLY mode every parameter takes the AdamW rule (the appendix
    comparison run). Parameter order is the insertion order of the mapping
    and is deterministic.
    """

    def __init__(self, params: dict[str, Tensor], cfg: HybridConfig = HybridConfig()):
        if cfg.mode not in (MUON_HYBRID, ADAMW_ONLY):
            raise ContractError(f"unknown optimizer mode {cfg.mode!r}")
        self.cfg = cfg
        self.params = dict(params)
        self.state: dict[str, object] = {}
        for name, p in self.params.items():
            if self._is_muon(p):
                self.state[name] = MuonState(momentum=np.zeros_like(p.data))
            else:
                self.state[name] = AdamState(m=np.zeros_like(p.data),
                                             v=np.zeros_like(p.data))

    def _is_muon(self, p: Tensor) -> bool:
        return self.cfg.mode == MUON_HYBRID and p.ndim >= 2

    def routing(self) -> dict[str, str]:
        return {name: ("muon" if self._is_muon(p) else "adamw")
                for name, p in self.params.items()}

    def step(self) -> None:
        cfg = self.cfg
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter '{name}' has no gradient")
            st = self.state[name]
            if isinstance(st, MuonState):
                muon_step(p, p.grad, st, cfg.lr, cfg.weight_decay, cfg.muon_momentum)
            else:
                adamw_step(p, p.grad, st, cfg.lr, cfg.weight_decay, cfg.beta1,
                           cfg.beta2, cfg.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
