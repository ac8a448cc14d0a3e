"""Frozen scoring head, classification losses, and prompt-expert optimization.

The head stands in for a frozen vision-language encoder pair: a per-class
fixed random projection of the flattened prompt plus a per-class unit anchor
gives each class a text feature on the unit sphere; images are scored by
temperature-scaled cosine against their (mean-pooled, normalized) token
feature. The zero prompt reproduces the anchors exactly, which serves as the
zero-shot reference distribution for KL debiasing.

Gradients of the combined objective with respect to the prompt experts are
analytic (softmax, cosine, normalization, and the frozen linear map are all
differentiated in full; mixture weights are constants because the router has
no parameters) and are checked against central finite differences in the
test suite.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .linalg import Rng, normalize, orthonormal_rows
from .routing import RoutedPrompt

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


class FrozenTextHead:
    """Per-class frozen affine maps from prompt space to feature space.

    Construction is fully determined by (classes, dims, prompt_tokens, seed)
    unless explicit anchors are supplied; anchors are orthonormal whenever the
    class count allows it, so the zero-prompt reference separates classes by
    construction.
    """

    def __init__(self, classes: int, dims: int, prompt_tokens: int, rng: Rng,
                 anchors: np.ndarray | None = None):
        if classes < 2:
            raise ValueError("need at least two classes")
        self.classes = classes
        self.dims = dims
        self.prompt_tokens = prompt_tokens
        flat = prompt_tokens * dims
        # fan-in scaling keeps the prompt contribution O(|prompt|/sqrt(L)),
        # small next to the unit anchors at init
        self.projection = rng.spawn(0).normal((classes, dims, flat)) / np.sqrt(flat)
        if anchors is None:
            anchors = (orthonormal_rows(classes, dims, rng.spawn(1)) if classes <= dims
                       else np.array([normalize(v) for v in rng.spawn(1).normal((classes, dims))]))
        if anchors.shape != (classes, dims):
            raise ValueError(f"anchors must have shape {(classes, dims)}, got {anchors.shape}")
        self.anchors = anchors.astype(np.float64)
        self._proj_flat = self.projection.reshape(classes * dims, flat)

    def prompt_activations(self, prompt: np.ndarray) -> np.ndarray:
        """Pre-normalization text activation per class: T_c @ vec(prompt) + u_c."""
        flat = prompt.reshape(-1)
        if flat.shape[0] != self.projection.shape[2]:
            raise ValueError(
                f"prompt shape {prompt.shape} does not match head "
                f"(L={self.prompt_tokens}, D={self.dims})")
        return (self._proj_flat @ flat).reshape(self.classes, self.dims) + self.anchors


def image_feature(tokens: np.ndarray) -> np.ndarray:
    """Image feature proxy: unit-normalized mean of the token embeddings."""
    return normalize(tokens.mean(axis=0))


def text_features(prompt: np.ndarray, head: FrozenTextHead) -> np.ndarray:
    """Unit text feature per class for the given prompt."""
    acts = head.prompt_activations(prompt)
    norms = np.linalg.norm(acts, axis=1)
    dead = norms == 0.0
    if dead.any():
        # measure-zero event: nudge along the anchor and renormalize
        log.warning("zero-norm text activation for %d class(es); perturbing", dead.sum())
        acts[dead] = head.anchors[dead] * 1e-8
        norms = np.linalg.norm(acts, axis=1)
    return acts / norms[:, None]


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def predict(prompt: np.ndarray, head: FrozenTextHead, f: np.ndarray,
            tau: float) -> np.ndarray:
    """Class probabilities from temperature-scaled cosine scores."""
    if not tau > 0:
        raise ValueError("tau must be > 0")
    f_hat = normalize(f)
    sims = text_features(prompt, head) @ f_hat
    return _softmax(sims / tau)


def zero_shot_reference(head: FrozenTextHead, f: np.ndarray, tau: float) -> np.ndarray:
    """Reference distribution under the fixed all-zeros prompt (anchors only)."""
    if not tau > 0:
        raise ValueError("tau must be > 0")
    f_hat = normalize(f)
    return _softmax((head.anchors @ f_hat) / tau)


@dataclass
class LossBreakdown:
    ce: float
    kl: float
    total: float
    beta: float
    clamped: bool = False


def loss(probs_local: np.ndarray, probs_ref: np.ndarray, label: int,
         beta: float) -> LossBreakdown:
    """Cross-entropy plus beta-weighted KL(reference || local)."""
    if label < 0 or label >= len(probs_local):
        raise ValueError(f"label {label} out of range for {len(probs_local)} classes")
    p_label = float(probs_local[label])
    clamped = p_label < LOG_CLAMP
    ce = -np.log(max(p_label, LOG_CLAMP))
    local = np.maximum(probs_local, LOG_CLAMP)
    ref = np.asarray(probs_ref, dtype=np.float64)
    nonzero = ref > 0
    kl = float(np.sum(ref[nonzero] * np.log(ref[nonzero] / local[nonzero])))
    kl = max(kl, 0.0)
    return LossBreakdown(ce=float(ce), kl=kl, total=float(ce + beta * kl),
                         beta=beta, clamped=clamped)


@dataclass
class ExpertGradients:
    per_expert: np.ndarray  # (M, L, D), zero for experts with pi == 0
    breakdown: LossBreakdown


def gradients(sample, experts: np.ndarray, routed: RoutedPrompt,
              head: FrozenTextHead, beta: float, tau: float) -> ExpertGradients:
    """Analytic d(total loss)/d(expert prompts) with routing held fixed.

    Chain: per-expert prompt -> mixture prompt (weights constant) -> per-class
    activation -> normalization -> cosine score -> softmax -> CE + beta*KL.
    """
    if experts.shape[1:] != routed.prompt.shape:
        raise ValueError("expert shape does not match the routed prompt")
    f_hat = normalize(image_feature(sample.tokens))

    acts = head.prompt_activations(routed.prompt)      # (C, D)
    norms = np.linalg.norm(acts, axis=1)
    norms = np.where(norms == 0.0, 1e-8, norms)
    w = acts / norms[:, None]                          # unit text features
    sims = w @ f_hat
    p = _softmax(sims / tau)
    ref = _softmax((head.anchors @ f_hat) / tau)

    breakdown = loss(p, ref, sample.label, beta)

    onehot = np.zeros(head.classes)
    onehot[sample.label] = 1.0
    dz = (p - onehot) + beta * (p - ref)               # d total / d logits
    ds = dz / tau                                      # d total / d cosine scores
    # d cos / d activation: (f_hat - sim * w) / norm, per class
    dacts = ds[:, None] * (f_hat[None, :] - sims[:, None] * w) / norms[:, None]
    dflat = head._proj_flat.T @ dacts.reshape(-1)      # d total / d vec(prompt)
    dprompt = dflat.reshape(routed.prompt.shape)

    per_expert = routed.weights.pi[:, None, None] * dprompt[None, :, :]
    return ExpertGradients(per_expert=per_expert, breakdown=breakdown)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params))


def adamw_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
               lr: float, weight_decay: float = 0.0,
               betas: tuple[float, float] = (0.9, 0.999),
               eps: float = 1e-8) -> tuple[np.ndarray, AdamState]:
    """One decoupled-weight-decay adaptive-moment update; returns new params."""
    if grads.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient, and state shapes must match")
    b1, b2 = betas
    step = state.step + 1
    m = b1 * state.m + (1 - b1) * grads
    v = b2 * state.v + (1 - b2) * grads * grads
    m_hat = m / (1 - b1 ** step)
    v_hat = v / (1 - b2 ** step)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * weight_decay * params
    return new_params, AdamState(m=m, v=v, step=step)


class AdamW:
    """Stateful convenience wrapper around ``adamw_step`` for a training loop."""

    def __init__(self, shape: tuple[int, ...], lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state = AdamState(m=np.zeros(shape), v=np.zeros(shape))

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        params, self.state = adamw_step(params, grads, self.state, self.lr,
                                        self.weight_decay, self.betas, self.eps)
        return params
