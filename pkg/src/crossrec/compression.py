"""Target-conditioned compression of source behavior representations.

Merged user representations are gated per user: a small network scores how
reliable the user's source behavior is, a relaxed Bernoulli draw turns the
score into a soft gate in (0, 1), and the gated share of the representation
is replaced with Gaussian noise matched to the batch statistics.  Two losses
steer the gates: an upper bound on the retained information (``kl_upper_bound``)
pushes gates closed, an InfoNCE term (``info_nce``) keeps the mixed
representation aligned with the user's target-domain portrait.

All functions are pure and take their random draws as explicit arguments, so
any caller-managed stream reproduces results exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

SIGMA_FLOOR = 1e-4
M_FLOOR = 1e-6
NORM_FLOOR = 1e-12
# keeps logit(m) finite; uniform draws are clipped into the open interval
UNIFORM_EPS = 1e-12


def merge_representations(
    e_source_users: np.ndarray, e_target_users: np.ndarray
) -> np.ndarray:
    """Element-wise sum of the two domains' user representations."""
    a = np.asarray(e_source_users, dtype=np.float64)
    b = np.asarray(e_target_users, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def gumbel_sigmoid(z, m, t: float):
    """Relaxed Bernoulli gate: ``sigmoid((z + logit(m)) / t)``.

    ``z`` is the gate logit, ``m`` a uniform draw in the open interval (0, 1)
    and ``t`` the relaxation temperature.  As ``t`` shrinks the output
    concentrates on {0, 1} with P(gate -> 1) = sigmoid(z); at any ``t`` the
    map is differentiable in ``z``.
    """
    if t <= 0:
        raise ValueError(f"temperature must be positive, got {t}")
    z = np.asarray(z, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if np.any(m <= 0.0) or np.any(m >= 1.0):
        raise ValueError("uniform draw must lie strictly inside (0, 1)")
    return expit((z + np.log(m / (1.0 - m))) / t)


def batch_statistics(
    h: np.ndarray, sigma_floor: float = SIGMA_FLOOR
) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and floored std of the merged representations.

    These define the noise prior; gradients never flow through them.
    """
    mu = h.mean(axis=0)
    sigma = np.maximum(h.std(axis=0), sigma_floor)
    return mu, sigma


def mix_noise(
    h: np.ndarray,
    gate: np.ndarray,
    mu: np.ndarray,
    sigma: np.ndarray,
    noise_draws: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Blend each row of ``h`` with a Gaussian noise row.

    ``noise_draws`` are standard normal; the returned ``eps`` rows follow
    N(mu, sigma^2) per dimension.  Output is ``gate*h + (1-gate)*eps`` with
    the gate broadcast across dimensions.
    """
    h = np.asarray(h, dtype=np.float64)
    gate = np.asarray(gate, dtype=np.float64)
    if noise_draws.shape != h.shape:
        raise ValueError(f"noise shape {noise_draws.shape} != representation shape {h.shape}")
    if gate.shape != (h.shape[0],):
        raise ValueError(f"gate shape {gate.shape} != batch size {h.shape[0]}")
    eps = mu[None, :] + sigma[None, :] * noise_draws
    mixed = gate[:, None] * h + (1.0 - gate[:, None]) * eps
    return mixed, eps


def compress_deterministic(h: np.ndarray, logits: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Noise-free serving path: gate at its expectation, noise at its mean."""
    gate = expit(np.asarray(logits, dtype=np.float64))
    return gate[:, None] * h + (1.0 - gate[:, None]) * mu[None, :]


def kl_upper_bound(
    gate: np.ndarray,
    h: np.ndarray,
    mu: np.ndarray,
    sigma: np.ndarray,
    m_floor: float = M_FLOOR,
) -> float:
    """Batch bound on information retained from the input representations.

    Per embedding dimension k, with M = sum_j (1-gate_j)^2 and
    Q_k = sum_j gate_j (h_jk - mu_k) / sigma_k:

        loss_k = -log(max(M, m_floor))/2 + M/(2B) + Q_k^2/(2B)

    and the result is the mean over dimensions (natural log).  The floor on M
    keeps the value finite when every gate saturates at 1.
    """
    gate = np.asarray(gate, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    b = gate.shape[0]
    if b < 1:
        raise ValueError("batch must contain at least one row")
    m_total = np.sum((1.0 - gate) ** 2)
    q = np.sum(gate[:, None] * (h - mu[None, :]) / sigma[None, :], axis=0)
    per_dim = -0.5 * np.log(max(m_total, m_floor)) + m_total / (2 * b) + q**2 / (2 * b)
    return float(per_dim.mean())


def kl_upper_bound_backward(
    gate: np.ndarray,
    h: np.ndarray,
    mu: np.ndarray,
    sigma: np.ndarray,
    m_floor: float = M_FLOOR,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``kl_upper_bound`` w.r.t. the gates and representations.

    ``mu`` and ``sigma`` are constants of the batch.  Inside the floored
    region the log term contributes no gradient.
    """
    gate = np.asarray(gate, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    b, d = h.shape
    m_total = np.sum((1.0 - gate) ** 2)
    q = np.sum(gate[:, None] * (h - mu[None, :]) / sigma[None, :], axis=0)

    g_m = 1.0 / (2 * b)
    if m_total > m_floor:
        g_m -= 1.0 / (2 * m_total)
    g_q = q / (b * d)

    centered = (h - mu[None, :]) / sigma[None, :]
    g_gate = g_m * (-2.0 * (1.0 - gate)) + centered @ g_q
    g_h = np.outer(gate, g_q / sigma)
    return g_gate, g_h


def _floored_norms(x: np.ndarray, floor: float) -> np.ndarray:
    return np.maximum(np.linalg.norm(x, axis=1), floor)


def info_nce(
    e_target_users: np.ndarray,
    mixed: np.ndarray,
    tau: float,
    norm_floor: float = NORM_FLOOR,
) -> float:
    """Contrastive alignment of mixed representations with target portraits.

    Each mixed row is the anchor; its paired target-user row is the positive
    and the other target rows in the batch are negatives.  Similarity is
    cosine, scaled by ``1/tau``.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    t_reps = np.asarray(e_target_users, dtype=np.float64)
    mixed = np.asarray(mixed, dtype=np.float64)
    if t_reps.shape != mixed.shape:
        raise ValueError(f"shape mismatch: {t_reps.shape} vs {mixed.shape}")
    cos = _cosine_matrix(mixed, t_reps, norm_floor)
    scaled = cos / tau
    scaled -= scaled.max(axis=1, keepdims=True)
    log_denominator = np.log(np.exp(scaled).sum(axis=1))
    losses = log_denominator - np.diag(scaled)
    return float(losses.mean())


def _cosine_matrix(anchors: np.ndarray, candidates: np.ndarray, floor: float) -> np.ndarray:
    """cos[i, j] = cosine(anchors_i, candidates_j) with norm floors."""
    n_a = _floored_norms(anchors, floor)
    n_c = _floored_norms(candidates, floor)
    return (anchors @ candidates.T) / (n_a[:, None] * n_c[None, :])


def info_nce_backward(
    e_target_users: np.ndarray,
    mixed: np.ndarray,
    tau: float,
    norm_floor: float = NORM_FLOOR,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``info_nce`` w.r.t. target rows and mixed rows."""
    t_reps = np.asarray(e_target_users, dtype=np.float64)
    mixed = np.asarray(mixed, dtype=np.float64)
    b = t_reps.shape[0]
    n_m = _floored_norms(mixed, norm_floor)
    n_t = _floored_norms(t_reps, norm_floor)
    cos = (mixed @ t_reps.T) / (n_m[:, None] * n_t[None, :])

    scaled = cos / tau
    scaled -= scaled.max(axis=1, keepdims=True)
    exp = np.exp(scaled)
    softmax = exp / exp.sum(axis=1, keepdims=True)
    # d(mean_i loss_i)/d cos[i, j]
    g_cos = (softmax - np.eye(b)) / (tau * b)

    inv = 1.0 / (n_m[:, None] * n_t[None, :])
    # cosine gradient: through the dot product and through each norm; rows at
    # the norm floor are treated as constant-norm (subgradient choice)
    m_live = (np.linalg.norm(mixed, axis=1) > norm_floor).astype(np.float64)
    t_live = (np.linalg.norm(t_reps, axis=1) > norm_floor).astype(np.float64)
    g_mixed = (g_cos * inv) @ t_reps
    g_mixed -= ((g_cos * cos).sum(axis=1) / n_m**2 * m_live)[:, None] * mixed
    g_target = (g_cos * inv).T @ mixed
    g_target -= ((g_cos * cos).sum(axis=0) / n_t**2 * t_live)[:, None] * t_reps
    return g_target, g_mixed


@dataclass
class GateNetwork:
    """One-hidden-layer scorer mapping a merged representation to a logit.

    ``tanh`` hidden layer of width ``hidden``, linear scalar output.  The
    logit feeds the relaxed Bernoulli gate, so a large output means the
    user's source behavior is trusted.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def initialize(cls, dim: int, hidden: int, rng: np.random.Generator) -> "GateNetwork":
        return cls(
            w1=rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, hidden)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden),
            b2=np.zeros(()),
        )

    def logits(self, h: np.ndarray) -> np.ndarray:
        return self.forward(h)[0]

    def forward(self, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return per-row logits and the hidden activations (for backward)."""
        hidden = np.tanh(h @ self.w1 + self.b1)
        return hidden @ self.w2 + float(self.b2), hidden

    def backward(
        self, h: np.ndarray, hidden: np.ndarray, g_logits: np.ndarray
    ) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Gradients of the weights and of the input rows."""
        g_hidden = g_logits[:, None] * self.w2[None, :]
        g_pre = g_hidden * (1.0 - hidden**2)
        grads = {
            "w1": h.T @ g_pre,
            "b1": g_pre.sum(axis=0),
            "w2": hidden.T @ g_logits,
            "b2": np.asarray(g_logits.sum()),
        }
        return grads, g_pre @ self.w1.T


@dataclass
class CompressionOutput:
    """Everything one compression pass produces, kept for backprop and audit."""

    h: np.ndarray
    logits: np.ndarray
    gate: np.ndarray
    eps: np.ndarray
    mixed: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    uniform_draws: np.ndarray


def compress_batch(
    gate_network: GateNetwork,
    h: np.ndarray,
    uniform_draws: np.ndarray,
    noise_draws: np.ndarray,
    temperature: float,
    sigma_floor: float = SIGMA_FLOOR,
) -> CompressionOutput:
    """Run the whole compression stage on one batch of merged representations."""
    logits, _ = gate_network.forward(h)
    gate = gumbel_sigmoid(logits, uniform_draws, temperature)
    mu, sigma = batch_statistics(h, sigma_floor)
    mixed, eps = mix_noise(h, gate, mu, sigma, noise_draws)
    return CompressionOutput(
        h=h, logits=logits, gate=gate, eps=eps, mixed=mixed,
        mu=mu, sigma=sigma, uniform_draws=uniform_draws,
    )
