"""Denoising diffusion over node embeddings, plus a VAE augmenter baseline.

The denoiser predicts the clean embedding directly.  The reverse chain turns
that prediction into a noise estimate before taking each ancestral step, so
the epsilon-form update and the clean-embedding posterior mean coincide
(see :func:`posterior_mean_eps_form` / :func:`posterior_mean_x0_form`).
"""

from dataclasses import dataclass

import numpy as np

from . import ndtape as nd
from .errors import ConfigError, ContractError

SCHEDULE_KINDS = ("linear", "quadratic", "sigmoid")


@dataclass(frozen=True)
class NoiseSchedule:
    """Arrays are indexed by step ``t`` directly; index 0 holds the clean state
    (``beta[0] = 0``, ``alpha_bar[0] = 1``)."""

    kind: str
    steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma2: np.ndarray

    @property
    def sigma(self):
        return np.sqrt(self.sigma2)


def build_schedule(kind, steps, beta_min, beta_max):
    if kind not in SCHEDULE_KINDS:
        raise ConfigError(f"unknown beta schedule {kind!r}; expected one of {SCHEDULE_KINDS}")
    if steps < 1:
        raise ConfigError(f"diffusion steps must be >= 1, got {steps}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ConfigError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    if steps == 1:
        betas = np.array([beta_min])
    elif kind == "linear":
        betas = np.linspace(beta_min, beta_max, steps)
    elif kind == "quadratic":
        betas = np.linspace(np.sqrt(beta_min), np.sqrt(beta_max), steps) ** 2
    else:
        s = 1.0 / (1.0 + np.exp(-np.linspace(-6.0, 6.0, steps)))
        betas = (s - s[0]) / (s[-1] - s[0]) * (beta_max - beta_min) + beta_min
    betas[0], betas[-1] = beta_min, (beta_max if steps > 1 else beta_min)
    beta = np.concatenate([[0.0], betas])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma2 = np.zeros(steps + 1)
    sigma2[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    return NoiseSchedule(kind, steps, beta, alpha, alpha_bar, sigma2)


def _check_step(schedule, t):
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.steps):
        raise ContractError(f"diffusion step {t} outside 1..{schedule.steps}")


def q_sample(schedule, e0, t, eps):
    """Closed-form forward noising to step ``t`` (scalar or one step per row)."""
    _check_step(schedule, t)
    ab = schedule.alpha_bar[np.asarray(t)]
    e0 = nd.as_tensor(e0)
    eps = np.asarray(eps, dtype=np.float64)
    if np.ndim(ab) == 0:
        return e0 * float(np.sqrt(ab)) + nd.Tensor(np.sqrt(1.0 - ab) * eps)
    ab = ab.reshape(-1, 1)
    signal = nd.mul(e0, nd.Tensor(np.broadcast_to(np.sqrt(ab), e0.shape).copy()))
    return signal + nd.Tensor(np.sqrt(1.0 - ab) * eps)


def q_step(schedule, e_prev, t, eps):
    """One Markov forward step from ``t-1`` to ``t`` (plain arrays)."""
    _check_step(schedule, t)
    return np.sqrt(1.0 - schedule.beta[t]) * e_prev + np.sqrt(schedule.beta[t]) * eps


def time_encoding(t, dim):
    """Sinusoidal code, interleaved as ``[sin, cos, sin, cos, ...]``.

    ``t`` may be a scalar (returns ``(dim,)``) or an array (returns ``(n, dim)``).
    """
    if dim % 2:
        raise ConfigError(f"time encoding needs an even dimension, got {dim}")
    t_arr = np.asarray(t, dtype=np.float64)
    freq = 1.0 / 10000.0 ** (np.arange(0, dim, 2) / dim)
    ang = np.multiply.outer(t_arr, freq)
    out = np.empty(ang.shape[:-1] + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def _glorot(rng, fan_in, fan_out):
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))


class DenoiserNet:
    """Time-conditioned transformer predicting the clean embedding.

    FiLM modulation from a two-layer time MLP, then ``num_layers`` blocks of
    (multi-head self-attention + residual + LayerNorm, FFN + residual +
    LayerNorm), then a linear output head.  Rows of the input batch are the
    tokens of one sequence.  ``row_independent`` replaces the attention
    pattern with the identity so each row only sees itself.
    """

    def __init__(self, dim, heads=4, num_layers=2, ffn_mult=4, row_independent=False, rng=None,
                 out_scale=0.1):
        if dim % heads:
            raise ConfigError(f"embedding dim {dim} is not divisible by {heads} heads")
        if dim % 2:
            raise ConfigError(f"embedding dim {dim} must be even for the time encoding")
        rng = np.random.default_rng(0) if rng is None else rng
        self.dim, self.heads, self.num_layers = dim, heads, num_layers
        self.row_independent = row_independent
        hidden = ffn_mult * dim
        p = {
            "time.w1": _glorot(rng, dim, dim),
            "time.b1": np.zeros(dim),
            "time.w2": np.zeros((dim, 2 * dim)),
            "time.b2": np.zeros(2 * dim),
        }
        for k in range(num_layers):
            pre = f"block{k}."
            for name in ("wq", "wk", "wv", "wo"):
                p[pre + name] = _glorot(rng, dim, dim)
            p[pre + "bo"] = np.zeros(dim)
            p[pre + "ln1.g"] = np.ones(dim)
            p[pre + "ln1.b"] = np.zeros(dim)
            p[pre + "ffn.w1"] = _glorot(rng, dim, hidden)
            p[pre + "ffn.b1"] = np.zeros(hidden)
            p[pre + "ffn.w2"] = _glorot(rng, hidden, dim)
            p[pre + "ffn.b2"] = np.zeros(dim)
            p[pre + "ln2.g"] = np.ones(dim)
            p[pre + "ln2.b"] = np.zeros(dim)
        p["out.w"] = _glorot(rng, dim, dim) * out_scale
        p["out.b"] = np.zeros(dim)
        self.params = p

    def weights(self, tape=None):
        """Parameter tensors: watched on ``tape`` or frozen constants."""
        if tape is None:
            return {k: nd.Tensor(v) for k, v in self.params.items()}
        return nd.watch_all(tape, self.params)

    def modulation(self, t, rows, w):
        """``(gamma, eta)`` for step(s) ``t`` broadcast to ``rows`` rows."""
        code = time_encoding(t, self.dim)
        if code.ndim == 1:
            code = np.repeat(code[None, :], rows, axis=0)
        hidden = nd.silu(nd.linear(nd.Tensor(code), w["time.w1"], w["time.b1"]))
        film = nd.linear(hidden, w["time.w2"], w["time.b2"])
        return nd.slice_cols(film, 0, self.dim), nd.slice_cols(film, self.dim, 2 * self.dim)

    def attention(self, h, w, pre):
        v = nd.linear(h, w[pre + "wv"])
        if self.row_independent:
            mixed = v
        else:
            q = nd.linear(h, w[pre + "wq"])
            k = nd.linear(h, w[pre + "wk"])
            mixed = nd.multi_head_attention(q, k, v, self.heads)
        return nd.linear(mixed, w[pre + "wo"], w[pre + "bo"])

    def forward(self, e_t, t, weights=None, film=None):
        w = self.weights() if weights is None else weights
        e_t = nd.as_tensor(e_t)
        if film is None:
            gamma, eta = self.modulation(t, e_t.shape[0], w)
        else:
            gamma, eta = (nd.as_tensor(f) for f in film)
        h = nd.film(e_t, gamma, eta)
        for k in range(self.num_layers):
            pre = f"block{k}."
            h = nd.layer_norm(h + self.attention(h, w, pre), w[pre + "ln1.g"], w[pre + "ln1.b"])
            inner = nd.silu(nd.linear(h, w[pre + "ffn.w1"], w[pre + "ffn.b1"]))
            h = nd.layer_norm(h + nd.linear(inner, w[pre + "ffn.w2"], w[pre + "ffn.b2"]),
                              w[pre + "ln2.g"], w[pre + "ln2.b"])
        return nd.linear(h, w["out.w"], w["out.b"])

    __call__ = forward

    def bind(self, weights=None):
        """A ``denoise(e_t, t)`` callable with fixed weights (frozen by default)."""
        w = self.weights() if weights is None else weights
        return lambda e_t, t: self.forward(e_t, t, w)


def denoise_forward(net, e_t, t, weights=None):
    return net.forward(e_t, t, weights)


def diffusion_loss(denoise, e0, schedule, rng):
    """Mean over rows of ``||e0 - denoise(e_t, t)||^2`` with per-row ``t`` and noise.

    ``e0`` is treated as a constant.
    """
    e0 = np.asarray(e0.data if isinstance(e0, nd.Tensor) else e0, dtype=np.float64)
    if e0.shape[0] == 0:
        raise ContractError("diffusion_loss needs a non-empty batch")
    t = rng.integers(1, schedule.steps + 1, size=e0.shape[0])
    eps = rng.standard_normal(e0.shape)
    e_t = q_sample(schedule, e0, t, eps)
    err = nd.Tensor(e0) - denoise(e_t, t)
    return nd.sum(nd.mul(err, err)) * (1.0 / e0.shape[0])


def posterior_mean_eps_form(schedule, e_t, e0_hat, t):
    """Ancestral-step mean after converting the clean prediction to a noise estimate."""
    ab, a, b = schedule.alpha_bar[t], schedule.alpha[t], schedule.beta[t]
    eps_hat = (e_t - np.sqrt(ab) * e0_hat) / np.sqrt(1.0 - ab)
    return (e_t - b / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)


def posterior_mean_x0_form(schedule, e_t, e0_hat, t):
    ab, ab_prev = schedule.alpha_bar[t], schedule.alpha_bar[t - 1]
    a, b = schedule.alpha[t], schedule.beta[t]
    return (np.sqrt(ab_prev) * b / (1.0 - ab)) * e0_hat + (np.sqrt(a) * (1.0 - ab_prev) / (1.0 - ab)) * e_t


def reverse_sample(denoise, e0, schedule, t_start, rng, stochastic=True):
    """Noise ``e0`` to ``t_start`` then run the reverse chain down to step 0.

    Differentiable w.r.t. ``e0`` when it is tracked.  ``stochastic=False``
    zeroes both the initial noise and the per-step ``z`` draws.
    """
    _check_step(schedule, t_start)
    e0 = nd.as_tensor(e0)
    shape = e0.shape
    eps = rng.standard_normal(shape) if stochastic else np.zeros(shape)
    e_t = q_sample(schedule, e0, t_start, eps)
    for t in range(t_start, 0, -1):
        ab, a, b = schedule.alpha_bar[t], schedule.alpha[t], schedule.beta[t]
        e0_hat = denoise(e_t, t)
        eps_hat = nd.axpby(e_t, 1.0 / np.sqrt(1.0 - ab), e0_hat, -np.sqrt(ab) / np.sqrt(1.0 - ab))
        mean = nd.axpby(e_t, 1.0 / np.sqrt(a), eps_hat, -b / np.sqrt(1.0 - ab) / np.sqrt(a))
        sigma = float(np.sqrt(schedule.sigma2[t]))
        if stochastic and sigma > 0.0:
            e_t = mean + nd.Tensor(sigma * rng.standard_normal(shape))
        else:
            e_t = mean
    return e_t


# ---------------------------------------------------------------- VAE baseline


class VaeAugmenter:
    """MLP encoder to (mean, log-variance), reparameterized latent, MLP decoder."""

    def __init__(self, dim, latent_dim=None, hidden=None, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        latent_dim = dim if latent_dim is None else latent_dim
        hidden = 2 * dim if hidden is None else hidden
        self.dim, self.latent_dim = dim, latent_dim
        self.params = {
            "enc.w1": _glorot(rng, dim, hidden),
            "enc.b1": np.zeros(hidden),
            "enc.wmu": _glorot(rng, hidden, latent_dim),
            "enc.bmu": np.zeros(latent_dim),
            "enc.wlv": np.zeros((hidden, latent_dim)),
            "enc.blv": np.full(latent_dim, -2.0),
            "dec.w1": _glorot(rng, latent_dim, hidden),
            "dec.b1": np.zeros(hidden),
            "dec.w2": _glorot(rng, hidden, dim),
            "dec.b2": np.zeros(dim),
        }

    def weights(self, tape=None):
        if tape is None:
            return {k: nd.Tensor(v) for k, v in self.params.items()}
        return nd.watch_all(tape, self.params)

    def encode(self, x, w):
        h = nd.silu(nd.as_tensor(x) @ w["enc.w1"] + w["enc.b1"])
        return h @ w["enc.wmu"] + w["enc.bmu"], h @ w["enc.wlv"] + w["enc.blv"]

    def decode(self, z, w):
        return nd.silu(z @ w["dec.w1"] + w["dec.b1"]) @ w["dec.w2"] + w["dec.b2"]

    def forward(self, x, rng, weights=None, sample=True):
        """Returns ``(reconstruction, mean, log_variance)``."""
        w = self.weights() if weights is None else weights
        mu, logvar = self.encode(x, w)
        if sample:
            eps = rng.standard_normal(mu.shape)
            z = mu + nd.mul(nd.exp(logvar * 0.5), nd.Tensor(eps))
        else:
            z = mu
        return self.decode(z, w), mu, logvar


def gaussian_kl(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over dims, averaged over rows."""
    mu, logvar = nd.as_tensor(mu), nd.as_tensor(logvar)
    terms = nd.mul(mu, mu) + nd.exp(logvar) - logvar - 1.0
    return nd.sum(terms) * (0.5 / mu.shape[0])


def vae_loss(vae, x, rng, weights=None, kl_weight=1.0):
    x = np.asarray(x.data if isinstance(x, nd.Tensor) else x, dtype=np.float64)
    recon, mu, logvar = vae.forward(x, rng, weights)
    err = nd.Tensor(x) - recon
    rec = nd.sum(nd.mul(err, err)) * (1.0 / x.shape[0])
    return rec + gaussian_kl(mu, logvar) * kl_weight


def vae_augment(vae, e0, rng, weights=None, sample=True):
    recon, _, _ = vae.forward(e0, rng, weights, sample=sample)
    return recon


def uniform_noise_view(e, rng, eps=0.1):
    """Random-direction perturbation of fixed magnitude per row, sign-aligned
    with the embedding (uniform-noise view generator)."""
    e = nd.as_tensor(e)
    noise = rng.random(e.shape)
    norms = np.linalg.norm(noise, axis=1, keepdims=True)
    noise = noise / np.where(norms == 0.0, 1.0, norms)
    return e + nd.Tensor(np.sign(e.data) * noise * eps)
