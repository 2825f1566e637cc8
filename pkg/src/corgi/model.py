"""Toy multi-modal diffusion transformer and its deterministic denoising loop.

The model is a stack of transformer blocks running joint self-attention over a
concatenated token sequence (text tokens at rows [0, text_tokens), image
tokens at rows [text_tokens, text_tokens + image_tokens)) with the additive
decomposition

    block_out = h + attn_out + ffn_out,

pre-normalization living *inside* the ATTN/FFN terms so the three addends are
exactly the quantities the caching engine stores and reuses. A full-compute
run (:func:`run_reference`) is the oracle every cached run is compared to.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    Matrix,
    SeededRng,
    derive_seed,
    ensure_matrix,
    matmul,
    matmul_nt,
    softmax_rows,
)

_NORM_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions of the toy DiT and its denoising run."""

    num_blocks: int = 8
    hidden_dim: int = 32
    ffn_dim: int = 64
    num_heads: int = 4
    text_tokens: int = 4
    image_tokens: int = 16
    total_steps: int = 12

    def validate(self) -> None:
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.text_tokens < 1:
            raise ValueError("text_tokens must be >= 1")
        if self.image_tokens < 1:
            raise ValueError("image_tokens must be >= 1")
        if self.hidden_dim < 1 or self.ffn_dim < 1 or self.num_heads < 1:
            raise ValueError("hidden_dim, ffn_dim and num_heads must be >= 1")
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError("hidden_dim must be divisible by num_heads")

    @property
    def seq_len(self) -> int:
        return self.text_tokens + self.image_tokens


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise variances beta_t with alpha_t = 1 - beta_t and the
    running product alpha_bar_t (index t-1 holds step t, 1-based)."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def __len__(self) -> int:
        return len(self.betas)


def build_schedule(total_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule over total_steps with exact alpha products."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, total_steps, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


@dataclass
class Block:
    """Weights of one transformer block; prenorm parameters included."""

    wq: Matrix
    wk: Matrix
    wv: Matrix
    wo: Matrix
    w1: Matrix
    w2: Matrix
    attn_gain: np.ndarray
    attn_bias: np.ndarray
    ffn_gain: np.ndarray
    ffn_bias: np.ndarray
    num_heads: int


@dataclass
class BlockOutputs:
    """Everything one block computation produces.

    block_out = input + attn_out + ffn_out holds exactly for full forwards;
    joint_attention is the head-averaged (L x L) map, cross_map its
    image-query x text-key submatrix.
    """

    attn_out: Matrix
    ffn_out: Matrix
    block_out: Matrix
    joint_attention: Matrix
    cross_map: Matrix


@dataclass
class Model:
    config: ModelConfig
    seed: int
    blocks: list[Block]
    text_embed: Matrix
    step_bias: Matrix
    eps_head: Matrix
    schedule: NoiseSchedule


def build_model(
    config: ModelConfig,
    seed: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
) -> Model:
    """Build a toy DiT with all weights drawn from seeded counter streams.

    Weight matrices are standard normal scaled by 1/sqrt(hidden_dim); prenorm
    gains/biases sit at identity plus the same scale of noise. Bit-reproducible
    for a fixed (config, seed).
    """
    config.validate()
    d, d_ff, heads = config.hidden_dim, config.ffn_dim, config.num_heads
    scale = 1.0 / np.sqrt(d)

    blocks = []
    for b in range(config.num_blocks):
        rng = SeededRng(derive_seed(seed, f"block{b}"))
        blocks.append(
            Block(
                wq=rng.standard_normal(d, d) * scale,
                wk=rng.standard_normal(d, d) * scale,
                wv=rng.standard_normal(d, d) * scale,
                wo=rng.standard_normal(d, d) * scale,
                w1=rng.standard_normal(d, d_ff) * scale,
                w2=rng.standard_normal(d_ff, d) * scale,
                attn_gain=1.0 + rng.standard_normal(1, d)[0] * scale,
                attn_bias=rng.standard_normal(1, d)[0] * scale,
                ffn_gain=1.0 + rng.standard_normal(1, d)[0] * scale,
                ffn_bias=rng.standard_normal(1, d)[0] * scale,
                num_heads=heads,
            )
        )

    text_rng = SeededRng(derive_seed(seed, "text"))
    bias_rng = SeededRng(derive_seed(seed, "step-bias"))
    head_rng = SeededRng(derive_seed(seed, "eps-head"))
    return Model(
        config=config,
        seed=seed,
        blocks=blocks,
        text_embed=text_rng.standard_normal(config.text_tokens, d),
        step_bias=bias_rng.standard_normal(config.total_steps, d),
        eps_head=head_rng.standard_normal(d, d) * scale,
        schedule=build_schedule(config.total_steps, beta_start, beta_end),
    )


def _layernorm(x: Matrix, gain: np.ndarray, bias: np.ndarray) -> Matrix:
    mu = np.mean(x, axis=1, keepdims=True)
    var = np.var(x, axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + _NORM_EPS) * gain + bias


def _gelu(x: Matrix) -> Matrix:
    # tanh approximation; exact choice is irrelevant, determinism is not
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def attention_rows(block: Block, h: Matrix, rows: np.ndarray | None = None) -> tuple[Matrix, Matrix]:
    """ATTN output for the given query rows (all rows when rows is None).

    Keys and values are always projected from the full current hidden state;
    restricting `rows` restricts only the query side, so the returned rows are
    bit-equal to the corresponding rows of the full computation (shape-stable
    matmuls, see numerics).

    Returns (attn_rows, joint_attention_rows) with joint_attention averaged
    over heads.
    """
    x = _layernorm(h, block.attn_gain, block.attn_bias)
    xq = x if rows is None else x[rows]
    k = matmul(x, block.wk)
    v = matmul(x, block.wv)
    q = matmul(xq, block.wq)

    seq, d = h.shape
    heads = block.num_heads
    dh = d // heads
    inv_sqrt_dh = 1.0 / np.sqrt(dh)

    head_outs = np.empty((q.shape[0], d))
    joint = np.zeros((q.shape[0], seq))
    for i in range(heads):
        sl = slice(i * dh, (i + 1) * dh)
        logits = matmul_nt(q[:, sl], k[:, sl]) * inv_sqrt_dh
        probs = softmax_rows(logits)
        head_outs[:, sl] = matmul(probs, v[:, sl])
        joint += probs
    joint /= heads
    return matmul(head_outs, block.wo), joint


def ffn_forward(block: Block, z: Matrix) -> Matrix:
    """FFN term on top of the post-attention state z = h + attn_out."""
    y = _layernorm(z, block.ffn_gain, block.ffn_bias)
    return matmul(_gelu(matmul(y, block.w1)), block.w2)


def extract_cross_attention(joint_attention: Matrix, text_tokens: int, image_tokens: int) -> Matrix:
    """Image-query x text-key submatrix of the head-averaged joint map."""
    a = ensure_matrix(joint_attention, "joint_attention")
    seq = text_tokens + image_tokens
    if a.shape != (seq, seq):
        raise ValueError(
            f"joint_attention shape {a.shape} does not match {seq} tokens"
        )
    return a[text_tokens:, :text_tokens]


def block_forward(block: Block, h: Matrix, text_tokens: int) -> BlockOutputs:
    """Full computation of one block on hidden state h ((L_text+L_img) x d)."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != block.wq.shape[0]:
        raise ValueError(f"hidden state shape {h.shape} does not match block")
    attn_out, joint = attention_rows(block, h)
    ffn_out = ffn_forward(block, h + attn_out)
    block_out = (h + attn_out) + ffn_out
    cross = extract_cross_attention(joint, text_tokens, h.shape[0] - text_tokens)
    return BlockOutputs(
        attn_out=attn_out,
        ffn_out=ffn_out,
        block_out=block_out,
        joint_attention=joint,
        cross_map=cross,
    )


def denoise_step_mean(x_t: Matrix, eps: Matrix, t: int, schedule: NoiseSchedule) -> Matrix:
    """Posterior mean of the denoising step (variance term zeroed):

        x_{t-1} = (x_t - (1 - alpha_t)/sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_t)
    """
    if not 1 <= t <= len(schedule):
        raise ValueError(f"step {t} out of range 1..{len(schedule)}")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x_t.shape != eps.shape:
        raise ValueError("x_t and eps shapes differ")
    alpha = schedule.alphas[t - 1]
    alpha_bar = schedule.alpha_bars[t - 1]
    return (x_t - (1.0 - alpha) / np.sqrt(1.0 - alpha_bar) * eps) / np.sqrt(alpha)


def initial_hidden(model: Model, x: Matrix, step: int, text_embed: Matrix | None = None) -> Matrix:
    """Joint hidden state for one step: [text; latent] plus the step bias."""
    if text_embed is None:
        text_embed = model.text_embed
    return np.concatenate([text_embed, x], axis=0) + model.step_bias[step]


def predict_noise(model: Model, h_final: Matrix) -> Matrix:
    """Noise prediction: image-token slice projected by the fixed head."""
    return matmul(h_final[model.config.text_tokens :], model.eps_head)


def state_checksum(m: Matrix) -> str:
    """sha256 hex digest of the row-major float64 bytes."""
    return hashlib.sha256(np.ascontiguousarray(m, dtype=np.float64).tobytes()).hexdigest()


@dataclass
class ReferenceTrajectory:
    """Full-compute run record: the oracle cached runs are measured against."""

    config: ModelConfig
    noise_preds: list[Matrix] = field(default_factory=list)
    latents: list[Matrix] = field(default_factory=list)
    block_outputs: list[list[BlockOutputs]] = field(default_factory=list)

    @property
    def final_output(self) -> Matrix:
        return self.latents[-1]


def run_reference(
    model: Model,
    x_init: Matrix,
    text_embed: Matrix | None = None,
    pruned_blocks: frozenset[int] | set[int] = frozenset(),
) -> ReferenceTrajectory:
    """Run the full denoising loop computing every block at every step.

    pruned_blocks replaces the named blocks with the identity (out = h), which
    is the block-ablation probe; the default runs the intact model.
    """
    cfg = model.config
    if text_embed is None:
        text_embed = model.text_embed
    x = np.asarray(x_init, dtype=np.float64)
    if x.shape != (cfg.image_tokens, cfg.hidden_dim):
        raise ValueError(
            f"x_init shape {x.shape} != ({cfg.image_tokens}, {cfg.hidden_dim})"
        )
    for b in pruned_blocks:
        if not 0 <= b < cfg.num_blocks:
            raise ValueError(f"pruned block {b} out of range")

    traj = ReferenceTrajectory(config=cfg)
    for step in range(cfg.total_steps):
        h = initial_hidden(model, x, step, text_embed)
        per_block = []
        for b, block in enumerate(model.blocks):
            if b in pruned_blocks:
                zero = np.zeros_like(h)
                outs = BlockOutputs(
                    attn_out=zero,
                    ffn_out=zero,
                    block_out=h,
                    joint_attention=np.full((cfg.seq_len, cfg.seq_len), 1.0 / cfg.seq_len),
                    cross_map=np.full((cfg.image_tokens, cfg.text_tokens), 1.0 / cfg.seq_len),
                )
            else:
                outs = block_forward(block, h, cfg.text_tokens)
            per_block.append(outs)
            h = outs.block_out
        eps = predict_noise(model, h)
        if not np.isfinite(eps).all():
            raise FloatingPointError(f"non-finite noise prediction at step {step}")
        x = denoise_step_mean(x, eps, cfg.total_steps - step, model.schedule)
        traj.noise_preds.append(eps)
        traj.latents.append(x)
        traj.block_outputs.append(per_block)
    return traj
