"""Cached execution engine for the toy DiT.

Cache semantics follow the additive block decomposition: a cached block
reuses its stored ATTN and FFN outputs while the residual stream is
recomputed from the current hidden state,

    out = h_t + attn_cached + ffn_cached            (compute-residual, default)

with the ablation variant that replays the entire stored block output,

    out = h_that + attn_cached + ffn_cached         (reuse-residual)

where t-hat is the step the entry was cached at. The salient-token variant
recomputes attention rows for the per-block salient set only and merges them
into the cached ATTN output through a binary mask; the FFN term stays cached
and the residual is always fresh.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from datetime import datetime, timezone

import numpy as np

from .contribution import contribution_scores, rank_ascending
from .cost import (
    MODE_CACHED,
    MODE_CACHED_PARTIAL,
    MODE_FULL,
    CostReport,
    build_cost_report,
)
from .model import (
    BlockOutputs,
    Block,
    Matrix,
    Model,
    attention_rows,
    block_forward,
    denoise_step_mean,
    initial_hidden,
    predict_noise,
    state_checksum,
)
from .numerics import SeededRng, derive_seed
from .policy import (
    BOUNDARY,
    INTERVAL_POLICIES,
    WARMUP,
    CorgiConfig,
    PolicyKind,
    StepRole,
    baseline_directives,
    cached_count,
    plan_steps,
    select_cached,
)
from .saliency import SalientTokenSet, build_mask, identify_salient

RESIDUAL_COMPUTE = "compute"
RESIDUAL_REUSE = "reuse"


class CacheMiss(RuntimeError):
    pass


@dataclass
class CacheEntry:
    """Outputs of one block frozen at step `step` (t-hat)."""

    attn_out: Matrix
    ffn_out: Matrix
    block_out: Matrix
    joint_attention: Matrix
    cross_map: Matrix
    step: int


class BlockCache:
    """Per-block cache entries; refreshed whenever a block is computed."""

    def __init__(self, num_blocks: int):
        self.entries: list[CacheEntry | None] = [None] * num_blocks

    def refresh(self, block_index: int, outs: BlockOutputs, step: int) -> None:
        self.entries[block_index] = CacheEntry(
            attn_out=outs.attn_out,
            ffn_out=outs.ffn_out,
            block_out=outs.block_out,
            joint_attention=outs.joint_attention,
            cross_map=outs.cross_map,
            step=step,
        )


def execute_block_cached(
    h: Matrix, block: Block, entry: CacheEntry | None, strategy: str
) -> BlockOutputs:
    """Run one cached block; attention maps are echoed stale from the entry."""
    if entry is None:
        raise CacheMiss("cache miss on cached directive")
    if h.shape != entry.block_out.shape:
        raise ValueError("hidden state shape does not match cache entry")
    if strategy == RESIDUAL_REUSE:
        out = entry.block_out
    elif strategy == RESIDUAL_COMPUTE:
        out = (h + entry.attn_out) + entry.ffn_out
    else:
        raise ValueError(f"unknown residual strategy {strategy!r}")
    return BlockOutputs(
        attn_out=entry.attn_out,
        ffn_out=entry.ffn_out,
        block_out=out,
        joint_attention=entry.joint_attention,
        cross_map=entry.cross_map,
    )


def salient_rows(s: SalientTokenSet, text_tokens: int) -> np.ndarray:
    """Joint-sequence row indices of a salient set, ascending."""
    rows = list(s.text_indices) + [text_tokens + v for v in s.image_indices]
    return np.array(sorted(rows), dtype=np.intp)


def partial_attention(block: Block, h: Matrix, s: SalientTokenSet, text_tokens: int) -> Matrix:
    """ATTN output rows for the salient tokens only.

    Keys/values come from the full current hidden state; only queries, scores
    and the output projection are restricted, so each returned row is
    bit-equal to the same row of a full attention evaluation.
    """
    rows = salient_rows(s, text_tokens)
    if rows.size == 0:
        return np.zeros((0, h.shape[1]))
    out, _ = attention_rows(block, h, rows)
    return out


def masked_merge(new_rows: Matrix, cached: Matrix, mask: np.ndarray) -> Matrix:
    """Row-wise merge: mask 1 takes the fresh row, mask 0 keeps the cache.

    new_rows may carry all rows or exactly the popcount(mask) masked ones (in
    ascending row order).
    """
    cached = np.asarray(cached, dtype=np.float64)
    mask = np.asarray(mask)
    if mask.ndim != 1 or mask.shape[0] != cached.shape[0]:
        raise ValueError("mask length does not match cached rows")
    rows = np.flatnonzero(mask)
    new_rows = np.asarray(new_rows, dtype=np.float64)
    if new_rows.shape[0] == cached.shape[0]:
        new_rows = new_rows[rows]
    elif new_rows.shape[0] != rows.size:
        raise ValueError(
            f"expected {rows.size} or {cached.shape[0]} update rows, got {new_rows.shape[0]}"
        )
    out = cached.copy()
    out[rows] = new_rows
    return out


def execute_block_corgi_plus(
    h: Matrix,
    block: Block,
    entry: CacheEntry | None,
    s: SalientTokenSet,
    mask: np.ndarray,
    text_tokens: int,
    writeback: bool = False,
) -> BlockOutputs:
    """Cached block with salient-row attention refresh.

    attn term = masked merge of fresh salient rows into the cached ATTN
    output; FFN stays cached; the residual stream is always recomputed.
    """
    if entry is None:
        raise CacheMiss("cache miss on cached directive")
    fresh = partial_attention(block, h, s, text_tokens)
    merged = masked_merge(fresh, entry.attn_out, mask)
    out = (h + merged) + entry.ffn_out
    if writeback:
        entry.attn_out = merged
    return BlockOutputs(
        attn_out=merged,
        ffn_out=entry.ffn_out,
        block_out=out,
        joint_attention=entry.joint_attention,
        cross_map=entry.cross_map,
    )


@dataclass
class StepRecord:
    """One step of a policy run: directive, per-block modes, outputs."""

    step: int
    role: str
    cached: tuple[int, ...]
    modes: tuple[str, ...]
    checksum: str
    noise_pred: Matrix

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "role": self.role,
            "cached": list(self.cached),
            "modes": list(self.modes),
            "checksum": self.checksum,
            "noise_pred": self.noise_pred.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        return cls(
            step=d["step"],
            role=d["role"],
            cached=tuple(d["cached"]),
            modes=tuple(d["modes"]),
            checksum=d["checksum"],
            noise_pred=np.array(d["noise_pred"], dtype=np.float64),
        )


@dataclass
class Trace:
    """Serializable record of one policy run."""

    config: dict
    steps: list[StepRecord]
    contributions: list[dict]
    saliency: list[dict] | None
    final_output: Matrix
    cost: CostReport
    equivalent_to_reference: bool
    schema: str = "corgi-trace/1"
    created_at: str = ""

    @property
    def noise_preds(self) -> list[Matrix]:
        return [r.noise_pred for r in self.steps]

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "created_at": self.created_at,
            "config": self.config,
            "steps": [r.to_dict() for r in self.steps],
            "contributions": self.contributions,
            "saliency": self.saliency,
            "final_output": self.final_output.tolist(),
            "cost": self.cost.to_dict(),
            "equivalent_to_reference": self.equivalent_to_reference,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trace":
        return cls(
            config=d["config"],
            steps=[StepRecord.from_dict(r) for r in d["steps"]],
            contributions=d["contributions"],
            saliency=d["saliency"],
            final_output=np.array(d["final_output"], dtype=np.float64),
            cost=CostReport.from_dict(d["cost"]),
            equivalent_to_reference=d["equivalent_to_reference"],
            schema=d["schema"],
            created_at=d["created_at"],
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, Trace) and self.to_dict() == other.to_dict()

    def to_json(self) -> str:
        """Serialize with full float round-trip precision."""
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Trace":
        return cls.from_dict(json.loads(text))


def config_echo(model: Model, rcfg: CorgiConfig) -> dict:
    mc = model.config
    return {
        "model": {
            "num_blocks": mc.num_blocks,
            "hidden_dim": mc.hidden_dim,
            "ffn_dim": mc.ffn_dim,
            "num_heads": mc.num_heads,
            "text_tokens": mc.text_tokens,
            "image_tokens": mc.image_tokens,
            "total_steps": mc.total_steps,
        },
        "beta_start": float(model.schedule.betas[0]),
        "beta_end": float(model.schedule.betas[-1]),
        "model_seed": model.seed,
        "policy": rcfg.policy.value,
        "warmup": rcfg.warmup,
        "interval": rcfg.interval,
        "gamma": rcfg.gamma,
        "delta": rcfg.delta,
        "top_c": rcfg.top_c,
        "seed": rcfg.seed,
        "residual": rcfg.residual,
        "refresh_saliency": rcfg.refresh_saliency,
        "parity": rcfg.parity,
        "salient_writeback": rcfg.salient_writeback,
    }


def run_with_policy(
    model: Model,
    x_init: Matrix,
    text_embed: Matrix | None,
    config: CorgiConfig,
) -> Trace:
    """Execute T denoising steps under a caching policy and emit a Trace.

    Warm-up and boundary steps compute every block and refresh every cache
    entry. At each boundary, contributions compare the step's block outputs
    with the previous boundary's (bootstrap: the last warm-up step's outputs;
    with no warm-up at all, the first boundary compares against itself and the
    ranking falls back to index order). Intra steps cache the
    min(gamma + (j-1)*delta, B) lowest-contribution blocks. Baselines cache a
    fixed-rule set at every post-warm-up step; a directive that lands on a
    never-filled cache (only possible at step 0 with warmup=0) falls back to
    full computation.
    """
    mc = model.config
    rcfg = config.resolved(mc.total_steps, mc.num_blocks, mc.text_tokens)
    if text_embed is None:
        text_embed = model.text_embed
    x = np.asarray(x_init, dtype=np.float64)
    if x.shape != (mc.image_tokens, mc.hidden_dim):
        raise ValueError(
            f"x_init shape {x.shape} != ({mc.image_tokens}, {mc.hidden_dim})"
        )

    policy = rcfg.policy
    num_blocks, total_steps = mc.num_blocks, mc.total_steps
    interval_mode = policy in INTERVAL_POLICIES
    if interval_mode:
        roles = plan_steps(total_steps, rcfg.warmup, rcfg.interval)
    else:
        roles = [
            StepRole(WARMUP) if s < rcfg.warmup and policy != PolicyKind.NONE else StepRole("step")
            for s in range(total_steps)
        ]

    cache = BlockCache(num_blocks)
    ranking = list(range(num_blocks))
    boundary_snapshot: list[Matrix] | None = None
    prev1: list[Matrix] | None = None  # effective block outputs at s-1 (naive)
    prev2: list[Matrix] | None = None
    salient_sets: list[SalientTokenSet] | None = None
    salient_masks: list[np.ndarray] | None = None
    random_rng = SeededRng(derive_seed(rcfg.seed, "policy-random"))

    records: list[StepRecord] = []
    contributions: list[dict] = []

    for s in range(total_steps):
        role = roles[s]
        if policy == PolicyKind.NONE:
            directive: set[int] = set()
        elif interval_mode:
            if role.kind in (WARMUP, BOUNDARY):
                directive = set()
            else:
                directive = select_cached(
                    ranking, cached_count(role.offset, rcfg.gamma, rcfg.delta, num_blocks)
                )
        elif policy == PolicyKind.PER_STEP_NAIVE:
            if prev1 is not None and prev2 is not None:
                step_ranking = rank_ascending(contribution_scores(prev2, prev1))
            else:
                step_ranking = list(range(num_blocks))
            directive = baseline_directives(
                policy, s, rcfg.warmup, num_blocks, ranking=step_ranking
            )
        else:
            directive = baseline_directives(
                policy, s, rcfg.warmup, num_blocks, parity=rcfg.parity, rng=random_rng
            )

        h = initial_hidden(model, x, s, text_embed)
        modes: list[str] = []
        applied: set[int] = set()
        step_outputs: list[BlockOutputs] = []
        for b, block in enumerate(model.blocks):
            entry = cache.entries[b]
            if b in directive and entry is not None:
                if policy == PolicyKind.CORGI_PLUS:
                    outs = execute_block_corgi_plus(
                        h,
                        block,
                        entry,
                        salient_sets[b],
                        salient_masks[b],
                        mc.text_tokens,
                        writeback=rcfg.salient_writeback,
                    )
                    mode = MODE_CACHED_PARTIAL
                else:
                    outs = execute_block_cached(h, block, entry, rcfg.residual)
                    mode = MODE_CACHED
                applied.add(b)
            else:
                outs = block_forward(block, h, mc.text_tokens)
                cache.refresh(b, outs, s)
                mode = MODE_FULL
            modes.append(mode)
            step_outputs.append(outs)
            h = outs.block_out

        eps = predict_noise(model, h)
        if not np.isfinite(eps).all():
            raise FloatingPointError(f"non-finite noise prediction at step {s}")
        x = denoise_step_mean(x, eps, total_steps - s, model.schedule)
        records.append(
            StepRecord(
                step=s,
                role=role.label(),
                cached=tuple(sorted(applied)),
                modes=tuple(modes),
                checksum=state_checksum(h),
                noise_pred=eps,
            )
        )

        block_outs = [o.block_out for o in step_outputs]
        if interval_mode:
            if role.kind == BOUNDARY:
                reference = boundary_snapshot if boundary_snapshot is not None else block_outs
                scores = contribution_scores(reference, block_outs)
                ranking = rank_ascending(scores)
                contributions.append(
                    {"step": s, "scores": [float(v) for v in scores]}
                )
                boundary_snapshot = block_outs
                if policy == PolicyKind.CORGI_PLUS and (
                    salient_sets is None or rcfg.refresh_saliency
                ):
                    salient_sets = [
                        replace(identify_salient(outs.cross_map, rcfg.top_c), block=b)
                        for b, outs in enumerate(step_outputs)
                    ]
                    salient_masks = [
                        build_mask(ss, mc.text_tokens, mc.image_tokens)
                        for ss in salient_sets
                    ]
            elif rcfg.warmup > 0 and s == rcfg.warmup - 1:
                boundary_snapshot = block_outs  # bootstrap reference
        if policy == PolicyKind.PER_STEP_NAIVE:
            prev2, prev1 = prev1, block_outs

    salient_sizes = None
    saliency_echo = None
    if salient_sets is not None:
        salient_sizes = {
            b: len(ss.text_indices) + len(ss.image_indices)
            for b, ss in enumerate(salient_sets)
        }
        saliency_echo = [
            {
                "block": b,
                "text": list(ss.text_indices),
                "image": list(ss.image_indices),
            }
            for b, ss in enumerate(salient_sets)
        ]

    cost = build_cost_report(
        [list(r.modes) for r in records],
        mc.seq_len,
        mc.hidden_dim,
        mc.ffn_dim,
        mc.num_heads,
        salient_sizes,
    )
    return Trace(
        config=config_echo(model, rcfg),
        steps=records,
        contributions=contributions,
        saliency=saliency_echo,
        final_output=x,
        cost=cost,
        equivalent_to_reference=all(len(r.cached) == 0 for r in records),
        created_at=datetime.now(timezone.utc).isoformat(),
    )
