"""Cache scheduling: warm-up + interval planning and the ablation baselines.

A run of T steps splits into a warm-up prefix (full computation everywhere),
then repeating intervals of D steps. Each interval opens with a full-compute
boundary step; the j-th step after a boundary caches the
min(gamma + (j-1)*delta, B) lowest-contribution blocks, ranked at the
boundary. Baselines (per-step naive / parity / random) skip the interval
machinery and cache a fixed-size set at every post-warm-up step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from .numerics import SeededRng

WARMUP = "warmup"
BOUNDARY = "boundary"
INTRA = "intra"


class PolicyKind(str, Enum):
    NONE = "none"
    CORGI = "corgi"
    CORGI_PLUS = "corgi_plus"
    PER_STEP_NAIVE = "per_step_naive"
    PARITY = "parity"
    RANDOM = "random"


INTERVAL_POLICIES = (PolicyKind.CORGI, PolicyKind.CORGI_PLUS)
BASELINE_POLICIES = (
    PolicyKind.PER_STEP_NAIVE,
    PolicyKind.PARITY,
    PolicyKind.RANDOM,
)


@dataclass(frozen=True)
class StepRole:
    """Role of one step: warmup, boundary, or intra with offset j >= 1."""

    kind: str
    offset: int = 0

    def label(self) -> str:
        return f"{INTRA}:{self.offset}" if self.kind == INTRA else self.kind


@dataclass(frozen=True)
class CorgiConfig:
    """Scheduling knobs; None fields resolve against the model at run time.

    warmup defaults to round(0.2 * total_steps), gamma to num_blocks // 2 and
    top_c to max(1, round(0.1 * text_tokens)).
    """

    policy: PolicyKind = PolicyKind.CORGI
    warmup: int | None = None
    interval: int = 5
    gamma: int | None = None
    delta: int = 1
    top_c: int | None = None
    seed: int = 0
    residual: str = "compute"  # "compute" | "reuse"
    refresh_saliency: bool = False
    parity: str = "even"  # "even" | "odd"
    salient_writeback: bool = False

    def resolved(self, total_steps: int, num_blocks: int, text_tokens: int) -> "CorgiConfig":
        """Fill defaults and validate against the model dimensions."""
        cfg = replace(
            self,
            policy=PolicyKind(self.policy),
            warmup=round(0.2 * total_steps) if self.warmup is None else self.warmup,
            gamma=num_blocks // 2 if self.gamma is None else self.gamma,
            top_c=max(1, round(0.1 * text_tokens)) if self.top_c is None else self.top_c,
        )
        if not 0 <= cfg.warmup <= total_steps:
            raise ValueError(f"warmup must be in 0..{total_steps}, got {cfg.warmup}")
        if cfg.interval < 1:
            raise ValueError("interval must be >= 1")
        if not 0 <= cfg.gamma <= num_blocks:
            raise ValueError(f"gamma must be in 0..{num_blocks}, got {cfg.gamma}")
        if cfg.delta < 0:
            raise ValueError("delta must be >= 0")
        if cfg.top_c < 1:
            raise ValueError("top_c must be >= 1")
        if cfg.residual not in ("compute", "reuse"):
            raise ValueError(f"residual must be 'compute' or 'reuse', got {cfg.residual!r}")
        if cfg.parity not in ("even", "odd"):
            raise ValueError(f"parity must be 'even' or 'odd', got {cfg.parity!r}")
        return cfg


def plan_steps(total_steps: int, warmup: int, interval: int) -> list[StepRole]:
    """Roles for every step; a trailing partial interval keeps the pattern."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= warmup <= total_steps:
        raise ValueError(f"warmup must be in 0..{total_steps}")
    if interval < 1:
        raise ValueError("interval must be >= 1")
    roles = [StepRole(WARMUP)] * warmup
    for step in range(warmup, total_steps):
        offset = (step - warmup) % interval
        roles.append(StepRole(BOUNDARY) if offset == 0 else StepRole(INTRA, offset))
    return roles


def cached_count(offset: int, gamma: int, delta: int, num_blocks: int) -> int:
    """Cached-block count at intra offset j: min(gamma + (j-1)*delta, B)."""
    if offset < 1:
        raise ValueError("intra offset must be >= 1")
    return min(gamma + (offset - 1) * delta, num_blocks)


def select_cached(ranking: list[int], count: int) -> set[int]:
    """First `count` blocks of the ascending-contribution ranking.

    Prefixes nest: the gamma blocks stay cached as delta additions accrue.
    """
    if count > len(ranking):
        raise ValueError(f"count {count} exceeds {len(ranking)} ranked blocks")
    return set(ranking[:count])


def baseline_directives(
    kind: PolicyKind,
    step: int,
    warmup: int,
    num_blocks: int,
    ranking: list[int] | None = None,
    parity: str = "even",
    rng: SeededRng | None = None,
) -> set[int]:
    """Cached set for one step under a baseline policy.

    per_step_naive caches the floor(B/2) lowest-contribution blocks of the
    caller-supplied per-step ranking; parity caches one index parity; random
    draws a fresh seeded floor(B/2)-subset each step. Warm-up steps never
    cache.
    """
    kind = PolicyKind(kind)
    if kind == PolicyKind.NONE or step < warmup:
        return set()
    half = num_blocks // 2
    if kind == PolicyKind.PARITY:
        rem = 0 if parity == "even" else 1
        return {b for b in range(num_blocks) if b % 2 == rem}
    if kind == PolicyKind.RANDOM:
        if rng is None:
            raise ValueError("random baseline needs a SeededRng")
        keys = rng.standard_normal(1, num_blocks)[0]
        order = sorted(range(num_blocks), key=lambda b: (keys[b], b))
        return set(order[:half])
    if kind == PolicyKind.PER_STEP_NAIVE:
        if ranking is None:
            raise ValueError("per_step_naive needs a contribution ranking")
        return set(ranking[:half])
    raise ValueError(f"{kind} is not a baseline policy")
