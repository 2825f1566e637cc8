"""Command-line front end.

Subcommands:

    run      execute one configuration and write its trace JSON
    compare  run several policies against the reference and report
             divergence plus analytic cost
    ablate   block-ablation cosine maps and the adjacent-step similarity series

Flags mirror JSON config-file keys (underscored); explicit flags override the
file, the file overrides built-in defaults. Exit codes: 0 ok, 1 runtime
failure, 2 usage error. Setting COLOR=0 disables ANSI output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .analysis import analyze_model, divergence
from .model import ModelConfig, build_model, run_reference
from .numerics import SeededRng, derive_seed
from .policy import CorgiConfig, PolicyKind
from .runtime import run_with_policy

DEFAULTS = {
    "steps": 12,
    "blocks": 8,
    "dim": 32,
    "ffn_dim": 64,
    "heads": 4,
    "text_tokens": 4,
    "image_tokens": 16,
    "policy": "corgi",
    "warmup": None,  # round(0.2 * steps)
    "interval": 5,
    "gamma": None,  # blocks // 2
    "delta": 1,
    "top_c": None,  # max(1, round(0.1 * text_tokens))
    "residual": "compute",
    "refresh_saliency": False,
    "parity": "even",
    "salient_writeback": False,
    "seed": 0,
    "policies": "none,corgi,corgi_plus",
    "out": None,
}

BETA_START, BETA_END = 1e-4, 0.02


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, help="denoising steps")
    p.add_argument("--blocks", type=int, help="transformer blocks")
    p.add_argument("--dim", type=int, help="hidden width")
    p.add_argument("--ffn-dim", type=int, help="FFN width")
    p.add_argument("--heads", type=int, help="attention heads")
    p.add_argument("--text-tokens", type=int, help="text tokens")
    p.add_argument("--image-tokens", type=int, help="image tokens")
    p.add_argument("--seed", type=int, help="seed for weights, noise and policy")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("-o", "--out", help="output path (default: stdout)")


def _add_policy_flags(p: argparse.ArgumentParser, with_policy: bool = True) -> None:
    if with_policy:
        p.add_argument("--policy", choices=[k.value for k in PolicyKind])
    p.add_argument("--warmup", type=int, help="full-compute warm-up steps")
    p.add_argument("--interval", type=int, help="caching interval length")
    p.add_argument("--gamma", type=int, help="blocks cached at the first intra step")
    p.add_argument("--delta", type=int, help="extra cached blocks per intra step")
    p.add_argument("--top-c", type=int, help="salient text tokens per block")
    p.add_argument("--residual", choices=["compute", "reuse"])
    p.add_argument(
        "--refresh-saliency",
        action=argparse.BooleanOptionalAction,
        help="recompute salient sets at every boundary",
    )
    p.add_argument("--parity", choices=["even", "odd"], help="parity-baseline choice")
    p.add_argument(
        "--salient-writeback",
        action=argparse.BooleanOptionalAction,
        help="write refreshed salient rows back into the cache",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corgi",
        description="Block-wise interval caching lab for a toy diffusion transformer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one policy run and emit its trace")
    _add_model_flags(run_p)
    _add_policy_flags(run_p)
    run_p.set_defaults(func=cmd_run)

    cmp_p = sub.add_parser("compare", help="run several policies against the reference")
    _add_model_flags(cmp_p)
    _add_policy_flags(cmp_p, with_policy=False)
    cmp_p.add_argument("--policies", help="comma-separated policy list")
    cmp_p.set_defaults(func=cmd_compare)

    abl_p = sub.add_parser("ablate", help="block ablation and adjacent-step similarity")
    _add_model_flags(abl_p)
    abl_p.set_defaults(func=cmd_ablate)

    return parser


def merge_config(parser: argparse.ArgumentParser, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as f:
                loaded = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            parser.error(f"cannot read config file: {e}")
        if not isinstance(loaded, dict):
            parser.error("config file must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def setup(cfg: dict):
    """Model, initial noise and policy config from a merged flag dict."""
    mc = ModelConfig(
        num_blocks=cfg["blocks"],
        hidden_dim=cfg["dim"],
        ffn_dim=cfg["ffn_dim"],
        num_heads=cfg["heads"],
        text_tokens=cfg["text_tokens"],
        image_tokens=cfg["image_tokens"],
        total_steps=cfg["steps"],
    )
    seed = cfg["seed"]
    model = build_model(mc, derive_seed(seed, "model"), BETA_START, BETA_END)
    noise_rng = SeededRng(derive_seed(seed, "init-noise"))
    x_init = noise_rng.standard_normal(mc.image_tokens, mc.hidden_dim)
    return model, x_init


def policy_config(cfg: dict, policy: str | None = None) -> CorgiConfig:
    return CorgiConfig(
        policy=PolicyKind(policy if policy is not None else cfg["policy"]),
        warmup=cfg["warmup"],
        interval=cfg["interval"],
        gamma=cfg["gamma"],
        delta=cfg["delta"],
        top_c=cfg["top_c"],
        seed=cfg["seed"],
        residual=cfg["residual"],
        refresh_saliency=bool(cfg["refresh_saliency"]),
        parity=cfg["parity"],
        salient_writeback=bool(cfg["salient_writeback"]),
    )


def _emit(cfg: dict, text: str) -> None:
    if cfg["out"]:
        with open(cfg["out"], "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _color(s: str, code: str) -> str:
    if os.environ.get("COLOR") == "0" or not sys.stdout.isatty():
        return s
    return f"\x1b[{code}m{s}\x1b[0m"


def cmd_run(parser: argparse.ArgumentParser, cfg: dict) -> int:
    model, x_init = setup(cfg)
    trace = run_with_policy(model, x_init, None, policy_config(cfg))
    _emit(cfg, trace.to_json())
    print(
        f"run: policy={trace.config['policy']} speedup={trace.cost.speedup:.3f} "
        f"blocks={trace.cost.blocks_computed}/{trace.cost.blocks_total} "
        f"equivalent_to_reference={trace.equivalent_to_reference}",
        file=sys.stderr,
    )
    return 0


def cmd_compare(parser: argparse.ArgumentParser, cfg: dict) -> int:
    policies = [p.strip() for p in cfg["policies"].split(",") if p.strip()]
    known = {k.value for k in PolicyKind}
    for p in policies:
        if p not in known:
            parser.error(f"unknown policy {p!r} in --policies")
    model, x_init = setup(cfg)
    reference = run_reference(model, x_init)

    rows = []
    for p in policies:  # sequential, report assembled in list order
        trace = run_with_policy(model, x_init, None, policy_config(cfg, p))
        div = divergence(trace, reference)
        rows.append(
            {
                "policy": p,
                "speedup": trace.cost.speedup,
                "block_speedup": trace.cost.block_speedup,
                "blocks_computed": trace.cost.blocks_computed,
                "blocks_total": trace.cost.blocks_total,
                "flops_actual": trace.cost.flops_actual,
                "flops_full": trace.cost.flops_full,
                "final_mse": div.final_mse,
                "final_cosine": div.final_cosine,
                "per_step_mse": div.per_step_mse,
                "per_step_cosine": div.per_step_cosine,
            }
        )

    header = f"{'policy':<16} {'speedup':>8} {'blocks':>9} {'final_mse':>12} {'final_cos':>10}"
    lines = [header, "-" * len(header)]
    best = max(r["speedup"] for r in rows)
    for r in rows:
        speed = f"{r['speedup']:>8.3f}"
        if r["speedup"] == best and len(rows) > 1:
            speed = _color(speed, "32")
        lines.append(
            f"{r['policy']:<16} {speed} "
            f"{r['blocks_computed']}/{r['blocks_total']:>4} "
            f"{r['final_mse']:>12.4e} {r['final_cosine']:>10.6f}"
        )
    report = {"schema": "corgi-compare/1", "runs": rows}
    if cfg["out"]:
        with open(cfg["out"], "w") as f:
            json.dump(report, f, indent=2)
            f.write("\n")
        print("\n".join(lines))
    else:
        print("\n".join(lines))
        sys.stdout.write(json.dumps(report, indent=2) + "\n")
    return 0


def cmd_ablate(parser: argparse.ArgumentParser, cfg: dict) -> int:
    model, x_init = setup(cfg)
    report = analyze_model(model, x_init)
    mean = report.mean_cosine
    for b in range(mean.shape[0]):
        print(f"block {b}: mean ablation cosine {mean[b].mean():.6f}", file=sys.stderr)
    _emit(cfg, json.dumps(report.to_dict(), indent=2) + "\n")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = merge_config(parser, args)
        return args.func(parser, cfg)
    except (ValueError, OSError) as e:
        print(json.dumps({"error": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
