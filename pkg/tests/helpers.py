"""Shared test setup: seeded toy models matching the CLI's derivation."""

import numpy as np

from corgi import ModelConfig, SeededRng, build_model, derive_seed


def toy_setup(seed=0, **overrides):
    """Model plus initial noise, derived from one user seed like the CLI."""
    cfg = ModelConfig(**overrides)
    model = build_model(cfg, derive_seed(seed, "model"))
    noise = SeededRng(derive_seed(seed, "init-noise"))
    return model, noise.standard_normal(cfg.image_tokens, cfg.hidden_dim)


def bit_identical_to_reference(trace, reference):
    """Exact equality of the numeric payload shared by trace and reference."""
    return all(
        np.array_equal(a, b)
        for a, b in zip(trace.noise_preds, reference.noise_preds)
    ) and np.array_equal(trace.final_output, reference.final_output)
