import numpy as np
import pytest

from corgi import (
    CacheMiss,
    CorgiConfig,
    PolicyKind,
    SalientTokenSet,
    SeededRng,
    build_mask,
    block_forward,
    execute_block_cached,
    execute_block_corgi_plus,
    masked_merge,
    partial_attention,
    run_reference,
    run_with_policy,
)
from corgi.runtime import CacheEntry

from helpers import bit_identical_to_reference, toy_setup


def _entry(attn, ffn, h_cached, step=0):
    attn = np.asarray(attn, dtype=np.float64)
    ffn = np.asarray(ffn, dtype=np.float64)
    h_cached = np.asarray(h_cached, dtype=np.float64)
    return CacheEntry(
        attn_out=attn,
        ffn_out=ffn,
        block_out=(h_cached + attn) + ffn,
        joint_attention=np.ones((attn.shape[0], attn.shape[0])) / attn.shape[0],
        cross_map=np.zeros((0, attn.shape[0])),
        step=step,
    )


def test_cached_zero_outputs_pass_hidden_state_through():
    model, x = toy_setup(0, num_blocks=1)
    h = np.concatenate([model.text_embed, x], axis=0)
    entry = _entry(np.zeros_like(h), np.zeros_like(h), np.zeros_like(h))
    out = execute_block_cached(h, model.blocks[0], entry, "compute")
    assert np.array_equal(out.block_out, h)


def test_cached_hand_scalars():
    blk = toy_setup(0, num_blocks=1, hidden_dim=1, ffn_dim=1, num_heads=1,
                    text_tokens=1, image_tokens=1)[0].blocks[0]
    entry = _entry([[0.3]], [[0.1]], [[1.0]])
    h = np.array([[2.0]])
    compute = execute_block_cached(h, blk, entry, "compute")
    assert compute.block_out[0, 0] == pytest.approx(2.4, abs=1e-15)
    reuse = execute_block_cached(h, blk, entry, "reuse")
    assert reuse.block_out[0, 0] == pytest.approx(1.4, abs=1e-15)
    # reuse ignores the current hidden state entirely
    other = execute_block_cached(np.array([[7.0]]), blk, entry, "reuse")
    assert other.block_out[0, 0] == reuse.block_out[0, 0]


def test_compute_residual_adds_exactly_the_cached_terms():
    model, x = toy_setup(13, num_blocks=1)
    cfg = model.config
    h0 = np.concatenate([model.text_embed, x], axis=0)
    outs = block_forward(model.blocks[0], h0, cfg.text_tokens)
    entry = _entry(outs.attn_out, outs.ffn_out, h0)
    h1 = h0 * 0.9 - 0.3
    got = execute_block_cached(h1, model.blocks[0], entry, "compute")
    assert np.array_equal(got.block_out, (h1 + entry.attn_out) + entry.ffn_out)
    assert np.array_equal(got.attn_out, entry.attn_out)
    assert np.array_equal(got.ffn_out, entry.ffn_out)


def test_cost_depends_only_on_directives_and_dims():
    a_model, a_x = toy_setup(20)
    b_model, b_x = toy_setup(21)
    cfg = CorgiConfig(policy=PolicyKind.CORGI, warmup=2, interval=4, gamma=2, delta=2)
    a = run_with_policy(a_model, a_x, None, cfg)
    b = run_with_policy(b_model, b_x, None, cfg)
    assert a.cost.to_dict() == b.cost.to_dict()


def test_cache_miss_raises():
    model, x = toy_setup(0, num_blocks=1)
    h = np.concatenate([model.text_embed, x], axis=0)
    with pytest.raises(CacheMiss, match="cache miss on cached directive"):
        execute_block_cached(h, model.blocks[0], None, "compute")


def test_partial_attention_full_set_matches_full():
    model, x = toy_setup(3, num_blocks=1)
    cfg = model.config
    h = np.concatenate([model.text_embed, x], axis=0)
    full = block_forward(model.blocks[0], h, cfg.text_tokens)
    s = SalientTokenSet(
        text_indices=tuple(range(cfg.text_tokens)),
        image_indices=tuple(range(cfg.image_tokens)),
    )
    rows = partial_attention(model.blocks[0], h, s, cfg.text_tokens)
    assert np.array_equal(rows, full.attn_out)


def test_partial_attention_single_row_bit_equal():
    model, x = toy_setup(4, num_blocks=1)
    cfg = model.config
    h = np.concatenate([model.text_embed, x], axis=0)
    full = block_forward(model.blocks[0], h, cfg.text_tokens)
    s = SalientTokenSet(text_indices=(), image_indices=(3,))
    rows = partial_attention(model.blocks[0], h, s, cfg.text_tokens)
    assert np.array_equal(rows[0], full.attn_out[cfg.text_tokens + 3])


def test_partial_attention_random_subsets_bit_equal():
    model, x = toy_setup(5, num_blocks=1, text_tokens=2, image_tokens=4,
                         hidden_dim=16, ffn_dim=16, num_heads=2)
    cfg = model.config
    h = np.concatenate([model.text_embed, x], axis=0)
    full = block_forward(model.blocks[0], h, cfg.text_tokens)
    rng = SeededRng(55)
    for _ in range(10):
        keys = rng.standard_normal(1, cfg.seq_len)[0]
        chosen = [i for i, k in enumerate(keys) if k > 0]
        s = SalientTokenSet(
            text_indices=tuple(i for i in chosen if i < cfg.text_tokens),
            image_indices=tuple(i - cfg.text_tokens for i in chosen if i >= cfg.text_tokens),
        )
        rows = partial_attention(model.blocks[0], h, s, cfg.text_tokens)
        assert np.array_equal(rows, full.attn_out[sorted(chosen)])


def test_partial_attention_empty_set_is_noop():
    model, x = toy_setup(0, num_blocks=1)
    h = np.concatenate([model.text_embed, x], axis=0)
    s = SalientTokenSet(text_indices=(), image_indices=())
    assert partial_attention(model.blocks[0], h, s, model.config.text_tokens).shape == (0, 32)


def test_masked_merge_semantics():
    cached = np.array([[10.0, 10.0], [20.0, 20.0]])
    fresh = np.array([[1.0, 1.0]])
    out = masked_merge(fresh, cached, np.array([1, 0]))
    assert out.tolist() == [[1.0, 1.0], [20.0, 20.0]]
    both = np.array([[1.0, 1.0], [2.0, 2.0]])
    assert masked_merge(both, cached, np.array([1, 1])).tolist() == both.tolist()
    assert masked_merge(both, cached, np.array([0, 0])).tolist() == cached.tolist()


def test_masked_merge_rejects_bad_mask():
    cached = np.zeros((3, 2))
    with pytest.raises(ValueError, match="mask length"):
        masked_merge(np.zeros((1, 2)), cached, np.array([1, 0]))
    with pytest.raises(ValueError, match="update rows"):
        masked_merge(np.zeros((2, 2)), cached, np.array([1, 0, 0]))


def test_corgi_plus_block_empty_set_equals_plain_cached():
    model, x = toy_setup(6, num_blocks=1)
    cfg = model.config
    h = np.concatenate([model.text_embed, x], axis=0)
    outs = block_forward(model.blocks[0], h, cfg.text_tokens)
    entry = _entry(outs.attn_out, outs.ffn_out, h)
    s = SalientTokenSet(text_indices=(), image_indices=())
    mask = build_mask(s, cfg.text_tokens, cfg.image_tokens)
    got = execute_block_corgi_plus(h + 0.5, model.blocks[0], entry, s, mask, cfg.text_tokens)
    want = execute_block_cached(h + 0.5, model.blocks[0], entry, "compute")
    assert np.array_equal(got.block_out, want.block_out)


def test_corgi_plus_block_full_set_refreshes_attention():
    model, x = toy_setup(7, num_blocks=1)
    cfg = model.config
    h0 = np.concatenate([model.text_embed, x], axis=0)
    stale = block_forward(model.blocks[0], h0, cfg.text_tokens)
    entry = _entry(stale.attn_out, stale.ffn_out, h0)
    h1 = h0 * 1.1 + 0.2
    fresh = block_forward(model.blocks[0], h1, cfg.text_tokens)
    s = SalientTokenSet(
        text_indices=tuple(range(cfg.text_tokens)),
        image_indices=tuple(range(cfg.image_tokens)),
    )
    mask = build_mask(s, cfg.text_tokens, cfg.image_tokens)
    got = execute_block_corgi_plus(h1, model.blocks[0], entry, s, mask, cfg.text_tokens)
    assert np.array_equal(got.attn_out, fresh.attn_out)
    assert np.array_equal(got.ffn_out, stale.ffn_out)  # FFN stays cached


def test_corgi_plus_block_keeps_unselected_rows_cached():
    model, x = toy_setup(8, num_blocks=1)
    cfg = model.config
    h0 = np.concatenate([model.text_embed, x], axis=0)
    stale = block_forward(model.blocks[0], h0, cfg.text_tokens)
    entry = _entry(stale.attn_out, stale.ffn_out, h0)
    s = SalientTokenSet(text_indices=(0,), image_indices=(1, 2))
    mask = build_mask(s, cfg.text_tokens, cfg.image_tokens)
    got = execute_block_corgi_plus(h0 + 1.0, model.blocks[0], entry, s, mask, cfg.text_tokens)
    for row in range(cfg.seq_len):
        if mask[row] == 0:
            assert np.array_equal(got.attn_out[row], stale.attn_out[row])


def test_noop_policies_are_bit_identical_to_reference():
    model, x = toy_setup(0)
    ref = run_reference(model, x)
    for cfg in (
        CorgiConfig(policy=PolicyKind.NONE),
        CorgiConfig(policy=PolicyKind.CORGI, gamma=0, delta=0),
        CorgiConfig(policy=PolicyKind.CORGI, interval=1),
    ):
        trace = run_with_policy(model, x, None, cfg)
        assert bit_identical_to_reference(trace, ref)
        assert trace.equivalent_to_reference


def test_worked_schedule_cached_counts():
    model, x = toy_setup(1)
    cfg = CorgiConfig(policy=PolicyKind.CORGI, warmup=2, interval=5, gamma=3, delta=1)
    trace = run_with_policy(model, x, None, cfg)
    assert [len(r.cached) for r in trace.steps] == [0, 0, 0, 3, 4, 5, 6, 0, 3, 4, 5, 6]
    assert [r.modes.count("full") for r in trace.steps] == [8, 8, 8, 5, 4, 3, 2, 8, 5, 4, 3, 2]
    assert trace.cost.blocks_computed == 60
    assert trace.cost.blocks_total == 96
    assert not trace.equivalent_to_reference


def test_boundary_and_warmup_steps_never_cache():
    model, x = toy_setup(2)
    trace = run_with_policy(model, x, None, CorgiConfig(policy=PolicyKind.CORGI))
    for rec in trace.steps:
        if rec.role in ("warmup", "boundary"):
            assert rec.cached == ()
            assert all(m == "full" for m in rec.modes)


def test_intra_caches_lowest_contribution_prefix():
    model, x = toy_setup(3)
    cfg = CorgiConfig(policy=PolicyKind.CORGI, warmup=2, interval=5, gamma=3, delta=1)
    trace = run_with_policy(model, x, None, cfg)
    boundary_scores = {c["step"]: c["scores"] for c in trace.contributions}
    assert set(boundary_scores) == {2, 7}
    from corgi import rank_ascending, select_cached

    ranking = rank_ascending(boundary_scores[2])
    intra1 = trace.steps[3]
    assert set(intra1.cached) == select_cached(ranking, 3)
    # nested growth within the interval
    for a, b in zip(trace.steps[3:7], trace.steps[4:7]):
        assert set(a.cached) <= set(b.cached)


def test_determinism_of_traces():
    model, x = toy_setup(4)
    cfg = CorgiConfig(policy=PolicyKind.CORGI_PLUS, top_c=2)
    a = run_with_policy(model, x, None, cfg)
    b = run_with_policy(model, x, None, cfg)
    a_dict, b_dict = a.to_dict(), b.to_dict()
    a_dict.pop("created_at"), b_dict.pop("created_at")
    assert a_dict == b_dict


def test_residual_strategies_differ_under_parity():
    model, x = toy_setup(5)
    ref = run_reference(model, x)
    compute = run_with_policy(model, x, None, CorgiConfig(policy=PolicyKind.PARITY))
    reuse = run_with_policy(
        model, x, None, CorgiConfig(policy=PolicyKind.PARITY, residual="reuse")
    )
    assert not np.array_equal(compute.final_output, reuse.final_output)
    assert not bit_identical_to_reference(compute, ref)


def test_parity_caches_even_or_odd_blocks():
    model, x = toy_setup(6)
    even = run_with_policy(model, x, None, CorgiConfig(policy=PolicyKind.PARITY))
    assert set(even.steps[-1].cached) == {0, 2, 4, 6}
    odd = run_with_policy(
        model, x, None, CorgiConfig(policy=PolicyKind.PARITY, parity="odd")
    )
    assert set(odd.steps[-1].cached) == {1, 3, 5, 7}


def test_naive_baseline_caches_half_each_step():
    model, x = toy_setup(7)
    trace = run_with_policy(model, x, None, CorgiConfig(policy=PolicyKind.PER_STEP_NAIVE))
    warmup = trace.config["warmup"]
    for rec in trace.steps:
        assert len(rec.cached) == (0 if rec.step < warmup else 4)


def test_random_baseline_is_seeded_and_varies():
    model, x = toy_setup(8)
    a = run_with_policy(model, x, None, CorgiConfig(policy=PolicyKind.RANDOM, seed=1))
    b = run_with_policy(model, x, None, CorgiConfig(policy=PolicyKind.RANDOM, seed=1))
    assert [r.cached for r in a.steps] == [r.cached for r in b.steps]
    c = run_with_policy(model, x, None, CorgiConfig(policy=PolicyKind.RANDOM, seed=2))
    assert [r.cached for r in a.steps] != [r.cached for r in c.steps]
    post = [r for r in a.steps if r.step >= a.config["warmup"]]
    assert all(len(r.cached) == 4 for r in post)
    assert len({r.cached for r in post}) > 1  # fresh sample per step


def test_zero_warmup_baseline_falls_back_to_full_at_step_zero():
    model, x = toy_setup(9)
    trace = run_with_policy(
        model, x, None, CorgiConfig(policy=PolicyKind.PARITY, warmup=0)
    )
    assert trace.steps[0].cached == ()
    assert all(m == "full" for m in trace.steps[0].modes)
    assert set(trace.steps[1].cached) == {0, 2, 4, 6}


def test_corgi_plus_records_saliency_and_partial_modes():
    model, x = toy_setup(10)
    trace = run_with_policy(
        model, x, None, CorgiConfig(policy=PolicyKind.CORGI_PLUS, top_c=2)
    )
    assert trace.saliency is not None and len(trace.saliency) == 8
    for entry in trace.saliency:
        assert 1 <= len(entry["text"]) <= 2
        assert len(entry["image"]) >= 1
    intra_modes = {m for r in trace.steps if r.role.startswith("intra") for m in r.modes}
    assert "cached_partial" in intra_modes
    assert "cached" not in intra_modes


def test_salient_writeback_is_unobservable_with_static_sets():
    # the merged rows are recomputed fresh at every partial step, so writing
    # them back only matters if the salient set changes between intervals
    model, x = toy_setup(11)
    base = CorgiConfig(policy=PolicyKind.CORGI_PLUS, top_c=2)
    wb = CorgiConfig(policy=PolicyKind.CORGI_PLUS, top_c=2, salient_writeback=True)
    a = run_with_policy(model, x, None, base)
    b = run_with_policy(model, x, None, wb)
    assert np.array_equal(a.final_output, b.final_output)


def test_model_config_mismatch_rejected_before_step_zero():
    model, x = toy_setup(12)
    with pytest.raises(ValueError, match="gamma"):
        run_with_policy(model, x, None, CorgiConfig(policy=PolicyKind.CORGI, gamma=99))
    with pytest.raises(ValueError, match="x_init"):
        run_with_policy(model, x[:3], None, CorgiConfig())
