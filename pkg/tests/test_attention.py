import math

import numpy as np
import pytest
import torch

from partkit.attention import (
    SD15_CROSS_ATTENTION_16X16,
    AttentionStack,
    attention_loss,
    attention_loss_mse,
    collect_attention,
    normalize,
    on_mask_mass,
    sample_record,
    total_loss,
)
from partkit.errors import ConfigError, InputError, InternalError, NumericError
from partkit.parts import PartMaskSet


def _stack(maps, grid=None):
    maps = torch.as_tensor(maps, dtype=torch.float64)
    grid = grid or (1, maps.shape[2])
    return AttentionStack(maps, tuple(f"layer{i}" for i in range(maps.shape[0])),
                          tuple(range(maps.shape[1])), grid)


def _masks(rows, grid=None):
    rows = np.asarray(rows, dtype=np.uint8)
    grid = grid or (1, rows.shape[1])
    masks = rows.reshape(rows.shape[0], *grid)
    present = masks.reshape(rows.shape[0], -1).any(axis=1)
    return PartMaskSet(masks, present)


def test_default_layer_set_is_the_sd_16x16_quintet():
    assert len(SD15_CROSS_ATTENTION_16X16) == 5
    assert SD15_CROSS_ATTENTION_16X16[0] == \
        "down_blocks.2.attentions.0.transformer_blocks.0.attn2"
    assert all(layer.endswith(".attn2") for layer in SD15_CROSS_ATTENTION_16X16)
    assert sum(l.startswith("down_blocks.2") for l in SD15_CROSS_ATTENTION_16X16) == 2
    assert sum(l.startswith("up_blocks.1") for l in SD15_CROSS_ATTENTION_16X16) == 3


def test_collect_single_layer_single_head_is_raw_column(rng):
    probs = torch.from_numpy(rng.random((1, 6, 3)))
    record = {"only": probs}
    stack = collect_attention(record, ["only"], {0: 1}, (2, 3))
    assert torch.equal(stack.maps[0, 0], probs[0, :, 1])


def test_collect_two_heads_averages(rng):
    p = torch.from_numpy(rng.random((6, 3)))
    q = torch.from_numpy(rng.random((6, 3)))
    record = {"x": torch.stack([p, q])}
    stack = collect_attention(record, ["x"], {0: 2}, (2, 3))
    assert torch.allclose(stack.maps[0, 0], (p[:, 2] + q[:, 2]) / 2)


def test_collect_errors():
    record = {"a": torch.rand(2, 4, 3)}
    with pytest.raises(ConfigError):
        collect_attention(record, ["missing"], {0: 0}, (2, 2))
    with pytest.raises(InternalError):
        collect_attention(record, ["a"], {0: 9}, (2, 2))
    with pytest.raises(ConfigError):
        collect_attention(record, [], {0: 0}, (2, 2))


def test_sample_record_slices_batch(rng):
    batched = {"a": torch.from_numpy(rng.random((2, 3, 4, 5)))}
    view = sample_record(batched, 1)
    assert torch.equal(view["a"], batched["a"][1])


def test_normalize_single_part_is_one():
    stack = _stack([[[0.3, 0.7, 0.1, 0.5]]])
    normed = normalize(stack)
    assert torch.allclose(normed.maps, torch.ones_like(normed.maps))


def test_normalize_equal_parts_split_evenly():
    stack = _stack([[[0.4, 0.2], [0.4, 0.2]]])
    normed = normalize(stack)
    assert torch.allclose(normed.maps, torch.full_like(normed.maps, 0.5))


def test_normalize_matches_reference_implementation(rng):
    maps = rng.random((2, 3, 4))
    stack = _stack(maps)
    normed = normalize(stack).maps.numpy()
    # independent two-line reference: layer mean, then per-location ratio
    bar = maps.mean(axis=0)
    ref = bar / bar.sum(axis=0, keepdims=True)
    assert np.allclose(normed, ref, atol=1e-6)


def test_normalize_sums_to_one_on_random_stacks(rng):
    for _ in range(50):
        maps = rng.random((3, 4, 8))
        sums = normalize(_stack(maps)).maps.sum(dim=0)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)


def test_loss_zero_when_attention_matches_masks():
    s = [[1, 0, 1, 0], [0, 1, 0, 1]]
    maps = torch.tensor(s, dtype=torch.float64).unsqueeze(0)
    loss = attention_loss(normalize(_stack(maps)), _masks(s))
    assert loss.item() <= 1e-5


def test_uniform_two_part_instance_is_ln2():
    maps = torch.full((1, 2, 2), 0.5, dtype=torch.float64)
    loss = attention_loss(normalize(_stack(maps)), _masks([[1, 0], [0, 1]]))
    assert loss.item() == pytest.approx(math.log(2.0), abs=1e-6)


def test_absent_slot_changes_nothing():
    from partkit.attention import NormalizedAttention

    maps = torch.tensor([[[0.8, 0.2, 0.4], [0.2, 0.8, 0.6]]], dtype=torch.float64)
    masks2 = _masks([[1, 0, 1], [0, 1, 0]])
    normed = normalize(_stack(maps))
    base = attention_loss(normed, masks2)

    # same inputs plus one slot that the masks flag absent
    with_absent_masks = PartMaskSet(
        np.concatenate([masks2.masks, np.zeros((1, 1, 3), dtype=np.uint8)]),
        np.concatenate([masks2.present, [False]]),
    )
    extra_row = torch.full((1, 3), 0.123, dtype=torch.float64)
    widened = NormalizedAttention(
        torch.cat([normed.maps, extra_row]), (0, 1, 2), normed.grid
    )
    loss = attention_loss(widened, with_absent_masks)
    assert loss.item() == base.item()


def test_all_absent_is_zero_and_flagged(caplog):
    maps = torch.rand(1, 2, 4, dtype=torch.float64)
    masks2 = PartMaskSet(np.zeros((2, 1, 4), dtype=np.uint8), [False, False])
    with caplog.at_level("WARNING"):
        loss = attention_loss(normalize(_stack(maps)), masks2)
    assert loss.item() == 0.0
    assert any("no supervision" in r.message for r in caplog.records)


def test_resolution_mismatch_raises():
    maps = torch.rand(1, 2, 4, dtype=torch.float64)
    masks2 = _masks([[1, 0], [0, 1]])
    with pytest.raises(InputError):
        attention_loss(normalize(_stack(maps)), masks2)


def test_loss_nonnegative_random(rng):
    for _ in range(25):
        maps = rng.random((2, 3, 6)) + 1e-3
        rows = (rng.random((3, 6)) > 0.5).astype(np.uint8)
        rows[:, 0] = [1, 0, 0]  # keep every slot present
        loss = attention_loss(normalize(_stack(maps)), _masks(rows))
        assert loss.item() >= 0.0


def test_raising_true_part_attention_never_hurts(rng):
    for _ in range(10):
        maps = rng.random((1, 3, 5)) + 0.05
        rows = np.zeros((3, 5), dtype=np.uint8)
        rows[0] = [1, 1, 0, 0, 1]
        rows[1] = [0, 0, 1, 0, 0]
        rows[2] = [0, 0, 0, 1, 0]
        base = attention_loss(normalize(_stack(maps)), _masks(rows))
        boosted = maps.copy()
        boosted[0, 0, 0] *= 1.5  # location 0 belongs to part 0
        after = attention_loss(normalize(_stack(boosted)), _masks(rows))
        assert after.item() <= base.item() + 1e-12


def test_gradient_matches_finite_differences(rng):
    raw = torch.from_numpy(rng.random((2, 3, 16)) + 0.05)
    raw.requires_grad_(True)
    rows = np.zeros((3, 16), dtype=np.uint8)
    rows[0, :6] = 1
    rows[1, 6:11] = 1
    rows[2, 11:] = 1
    masks3 = _masks(rows)

    def f(x):
        stack = AttentionStack(x, ("a", "b"), (0, 1, 2), (1, 16))
        return attention_loss(normalize(stack), masks3)

    loss = f(raw)
    loss.backward()
    analytic = raw.grad.clone()
    step = 1e-3
    for idx in [(0, 0, 0), (1, 2, 5), (0, 1, 11), (1, 0, 15)]:
        with torch.no_grad():
            orig = raw[idx].item()
            raw[idx] = orig + step
            up = f(raw).item()
            raw[idx] = orig - step
            down = f(raw).item()
            raw[idx] = orig
        fd = (up - down) / (2 * step)
        assert analytic[idx].item() == pytest.approx(fd, rel=1e-4, abs=1e-9)


def test_total_loss_arithmetic():
    assert total_loss(1.0, 0.5, 0.01) == pytest.approx(1.005)
    assert total_loss(1.25, 7.0, 0.0) == 1.25
    with pytest.raises(NumericError):
        total_loss(float("nan"), 0.0, 0.01)
    with pytest.raises(NumericError):
        total_loss(1.0, float("inf"), 0.01)


def test_mse_variant_basics():
    s = [[1, 0], [0, 1]]
    maps = torch.tensor(s, dtype=torch.float64).unsqueeze(0)
    assert attention_loss_mse(normalize(_stack(maps)), _masks(s)).item() == \
        pytest.approx(0.0, abs=1e-12)
    uniform = torch.full((1, 2, 2), 0.5, dtype=torch.float64)
    assert attention_loss_mse(normalize(_stack(uniform)), _masks(s)).item() == \
        pytest.approx(0.25)


def test_on_mask_mass_bounds(rng):
    maps = rng.random((2, 2, 4))
    rows = np.array([[1, 1, 0, 0], [0, 0, 1, 1]], dtype=np.uint8)
    mass = on_mask_mass(_stack(maps), _masks(rows))
    assert 0.0 <= mass <= 1.0
    concentrated = np.zeros((1, 2, 4))
    concentrated[:, 0, :2] = 1.0
    concentrated[:, 1, 2:] = 1.0
    assert on_mask_mass(_stack(concentrated), _masks(rows)) == pytest.approx(1.0)