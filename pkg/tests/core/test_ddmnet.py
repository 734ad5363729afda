"""Tests for the local context model."""

import math

import numpy as np
import pytest
import torch
from pydantic import ValidationError
from torch.func import functional_call

from mugak.core.attention import QueryAttention
from mugak.core.datamodel import AnnotatedVideo
from mugak.core.ddmnet import (
    BoundaryConfidenceTrack,
    ConfidenceHead,
    CrossModalAttention,
    DDMNet,
    LevelFusion,
    MapAttention,
    balanced_local_loss,
    clip_batch,
    compute_ddm,
    extract_boundaries,
    label_frame,
    local_loss,
)


def _track(confidences, step=0.1):
    times = [round(i * step, 6) for i in range(len(confidences))]
    return BoundaryConfidenceTrack(video_id="v", timestamps=times, confidences=confidences)


def test_compute_ddm_example():
    ddm = compute_ddm(torch.tensor([[1.0], [2.0], [4.0]]))
    expected = torch.tensor([[[0.0, -1.0, -3.0], [1.0, 0.0, -2.0], [3.0, 2.0, 0.0]]])
    assert torch.equal(ddm, expected)


def test_compute_ddm_constant_and_antisymmetric():
    assert torch.count_nonzero(compute_ddm(torch.full((6, 3), 2.0))) == 0
    ddm = compute_ddm(torch.randn(2, 7, 4))
    assert ddm.shape == (2, 4, 7, 7)
    assert torch.allclose(ddm, -ddm.transpose(-1, -2))
    assert torch.count_nonzero(torch.diagonal(ddm, dim1=-2, dim2=-1)) == 0


def test_compute_ddm_rejects_non_finite():
    with pytest.raises(ValueError):
        compute_ddm(torch.tensor([[1.0], [math.nan]]))


def test_level_fusion_starts_uniform():
    fusion = LevelFusion(3)
    bank = torch.randn(2, 3, 5, 4)
    assert torch.allclose(fusion(bank), bank.mean(dim=1), atol=1e-6)


def _zero_query_key(attention):
    with torch.no_grad():
        for proj in (attention.q_proj, attention.k_proj):
            proj.weight.zero_()
            proj.bias.zero_()


def test_map_attention_uniform_logits():
    torch.manual_seed(0)
    attention = MapAttention(4, 2)
    _zero_query_key(attention)
    appearance = torch.randn(1, 5, 4)
    ddm = compute_ddm(appearance)
    out, weights = attention(ddm, appearance)
    assert torch.allclose(weights, torch.full_like(weights, 0.2))
    values = attention.v_proj(ddm.permute(0, 2, 3, 1)).mean(dim=2)
    assert torch.allclose(out, attention.out_proj(values), atol=1e-6)


def test_map_attention_single_frame():
    torch.manual_seed(0)
    attention = MapAttention(4, 2)
    appearance = torch.randn(1, 1, 4)
    out, weights = attention(compute_ddm(appearance), appearance)
    assert torch.equal(weights, torch.ones(1, 2, 1, 1))
    expected = attention.out_proj(attention.v_proj.bias)
    assert torch.allclose(out[0, 0], expected, atol=1e-6)


def test_map_attention_rows_sum_to_one():
    attention = MapAttention(8, 4)
    appearance = torch.randn(3, 6, 8)
    _, weights = attention(compute_ddm(appearance), appearance)
    assert torch.allclose(weights.sum(dim=-1), torch.ones(3, 4, 6), atol=1e-6)


def test_intra_modal_attention_shapes():
    attention = QueryAttention(64, 4, 5)
    out, weights = attention(torch.randn(2, 33, 64))
    assert out.shape == (2, 5, 64)
    assert weights.shape == (2, 4, 5, 33)
    assert torch.allclose(weights.sum(dim=-1), torch.ones(2, 4, 5), atol=1e-6)


def test_intra_modal_attention_single_token():
    _, weights = QueryAttention(8, 2, 3)(torch.randn(1, 1, 8))
    assert torch.allclose(weights, torch.ones_like(weights))


def test_intra_modal_attention_identical_tokens():
    torch.manual_seed(0)
    attention = QueryAttention(8, 2, 3)
    token = torch.randn(8)
    out, _ = attention(token.expand(1, 6, 8))
    mha = attention.attn
    value = torch.nn.functional.linear(token, mha.in_proj_weight[16:], mha.in_proj_bias[16:])
    expected = mha.out_proj(value)
    assert torch.allclose(out[0], expected.expand(3, 8), atol=1e-5)


def test_cross_modal_attention_zero_streams():
    cross = CrossModalAttention(8, 2)
    with torch.no_grad():
        cross.proj.bias.zero_()
    zeros = torch.zeros(2, 3, 8)
    fused, weights = cross(zeros, zeros)
    assert torch.count_nonzero(fused) == 0
    assert set(weights) == {"cross_appearance", "cross_motion"}


def test_confidence_head_zero_weights():
    head = ConfidenceHead(4)
    with torch.no_grad():
        for p in head.parameters():
            p.zero_()
    assert torch.equal(head(torch.randn(3, 4)), torch.full((3,), 0.5))


def test_ddmnet_forward_shapes(tiny_cfg):
    model = DDMNet.from_config(tiny_cfg, [3, 5])
    clips = [torch.randn(4, tiny_cfg.clip_len, c) for c in (3, 5)]
    out = model(clips)
    assert out.confidence.shape == (4,)
    assert out.representation.shape == (4, tiny_cfg.feature_dim)
    assert torch.all((out.confidence >= 0) & (out.confidence <= 1))
    assert set(out.attentions) == {
        "map",
        "intra_appearance",
        "intra_motion",
        "cross_appearance",
        "cross_motion",
    }


def test_from_config_level_mismatch(tiny_cfg):
    with pytest.raises(ValueError):
        DDMNet.from_config(tiny_cfg, [3, 5, 7])


def test_reversal_invariance_at_symmetric_init():
    torch.manual_seed(3)
    model = DDMNet([2, 3], dim=8, kernel_sizes=(1, 3), omega=2, heads=2, pos_scale=0.0,
                   init_noise=0.0).double()
    model.eval()
    clips = [torch.randn(2, 7, c, dtype=torch.float64) for c in (2, 3)]
    reversed_clips = [torch.flip(c, dims=[1]) for c in clips]
    with torch.no_grad():
        forward = model(clips).confidence
        backward = model(reversed_clips).confidence
    assert torch.max(torch.abs(forward - backward)) < 1e-6


def test_label_frame():
    video = AnnotatedVideo(id="v", duration=10.0, fps=30, boundaries=[5.1])
    assert label_frame(5.0, video, 0.25) == 1
    assert label_frame(5.0, video.model_copy(update={"boundaries": [5.5]}), 0.25) == 0
    assert label_frame(5.0, video.model_copy(update={"boundaries": []}), 0.25) == 0


def test_local_loss_values():
    assert local_loss(0.5, 1).item() == pytest.approx(math.log(2), abs=1e-6)
    assert local_loss(torch.tensor(1.0, dtype=torch.float64), 1).item() < 1e-6
    assert math.isfinite(local_loss(0.0, 1).item())


def test_local_loss_gradient():
    p = torch.tensor(0.8, dtype=torch.float64, requires_grad=True)
    local_loss(p, 1).backward()
    assert p.grad.item() == pytest.approx(-1.25)


def test_balanced_local_loss_weights_positives():
    probs = torch.tensor([0.5, 0.5, 0.5, 0.5])
    labels = torch.tensor([1.0, 0.0, 0.0, 0.0])
    # one positive weighted by 3 against three negatives
    expected = (3 * math.log(2) + 3 * math.log(2)) / 4
    assert balanced_local_loss(probs, labels).item() == pytest.approx(expected, abs=1e-6)
    all_negative = balanced_local_loss(probs, torch.zeros(4)).item()
    assert all_negative == pytest.approx(math.log(2), abs=1e-6)


def test_extract_boundaries_single_peak():
    preds = extract_boundaries(_track([0.1, 0.9, 0.1]), 0.5)
    assert [(p.time, p.confidence) for p in preds] == [(0.1, pytest.approx(0.9))]


def test_extract_boundaries_below_threshold():
    assert extract_boundaries(_track([0.2] * 5), 0.5) == []


def test_extract_boundaries_plateau_first_frame():
    preds = extract_boundaries(_track([0.1, 0.9, 0.9, 0.1]), 0.5)
    assert len(preds) == 1
    assert preds[0].time == pytest.approx(0.1)


def test_extract_boundaries_edges_and_tau():
    preds = extract_boundaries(_track([0.8, 0.3, 0.6, 0.7]), 0.5)
    assert [p.time for p in preds] == [pytest.approx(0.0), pytest.approx(0.3)]
    with pytest.raises(ValueError):
        extract_boundaries(_track([0.5]), 1.5)


def test_confidence_track_validation():
    with pytest.raises(ValidationError):
        BoundaryConfidenceTrack(video_id="v", timestamps=[0.0, 0.0], confidences=[0.1, 0.2])
    with pytest.raises(ValidationError):
        BoundaryConfidenceTrack(video_id="v", timestamps=[0.0], confidences=[1.5])


def test_clip_batch_gathers_rows():
    pooled = [np.arange(10, dtype=np.float32).reshape(5, 2), np.ones((5, 3), dtype=np.float32)]
    indices = np.array([[0, 0, 1], [3, 4, 4]])
    clips = clip_batch(pooled, indices)
    assert [tuple(c.shape) for c in clips] == [(2, 3, 2), (2, 3, 3)]
    assert clips[0][1, 2].tolist() == [8.0, 9.0]


def test_local_stage_gradcheck():
    torch.manual_seed(0)
    model = DDMNet([2, 3], dim=8, kernel_sizes=(1, 3), omega=2, heads=2).double()
    clips = [torch.randn(2, 5, c, dtype=torch.float64) for c in (2, 3)]
    labels = torch.tensor([1.0, 0.0], dtype=torch.float64)
    names = [name for name, _ in model.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_(True) for p in model.parameters())

    def loss(*flat):
        out = functional_call(model, dict(zip(names, flat)), (clips,))
        return local_loss(out.confidence, labels).sum()

    assert torch.autograd.gradcheck(loss, params, eps=1e-6, atol=1e-6, rtol=1e-4)


def test_extract_boundaries_endpoint_ties_neighbour():
    """An endpoint equal to its only neighbour still counts."""
    preds = extract_boundaries(_track([0.5, 0.5, 0.9]), 0.5)
    assert [p.time for p in preds] == [pytest.approx(0.0), pytest.approx(0.2)]
    assert [p.time for p in extract_boundaries(_track([0.9, 0.9, 0.1]), 0.5)] == [0.0]


def test_extract_boundaries_sorted_and_above_tau():
    rng = np.random.default_rng(11)
    for _ in range(50):
        track = _track(np.round(rng.random(int(rng.integers(1, 30))), 1).tolist())
        preds = extract_boundaries(track, 0.4)
        times = [p.time for p in preds]
        assert all(a < b for a, b in zip(times, times[1:]))
        assert all(p.confidence >= 0.4 for p in preds)


def test_cross_modal_attention_is_asymmetric():
    torch.manual_seed(5)
    cross = CrossModalAttention(8, 2)
    appearance, motion = torch.randn(1, 3, 8), torch.randn(1, 3, 8)
    forward, _ = cross(appearance, motion)
    swapped, _ = cross(motion, appearance)
    assert not torch.allclose(forward, swapped)


def test_cross_modal_attention_rows_sum_to_one():
    cross = CrossModalAttention(8, 2)
    _, weights = cross(torch.randn(4, 3, 8), torch.randn(4, 3, 8))
    for name in ("cross_appearance", "cross_motion"):
        assert weights[name].shape == (4, 2, 3, 3)
        assert torch.all(weights[name] >= 0)
        assert torch.allclose(weights[name].sum(dim=-1), torch.ones(4, 2, 3), atol=1e-6)


def test_confidence_head_range_and_monotone():
    torch.manual_seed(2)
    head = ConfidenceHead(6).double()
    fused = torch.randn(1000, 6, dtype=torch.float64)
    probs = head(fused)
    assert torch.all((probs > 0) & (probs < 1))
    logits = head.logit(fused)
    order = torch.argsort(logits)
    assert torch.all(probs[order][1:] >= probs[order][:-1])
