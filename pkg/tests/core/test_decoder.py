"""Tests for the boundary decoder and its set prediction loss."""

import math

import pytest
import torch
from pydantic import ValidationError
from torch.func import functional_call

from mugak.core.decoder import (
    BoundaryDecoder,
    BoundaryQuerySet,
    DecoderOutput,
    WindowPrediction,
    batch_set_prediction_loss,
    boundary_attentive,
    decode_window,
    emit_predictions,
    match_queries,
    set_prediction_loss,
)


def test_boundary_attentive_examples():
    features = torch.randn(4, 3)
    assert torch.equal(boundary_attentive(features, torch.ones(4)), features)
    assert torch.count_nonzero(boundary_attentive(features, torch.zeros(4))) == 0
    scaled = boundary_attentive(torch.tensor([[2.0, 4.0]]), torch.tensor([0.5]))
    assert scaled.tolist() == [[1.0, 2.0]]


def test_boundary_attentive_rejects_bad_input():
    with pytest.raises(ValueError):
        boundary_attentive(torch.ones(3, 2), torch.ones(4))
    with pytest.raises(ValueError):
        boundary_attentive(torch.ones(2, 2), torch.tensor([0.5, 1.5]))


def test_query_set_shape():
    queries = BoundaryQuerySet(10, 8)
    assert queries.num_queries == 10
    assert queries(3).shape == (3, 10, 8)
    with pytest.raises(ValueError):
        BoundaryQuerySet(0, 8)


def test_decode_window_default_size():
    torch.manual_seed(0)
    decoder = BoundaryDecoder()
    pred = decode_window(torch.randn(100, 64), decoder)
    assert pred.num_queries == 10
    assert all(0.0 <= v <= 1.0 for v in (*pred.locations, *pred.confidences))


def test_decoder_attention_weights_are_distributions(tiny_cfg):
    decoder = BoundaryDecoder.from_config(tiny_cfg)
    out = decoder(torch.randn(2, tiny_cfg.window_len, tiny_cfg.feature_dim))
    assert out.locations.shape == (2, tiny_cfg.num_queries)
    cross = out.attentions[0]["cross"]
    assert cross.shape == (2, tiny_cfg.heads, tiny_cfg.num_queries, tiny_cfg.window_len)
    assert torch.allclose(cross.sum(dim=-1), torch.ones(cross.shape[:-1]), atol=1e-5)


def test_decoder_rejects_wrong_window():
    with pytest.raises(ValueError):
        BoundaryDecoder(dim=8, window_len=10, heads=2)(torch.randn(1, 9, 8))


def test_loss_without_ground_truth():
    loss = set_prediction_loss(torch.rand(10), torch.full((10,), 0.5), [])
    assert loss.item() == pytest.approx(math.log(2), abs=1e-6)


def test_loss_perfect_prediction():
    eps = 1e-6
    locations = torch.tensor([0.1, 0.4, 0.8], dtype=torch.float64)
    confidences = torch.tensor([eps, 1 - eps, eps], dtype=torch.float64)
    loss = set_prediction_loss(locations, confidences, [0.4])
    assert loss.item() < 1e-5


def test_loss_is_query_permutation_invariant():
    torch.manual_seed(0)
    locations, confidences = torch.rand(6), torch.rand(6)
    gt = [0.2, 0.5, 0.9]
    perm = torch.randperm(6)
    first = set_prediction_loss(locations, confidences, gt)
    second = set_prediction_loss(locations[perm], confidences[perm], gt[::-1])
    assert first.item() == pytest.approx(second.item(), abs=1e-6)


def test_match_queries_prefers_close_confident_query():
    assignment = match_queries([0.1, 0.5, 0.52], [0.9, 0.2, 0.9], [0.5])
    assert assignment.pairs == [(2, 0)]


def test_loss_rejects_bad_targets():
    with pytest.raises(ValueError):
        set_prediction_loss(torch.rand(2), torch.rand(2), [0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        set_prediction_loss(torch.rand(2), torch.rand(2), [1.5])


def test_batch_loss_is_mean():
    out = DecoderOutput(locations=torch.rand(2, 4), confidences=torch.rand(2, 4))
    targets = [[0.3], []]
    expected = (
        set_prediction_loss(out.locations[0], out.confidences[0], [0.3])
        + set_prediction_loss(out.locations[1], out.confidences[1], [])
    ) / 2
    assert batch_set_prediction_loss(out, targets).item() == pytest.approx(expected.item())


def test_emit_predictions_below_theta():
    pred = WindowPrediction(locations=[i / 10 for i in range(10)], confidences=[0.5] * 10)
    assert emit_predictions(pred, 0.0, 10.0, 0.87) == []


def test_emit_predictions_affine_map():
    pred = WindowPrediction(locations=[0.25, 0.7], confidences=[0.9, 0.3])
    (only,) = emit_predictions(pred, 10.0, 20.0, 0.5)
    assert only.time == pytest.approx(15.0)
    assert only.confidence == pytest.approx(0.9)


def test_emit_predictions_theta_zero_sorted():
    pred = WindowPrediction(locations=[0.9, 0.1, 0.5], confidences=[0.2, 0.4, 0.6])
    times = [p.time for p in emit_predictions(pred, 0.0, 1.0, 0.0)]
    assert times == pytest.approx([0.1, 0.5, 0.9])


def test_window_prediction_validation():
    with pytest.raises(ValidationError):
        WindowPrediction(locations=[0.1], confidences=[0.2, 0.3])
    with pytest.raises(ValidationError):
        WindowPrediction(locations=[1.2], confidences=[0.3])


def test_decoder_and_loss_gradcheck():
    torch.manual_seed(0)
    decoder = BoundaryDecoder(dim=8, num_queries=3, layers=1, heads=2, window_len=8).double()
    memory = boundary_attentive(
        torch.randn(1, 8, 8, dtype=torch.float64), torch.rand(1, 8, dtype=torch.float64)
    )
    gt = [0.3, 0.7]
    with torch.no_grad():
        out = decoder(memory)
    assignment = match_queries(out.locations[0], out.confidences[0], gt)
    names = [name for name, _ in decoder.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_(True) for p in decoder.parameters())

    def loss(*flat):
        result = functional_call(decoder, dict(zip(names, flat)), (memory,))
        return set_prediction_loss(
            result.locations[0], result.confidences[0], gt, assignment=assignment
        )

    assert torch.autograd.gradcheck(loss, params, eps=1e-6, atol=1e-6, rtol=1e-4)


def test_decoder_ignores_time_order_without_positions():
    """With positional encodings off, permuting window time steps changes nothing."""
    torch.manual_seed(4)
    decoder = BoundaryDecoder(
        dim=8, num_queries=3, layers=2, heads=2, window_len=6, pos_scale=0.0
    ).double()
    decoder.eval()
    memory = torch.randn(2, 6, 8, dtype=torch.float64)
    perm = torch.randperm(6)
    with torch.no_grad():
        first = decoder(memory)
        second = decoder(memory[:, perm])
    assert torch.allclose(first.locations, second.locations, atol=1e-10)
    assert torch.allclose(first.confidences, second.confidences, atol=1e-10)


def test_decoder_self_attention_rows_sum_to_one(tiny_cfg):
    decoder = BoundaryDecoder.from_config(tiny_cfg)
    out = decoder(torch.randn(3, tiny_cfg.window_len, tiny_cfg.feature_dim))
    for weights in out.attentions:
        self_weights = weights["self"]
        assert self_weights.shape == (3, tiny_cfg.heads, tiny_cfg.num_queries, tiny_cfg.num_queries)
        assert torch.all(self_weights >= 0)
        assert torch.allclose(
            self_weights.sum(dim=-1), torch.ones(self_weights.shape[:-1]), atol=1e-5
        )


def test_decode_window_is_deterministic():
    torch.manual_seed(1)
    decoder = BoundaryDecoder(dim=8, num_queries=4, layers=1, heads=2, window_len=12)
    window = torch.randn(12, 8)
    assert decode_window(window, decoder) == decode_window(window, decoder)


def test_loss_is_non_negative():
    torch.manual_seed(6)
    for _ in range(200):
        queries = int(torch.randint(1, 8, ()).item())
        gt_count = int(torch.randint(0, queries + 1, ()).item())
        loss = set_prediction_loss(torch.rand(queries), torch.rand(queries), torch.rand(gt_count))
        assert loss.item() >= 0.0


def test_loss_ignores_ground_truth_order():
    torch.manual_seed(8)
    locations, confidences = torch.rand(6), torch.rand(6)
    gt = [0.15, 0.4, 0.65, 0.9]
    reordered = [gt[i] for i in (2, 0, 3, 1)]
    first = set_prediction_loss(locations, confidences, gt)
    second = set_prediction_loss(locations, confidences, reordered)
    assert first.item() == pytest.approx(second.item(), abs=1e-6)
