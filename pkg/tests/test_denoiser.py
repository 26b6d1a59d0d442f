"""Denoiser network contracts: shapes, grouping, loss, temporal behavior."""

import copy
from types import SimpleNamespace

import numpy as np
import pytest
import torch

from texpose.conditioning import ConditioningBundle, ForegroundEncoder, IdentityEmbedder, apply_mask
from texpose.diffusion import (
    PARAMETER_GROUPS,
    DenoiserUNet,
    DiffusionBatch,
    forward_diffuse,
    make_schedule,
    training_loss,
)
from texpose.diffusion.blocks import TemporalAttention, sinusoidal_embedding


@pytest.fixture(scope="module")
def schedule():
    return make_schedule("linear-beta", 1000)


@pytest.fixture(scope="module")
def net(schedule):
    torch.manual_seed(0)
    return DenoiserUNet(schedule)


def _bundle(net, batch, frames, side=8, seed=1):
    gen = torch.Generator().manual_seed(seed)
    clone = ForegroundEncoder(copy.deepcopy(net))
    embedder = IdentityEmbedder()
    fg_latent = torch.randn(batch, 4, side, side, generator=gen)
    mask = (torch.rand(batch, 1, side * 8, side * 8, generator=gen) > 0.4).float()
    fset = apply_mask(clone(fg_latent, mask))
    return ConditioningBundle(
        pose_latent=torch.randn(batch, frames, 4, side, side, generator=gen),
        fg=fset,
        bg_latents=torch.randn(batch, frames, 4, side, side, generator=gen),
        identity=embedder(torch.rand(batch, 3, 64, 64, generator=gen)),
    )


def test_prediction_shapes(net, schedule):
    for side in (8, 16):
        bundle = _bundle(net, 2, 3, side)
        z = torch.randn(2, 3, 4, side, side, generator=torch.Generator().manual_seed(2))
        out = net.predict_noise(z, torch.tensor([10, 700]), bundle)
        assert out.shape == z.shape


def test_prediction_deterministic(net):
    bundle = _bundle(net, 1, 2)
    z = torch.randn(1, 2, 4, 8, 8, generator=torch.Generator().manual_seed(3))
    t = torch.tensor([321])
    assert torch.equal(net.predict_noise(z, t, bundle), net.predict_noise(z, t, bundle))


def test_missing_bundle_elements_rejected(net):
    bundle = _bundle(net, 1, 2)
    z = torch.zeros(1, 2, 4, 8, 8)
    t = torch.tensor([5])
    with pytest.raises(ValueError, match="bundle"):
        net.predict_noise(z, t, None)
    for field in ("pose_latent", "fg", "bg_latents", "identity"):
        broken = SimpleNamespace(
            pose_latent=bundle.pose_latent, fg=bundle.fg,
            bg_latents=bundle.bg_latents, identity=bundle.identity, lam=1.0,
        )
        setattr(broken, field, None)
        with pytest.raises(ValueError, match=field):
            net.predict_noise(z, t, broken)


def test_foreground_sensitivity(net):
    """Zeroing the reference features must move the prediction."""
    bundle = _bundle(net, 1, 2)
    zeroed_features = tuple(torch.zeros_like(f) for f in bundle.fg.features)
    zeroed = ConditioningBundle(
        pose_latent=bundle.pose_latent,
        fg=type(bundle.fg)(features=zeroed_features, masks=bundle.fg.masks),
        bg_latents=bundle.bg_latents,
        identity=bundle.identity,
    )
    z = torch.randn(1, 2, 4, 8, 8, generator=torch.Generator().manual_seed(4))
    t = torch.tensor([400])
    with torch.no_grad():
        diff = (net.predict_noise(z, t, bundle) - net.predict_noise(z, t, zeroed)).abs().max()
    assert float(diff) > 0


def test_parameter_groups_partition(net):
    groups = net.parameter_groups()
    assert set(groups) == set(PARAMETER_GROUPS)
    seen = []
    for members in groups.values():
        seen.extend(members)
    all_names = [name for name, _ in net.named_parameters()]
    assert sorted(seen) == sorted(all_names)
    assert len(seen) == len(set(seen))


def test_group_checksums_react_to_changes(net):
    before = net.group_checksums()
    assert before == net.group_checksums()
    with torch.no_grad():
        net.cross0.query_weight.add_(1e-3)
    after = net.group_checksums()
    changed = [g for g in before if before[g] != after[g]]
    assert changed == ["cross_attention"]
    with torch.no_grad():
        net.cross0.query_weight.sub_(1e-3)


def test_group_trainability_toggles(net):
    net.set_group_trainable("temporal_attention", False)
    groups = net.parameter_groups()
    assert all(not p.requires_grad for p in groups["temporal_attention"].values())
    net.set_group_trainable("temporal_attention", True)
    assert all(p.requires_grad for p in groups["temporal_attention"].values())
    with pytest.raises(ValueError):
        net.set_group_trainable("nonexistent", True)


def test_perfect_prediction_gives_zero_loss(net, schedule):
    bundle = _bundle(net, 2, 2)
    gen = torch.Generator().manual_seed(5)
    z0 = torch.randn(2, 2, 4, 8, 8, generator=gen)
    eps = torch.randn(2, 2, 4, 8, 8, generator=gen)
    batch = DiffusionBatch(z0=z0, t=torch.tensor([100, 900]), eps=eps, bundle=bundle)
    stub = SimpleNamespace(predict_noise=lambda z, t, b, temporal_enabled=False: eps)
    assert float(training_loss(batch, stub, schedule)) == 0.0


def test_loss_matches_scalar_oracle(net, schedule):
    bundle = _bundle(net, 2, 2)
    gen = torch.Generator().manual_seed(6)
    z0 = torch.randn(2, 2, 4, 8, 8, generator=gen)
    eps = torch.randn(2, 2, 4, 8, 8, generator=gen)
    t = torch.tensor([250, 750])
    batch = DiffusionBatch(z0=z0, t=t, eps=eps, bundle=bundle)
    with torch.no_grad():
        loss = float(training_loss(batch, net, schedule))
    assert loss >= 0.0
    with torch.no_grad():
        z_t = forward_diffuse(z0, t, eps, schedule)
        eps_hat = net.predict_noise(z_t, t, bundle)
    diff = (eps_hat - eps).numpy().ravel().astype(np.float64)
    acc = 0.0
    for value in diff:
        acc += value * value
    assert abs(loss - acc / diff.size) < 1e-6


def test_batch_and_timestep_validation(net, schedule):
    bundle = _bundle(net, 1, 2)
    z = torch.zeros(1, 2, 4, 8, 8)
    with pytest.raises(ValueError):
        net.predict_noise(z, torch.tensor([0]), bundle)
    with pytest.raises(ValueError):
        net.predict_noise(z, torch.tensor([1001]), bundle)
    with pytest.raises(ValueError):
        net.predict_noise(z, torch.tensor([1, 2]), bundle)
    with pytest.raises(ValueError):
        DiffusionBatch(z0=z, t=torch.tensor([1]), eps=torch.zeros(1, 2, 4, 8, 4), bundle=bundle)
    misaligned = ConditioningBundle(
        pose_latent=torch.zeros(1, 2, 4, 16, 16), fg=bundle.fg,
        bg_latents=bundle.bg_latents, identity=bundle.identity,
    )
    with pytest.raises(ValueError):
        net.predict_noise(z, torch.tensor([5]), misaligned)


def test_temporal_identity_at_init(net):
    bundle = _bundle(net, 1, 4)
    z = torch.randn(1, 4, 4, 8, 8, generator=torch.Generator().manual_seed(7))
    t = torch.tensor([600])
    with torch.no_grad():
        off = net.predict_noise(z, t, bundle, temporal_enabled=False)
        on = net.predict_noise(z, t, bundle, temporal_enabled=True)
    assert float((off - on).abs().max()) < 1e-6
    perturbed = copy.deepcopy(net)
    with torch.no_grad():
        perturbed.temp0.out_proj.weight.add_(0.05)
    with torch.no_grad():
        differs = perturbed.predict_noise(z, t, bundle, temporal_enabled=True)
    assert float((off - differs).abs().max()) > 0


def test_temporal_attend_contracts():
    torch.manual_seed(8)
    attn = TemporalAttention(16, heads=2)
    x = torch.randn(2 * 1, 16, 3, 3)
    assert torch.equal(attn(x, batch=2, frames=1), x)
    with torch.no_grad():
        attn.out_proj.weight.normal_()
        attn.out_proj.bias.normal_()
    for frames in (2, 8, 24):
        y = torch.randn(frames, 16, 4, 4)
        assert attn(y, batch=1, frames=frames).shape == y.shape
    with pytest.raises(ValueError):
        attn(x, batch=2, frames=0)
    with pytest.raises(ValueError):
        attn(x, batch=2, frames=3)


def test_temporal_attention_permutes_with_space():
    """The frame mixer acts per spatial position, so it commutes with any
    permutation of those positions."""
    torch.manual_seed(9)
    attn = TemporalAttention(8, heads=2)
    with torch.no_grad():
        attn.out_proj.weight.normal_()
        attn.out_proj.bias.normal_()
    x = torch.randn(6, 8, 2, 5)
    perm = torch.randperm(10, generator=torch.Generator().manual_seed(10))

    def permute(v):
        flat = v.flatten(2)[:, :, perm]
        return flat.reshape(v.shape)

    out_then_perm = permute(attn(x, batch=2, frames=3))
    perm_then_out = attn(permute(x), batch=2, frames=3)
    assert torch.allclose(out_then_perm, perm_then_out, atol=1e-6)


def test_reference_features_deterministic(net):
    latent = torch.zeros(1, 4, 8, 8)
    first = net.reference_features(latent)
    second = net.reference_features(latent)
    assert len(first) == 3
    grids = [f.shape[1] for f in first]
    assert grids == [64, 16, 4]
    for a, b in zip(first, second):
        assert torch.equal(a, b)


def test_sinusoidal_embedding_basic():
    emb = sinusoidal_embedding(torch.tensor([0, 1, 500]), 64)
    assert emb.shape == (3, 64)
    assert torch.all(torch.isfinite(emb))
    assert float((emb[1] - emb[2]).abs().max()) > 0
