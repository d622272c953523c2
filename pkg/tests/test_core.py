import pytest
import torch

from changekit.config import RunConfig
from changekit.core import (
    ChangeMap,
    FeaturePyramid,
    ImagePair,
    LabelSet,
    RangeError,
    ShapeMismatch,
    StrideError,
    crop_to,
    minmax_normalize,
    pad_to_stride,
    validate_pair,
)


def _pair(h1, w1, h2=None, w2=None):
    h2, w2 = h2 or h1, w2 or w1
    return ImagePair(t1=torch.rand(3, h1, w1), t2=torch.rand(3, h2, w2), id="p")


def test_validate_pair_accepts_valid():
    p = _pair(64, 64)
    assert validate_pair(p) is p


def test_validate_pair_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        validate_pair(_pair(64, 64, 64, 32))


def test_validate_pair_stride_error():
    with pytest.raises(StrideError):
        validate_pair(_pair(48, 48))


def test_validate_pair_range_error():
    p = ImagePair(t1=torch.rand(3, 32, 32) + 1.0, t2=torch.rand(3, 32, 32), id="p")
    with pytest.raises(RangeError):
        validate_pair(p)


def test_pad_to_stride_round_trip():
    img = torch.rand(3, 50, 70)
    padded, size = pad_to_stride(img)
    assert padded.shape[-2] % 32 == 0 and padded.shape[-1] % 32 == 0
    assert torch.equal(crop_to(padded, size), img)


def test_pyramid_requires_halving_levels():
    good = [torch.rand(4, 16, 16), torch.rand(8, 8, 8), torch.rand(16, 4, 4), torch.rand(32, 2, 2)]
    FeaturePyramid(good)
    bad = [torch.rand(4, 16, 16), torch.rand(8, 8, 8), torch.rand(16, 5, 4), torch.rand(32, 2, 2)]
    with pytest.raises(ShapeMismatch):
        FeaturePyramid(bad)
    with pytest.raises(ShapeMismatch):
        FeaturePyramid(good[:3])


def test_pyramid_finite_sweep():
    levels = [torch.rand(4, 16, 16), torch.rand(8, 8, 8), torch.rand(16, 4, 4), torch.rand(32, 2, 2)]
    pyr = FeaturePyramid(levels)
    pyr.assert_finite()
    levels[1][0, 0, 0] = float("nan")
    with pytest.raises(Exception):
        pyr.assert_finite()


def test_changemap_binary_idempotent():
    cm = ChangeMap(scores=torch.rand(8, 8), threshold=0.5)
    b1 = cm.binary()
    b2 = ChangeMap(scores=b1.float(), threshold=0.5).binary()
    assert torch.equal(b1, b2)


def test_changemap_rejects_out_of_range():
    with pytest.raises(RangeError):
        ChangeMap(scores=torch.full((4, 4), 1.5))


def test_label_set_mode_invariants():
    LabelSet(mode="supervised", pixel=torch.zeros(8, 8))
    LabelSet(mode="weak", image_level=1)
    LabelSet(mode="unsupervised")
    with pytest.raises(ValueError):
        LabelSet(mode="supervised")
    with pytest.raises(ValueError):
        LabelSet(mode="weak")
    with pytest.raises(ValueError):
        LabelSet(mode="nope")


def test_minmax_normalize():
    t = torch.tensor([1.0, 2.0, 3.0])
    out = minmax_normalize(t)
    assert torch.allclose(out, torch.tensor([0.0, 0.5, 1.0]))
    assert torch.equal(minmax_normalize(torch.full((3,), 7.0)), torch.zeros(3))


def test_runconfig_validation_and_json_round_trip(tmp_path):
    cfg = RunConfig(seed=3, lr=2e-4)
    path = tmp_path / "cfg.json"
    cfg.save(path)
    assert RunConfig.load(path) == cfg
    with pytest.raises(ValueError):
        RunConfig(cam_low=0.8, cam_high=0.3)
    with pytest.raises(ValueError):
        RunConfig(epsilon=0.0)


def test_runconfig_generator_reproducible():
    cfg = RunConfig(seed=5)
    a = torch.rand(4, generator=cfg.generator())
    b = torch.rand(4, generator=cfg.generator())
    assert torch.equal(a, b)
