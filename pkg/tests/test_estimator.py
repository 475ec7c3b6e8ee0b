import doctest

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import bevproj.estimator
from bevproj import BevEncoder, EgoPose, surround_rig
from bevproj.exceptions import ConfigurationError, FormatError
from bevproj.fields import ConstantProvider
from bevproj.pipeline import FrameInput

RIGS = surround_rig(H=24, W=56)
SMALL = dict(x_range=(-12.0, 12.0), y_range=(-8.0, 8.0), K=4)


def feats(C=3, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal((C, r.H, r.W)).astype(np.float32) for r in RIGS]


def test_doctest():
    assert doctest.testmod(bevproj.estimator).failed == 0


def test_params_and_clone():
    enc = BevEncoder(rigs=RIGS, K=16, gamma=0.5)
    p = enc.get_params()
    assert p["K"] == 16 and p["gamma"] == 0.5 and p["use_raw_hist"] is True
    c = clone(enc).set_params(K=2)
    assert c.K == 2 and enc.K == 16 and not hasattr(c, "grid_")


def test_fit_defaults():
    enc = BevEncoder(rigs=RIGS).fit()
    assert enc.grid_.shape == (120, 60)
    assert enc.n_cameras_ == 6 and enc.camera_names_[0] == "front"
    assert enc.config_.T == 4


def test_fit_rigs_argument_overrides():
    enc = BevEncoder().fit(RIGS[:2])
    assert enc.n_cameras_ == 2
    with pytest.raises(ConfigurationError):
        BevEncoder().fit()
    with pytest.raises(ConfigurationError):
        BevEncoder(rigs=["front"]).fit()


def test_unfitted():
    with pytest.raises(NotFittedError):
        BevEncoder(rigs=RIGS).transform([feats()])


def test_transform_shape_and_reset():
    enc = BevEncoder(rigs=RIGS, **SMALL).fit()
    seq = [(feats(seed=i), EgoPose(0.5 * i, 0, 0)) for i in range(3)]
    out = enc.transform(seq)
    assert out.shape == (3, 3, 48, 32) and out.dtype == np.float32
    # transform restarts history each call
    np.testing.assert_array_equal(enc.transform(seq), out)


def test_partial_transform_matches_transform():
    enc = BevEncoder(rigs=RIGS, **SMALL).fit()
    seq = [feats(seed=i) for i in range(3)]
    whole = enc.transform(seq)
    enc.reset()
    steps = [enc.partial_transform(f) for f in seq]
    np.testing.assert_array_equal(np.stack(steps), whole)
    assert enc._frame_index == 3


def test_frame_input_with_providers_and_threads():
    a = BevEncoder(rigs=RIGS, **SMALL).fit()
    b = BevEncoder(rigs=RIGS, n_jobs=3, **SMALL).fit()
    prov = [ConstantProvider(1.0, 0.0, 1.0, 0.0, 1.0, 0.8)] * 6
    fr = FrameInput(feats(), prov, EgoPose(), 0)
    np.testing.assert_array_equal(a.partial_transform(fr), b.partial_transform(fr))


def test_project_only():
    enc = BevEncoder(rigs=RIGS, **SMALL).fit()
    raw = enc.project(feats())
    assert raw.features.shape == (3, 48, 32)
    assert raw.conf.max() <= 1 and raw.valid.any()
    np.testing.assert_array_equal(raw.features[:, ~raw.valid], 0)


def test_feature_map_errors():
    enc = BevEncoder(rigs=RIGS, **SMALL).fit()
    bad = feats()
    bad[2] = bad[2][:, :10]
    with pytest.raises(ValueError, match=RIGS[2].name):
        enc.partial_transform(bad)
    with pytest.raises(ValueError, match="expected 6"):
        enc.partial_transform(feats()[:5])
    nan = feats()
    nan[0][0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        enc.partial_transform(nan)
    with pytest.raises(ValueError, match="empty"):
        enc.transform([])


def test_fusion_weights_shape():
    C = 3
    good = np.zeros((5 * C, C), np.float32)
    good[:C] = np.eye(C)
    enc = BevEncoder(rigs=RIGS, fusion_weights=good, **SMALL).fit()
    ref = BevEncoder(rigs=RIGS, **SMALL).fit()
    f = feats()
    np.testing.assert_allclose(enc.partial_transform(f), ref.partial_transform(f), atol=1e-6)
    enc = BevEncoder(rigs=RIGS, fusion_weights=np.zeros((4 * C, C)), **SMALL).fit()
    with pytest.raises(FormatError):
        enc.partial_transform(f)
