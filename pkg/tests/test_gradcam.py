"""Saliency map construction, normalization rules, and overlays."""

from types import SimpleNamespace

import numpy as np
import pytest

import pneumoxai.gradcam as G
import pneumoxai.models as M
import pneumoxai.tensor as T
from pneumoxai.data import ImageBuffer
from pneumoxai.errors import ShapeMismatchError
from pneumoxai.tensor import Tensor


class GapNet:
    """Analytic fixture: the class score is exactly the global average of a
    fixed single-channel feature map (optionally negated)."""

    def __init__(self, feature, sign=1.0):
        self.feature = np.asarray(feature, dtype=np.float64)[None, None]
        self.sign = sign
        h, w = self.feature.shape[2:]
        self.spec = SimpleNamespace(
            blocks=(("feat", None),), gradcam_target="feat", input_shape=(1, h, w)
        )
        self.activations = {}

    def forward(self, x, training=False):
        f = Tensor(self.feature.copy(), requires_grad=True)
        self.activations = {"feat": f}
        out = T.reshape(T.pool2d(f, "global_avg"), (1,))
        return T.scale(out, self.sign)

    def zero_grad(self):
        for t in self.activations.values():
            t.zero_grad()


def test_gradcam_analytic_single_channel():
    rng = np.random.default_rng(0)
    feature = rng.uniform(0.1, 2.0, (6, 6))
    net = GapNet(feature)
    hm = G.gradcam(net, np.zeros((1, 6, 6), dtype=np.float32))
    # alpha = 1/(H*W) uniform, so raw is ReLU(feature)/36
    np.testing.assert_allclose(hm.raw, feature / 36.0, rtol=1e-6)
    assert hm.normalized.max() == pytest.approx(1.0)
    assert hm.class_score == pytest.approx(feature.mean())


def test_gradcam_negated_score_gives_zero_map():
    feature = np.full((4, 4), 2.0)
    hm = G.gradcam(GapNet(feature, sign=-1.0), np.zeros((1, 4, 4), dtype=np.float32))
    np.testing.assert_array_equal(hm.raw, np.zeros((4, 4)))
    np.testing.assert_array_equal(hm.normalized, np.zeros((4, 4)))


def test_gradcam_scale_covariance():
    rng = np.random.default_rng(1)
    feature = rng.uniform(0.1, 1.0, (5, 5))
    base = G.gradcam(GapNet(feature), np.zeros((1, 5, 5), dtype=np.float32))
    scaled = G.gradcam(GapNet(3.0 * feature), np.zeros((1, 5, 5), dtype=np.float32))
    np.testing.assert_allclose(scaled.raw, 3.0 * base.raw, rtol=1e-6)
    np.testing.assert_allclose(scaled.normalized, base.normalized, rtol=1e-6)


def _real_net_and_image(seed=0):
    spec = M.preset_spec("micro-dense")
    net = M.build_network(spec, seed=seed)
    rng = np.random.default_rng(seed + 100)
    image = rng.standard_normal((3, 16, 16)).astype(np.float32)
    return spec, net, image


def test_gradcam_unknown_layer_lists_valid_names():
    _, net, image = _real_net_and_image()
    with pytest.raises(ShapeMismatchError, match="stem"):
        G.gradcam(net, image, target_layer="nope")


def test_gradcam_does_not_mutate_parameters():
    _, net, image = _real_net_and_image()
    checksum = net.param_vector().tobytes()
    G.gradcam(net, image)
    assert net.param_vector().tobytes() == checksum


def test_gradcam_deterministic_and_extents():
    spec, net, image = _real_net_and_image()
    a = G.gradcam(net, image)
    b = G.gradcam(net, image)
    assert a.raw.tobytes() == b.raw.tobytes()
    assert a.normalized.tobytes() == b.normalized.tobytes()
    feat_shape = dict(M.symbolic_shapes(spec))[spec.gradcam_target]
    assert a.raw.shape == tuple(feat_shape[1:])
    assert a.normalized.shape == tuple(spec.input_shape[1:])
    assert np.all(a.raw >= 0)
    assert np.all((a.normalized >= 0) & (a.normalized <= 1))


def test_heatmap_to_gray_range():
    hm = G.Heatmap(raw=np.ones((2, 2)), normalized=np.array([[0.0, 0.5], [1.0, 0.25]]),
                   target_layer="t", class_score=0.5)
    gray = G.heatmap_to_gray(hm)
    np.testing.assert_array_equal(gray.pixels[:, :, 0], [[0, 128], [255, 64]])


def _heatmap(norm):
    return G.Heatmap(raw=np.asarray(norm), normalized=np.asarray(norm, dtype=np.float64),
                     target_layer="t", class_score=0.5)


def test_overlay_alpha_zero_is_original():
    rng = np.random.default_rng(2)
    pix = rng.integers(0, 256, (3, 3, 1), dtype=np.uint8)
    out = G.overlay(_heatmap(np.zeros((3, 3))), ImageBuffer(pix), alpha=0.0)
    for c in range(3):
        np.testing.assert_array_equal(out.pixels[:, :, c], pix[:, :, 0])


def test_overlay_alpha_one_all_ones_is_pure_red():
    pix = np.zeros((2, 2, 1), dtype=np.uint8)
    out = G.overlay(_heatmap(np.ones((2, 2))), ImageBuffer(pix), alpha=1.0)
    assert np.all(out.pixels == np.array([255, 0, 0], dtype=np.uint8))


def test_overlay_blend_is_affine_hand_fixture():
    hm = np.array([[0.0, 1.0], [0.5, 0.25]])
    pix = np.array([[10, 200], [100, 30]], dtype=np.uint8)[:, :, None]
    out = G.overlay(_heatmap(hm), ImageBuffer(pix), alpha=0.5)
    colored = G.COLORMAP[np.rint(hm * 255).astype(int)].astype(np.float64)
    expected = np.clip(
        np.rint(0.5 * np.repeat(pix.astype(np.float64), 3, axis=2) + 0.5 * colored),
        0, 255,
    ).astype(np.uint8)
    np.testing.assert_array_equal(out.pixels, expected)


def test_overlay_size_mismatch_rejected():
    with pytest.raises(ShapeMismatchError, match="size"):
        G.overlay(_heatmap(np.zeros((4, 4))), ImageBuffer(np.zeros((3, 3, 1), dtype=np.uint8)))


def test_overlay_alpha_validation():
    with pytest.raises(ValueError):
        G.overlay(_heatmap(np.zeros((2, 2))), ImageBuffer(np.zeros((2, 2, 1), dtype=np.uint8)), alpha=1.5)


def test_heatmap_csv_round_trip(tmp_path):
    hm = _heatmap(np.array([[0.125, 0.5], [0.75, 1.0]]))
    path = tmp_path / "hm.csv"
    G.heatmap_csv(hm, path)
    np.testing.assert_allclose(np.loadtxt(path, delimiter=","), hm.normalized, atol=1e-8)
