import numpy as np
import pytest

from guidedstereo.costvol import census_cost, wta
from guidedstereo.synth import (
    OCCLUDED,
    OUT_OF_FRAME,
    VISIBLE,
    Layer,
    SceneSpec,
    format_scene,
    parse_scene,
    render,
    two_layer_scene,
)


def single(d, texture="random", **kw):
    return SceneSpec(40, 24, 16, [Layer(None, d, texture=texture)], **kw)


def test_zero_disparity_views_identical():
    r = render(single(0))
    np.testing.assert_array_equal(r.pair.left, r.pair.right)
    assert np.all(r.gt.values == 0)
    assert np.all(r.occlusion == VISIBLE)


def test_constant_shift_content():
    r = render(single(5))
    left, right = r.pair.left[:, :, 0], r.pair.right[:, :, 0]
    np.testing.assert_array_equal(left[:, 5:], right[:, :-5])
    assert np.all(r.occlusion[:, :5] == OUT_OF_FRAME)
    assert np.all(r.occlusion[:, 5:] == VISIBLE)


def test_census_recovers_rendered_shift():
    spec = SceneSpec(64, 40, 16, [Layer(None, 7)], seed=4)
    r = render(spec)
    d = wta(census_cost(r.pair, 16, window=5)).values
    inner = d[2:-2, 7 + 2 : -2]
    assert np.mean(inner == 7) >= 0.99


class TestTwoLayers:
    @pytest.fixture
    def scene(self):
        bg = Layer(None, 3, texture="random")
        fg = Layer((30, 5, 50, 15), 12, texture="random")
        return render(SceneSpec(64, 20, 16, [bg, fg], seed=11))

    def test_gt_values(self, scene):
        assert set(np.unique(scene.gt.values).tolist()) == {3.0, 12.0}
        assert np.all(scene.gt.values[5:15, 30:50] == 12)

    def test_occlusion_band(self, scene):
        for y in range(5, 15):
            occ = np.nonzero(scene.occlusion[y] == OCCLUDED)[0]
            assert occ.tolist() == list(range(21, 30))
        assert not np.any(scene.occlusion[:5] == OCCLUDED)

    def test_foreground_visible_in_right(self, scene):
        left, right = scene.pair.left[:, :, 0], scene.pair.right[:, :, 0]
        np.testing.assert_array_equal(left[5:15, 30:50], right[5:15, 18:38])

    def test_layer_ids(self, scene):
        assert scene.layer_id[10, 40] == 1 and scene.layer_id[0, 0] == 0


def test_slanted_plane_gt():
    spec = SceneSpec(32, 16, 16, [Layer(None, 2, grad_y=0.5)], subpixel=True)
    r = render(spec)
    np.testing.assert_allclose(r.gt.values[:, 0], 2 + 0.5 * np.arange(16))


def test_deterministic_and_seed_sensitive():
    a, b = render(single(4, seed=3, noise_sigma=5)), render(single(4, seed=3, noise_sigma=5))
    c = render(single(4, seed=8, noise_sigma=5))
    assert a.pair.left.tobytes() == b.pair.left.tobytes()
    assert a.pair.right.tobytes() == b.pair.right.tobytes()
    assert a.pair.left.tobytes() != c.pair.left.tobytes()


def test_noise_independent_of_texture_stream():
    clean = render(single(4, seed=3))
    noisy = render(single(4, seed=3, noise_sigma=2))
    diff = noisy.pair.left.astype(int) - clean.pair.left.astype(int)
    assert np.abs(diff).max() <= 12 and diff.std() > 0.5


@pytest.mark.parametrize("seed", range(5))
def test_two_layer_scene_valid(seed):
    for slant in (0.0, 0.2):
        spec = two_layer_scene(seed, slant=slant)
        r = render(spec)
        assert r.gt.valid.all() and r.gt.values.max() < spec.d_max
        assert len(spec.layers) == 2


def test_text_roundtrip():
    spec = two_layer_scene(5, slant=0.2)
    text = format_scene(spec)
    back = parse_scene(text)
    assert back == spec
    assert format_scene(back) == text


def test_parse_defaults():
    spec = parse_scene("[scene]\nwidth = 20\nheight = 10\nd_max = 8\n\n[layer.0]\ndisparity = 2\n")
    assert spec.layers[0].rect is None and spec.layers[0].texture == "random"


@pytest.mark.parametrize("spec", [
    SceneSpec(10, 10, 8, []),
    SceneSpec(10, 10, 8, [Layer(None, 8)]),
    SceneSpec(10, 10, 8, [Layer(None, 2.5)]),
    SceneSpec(10, 10, 8, [Layer(None, 1, grad_x=1)]),
    SceneSpec(10, 10, 8, [Layer(None, 1, texture="plaid")]),
    SceneSpec(10, 10, 8, [Layer(None, 1)], noise_sigma=-1),
])
def test_invalid_specs(spec):
    with pytest.raises(ValueError):
        render(spec)


def test_parse_missing_scene():
    with pytest.raises(ValueError):
        parse_scene("[layer.0]\ndisparity = 1\n")
