import numpy as np
import pytest

from hrcount.render import ANCHORS, colormap, load_gray, overlay, save_png, upscale_nearest


def test_colormap_anchors_and_midpoints():
    np.testing.assert_array_equal(colormap(np.array([0.0, 0.25, 0.5, 0.75, 1.0])), ANCHORS)
    np.testing.assert_allclose(colormap(np.array([0.125])), [[0, 127.5, 255]])
    np.testing.assert_array_equal(colormap(np.array([-1.0, 2.0])), ANCHORS[[0, -1]])


def test_upscale_nearest():
    m = np.array([[1, 2], [3, 4]])
    np.testing.assert_array_equal(upscale_nearest(m, 2),
                                  [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])


def test_overlay_blends_half_and_half():
    gray = np.full((4, 4), 100 / 255)
    heat = np.array([[0.0, 1.0], [0.5, 0.0]])
    out = overlay(gray, heat, 2)
    assert out.shape == (4, 4, 3) and out.dtype == np.uint8
    np.testing.assert_array_equal(out[0, 0], [50, 50, 178])   # 0.5*100 + 0.5*(0, 0, 255)
    np.testing.assert_array_equal(out[0, 3], [178, 50, 50])
    np.testing.assert_array_equal(out[3, 0], [50, 178, 50])


def test_overlay_rejects_misaligned_map():
    with pytest.raises(ValueError):
        overlay(np.zeros((8, 8)), np.zeros((3, 3)), 2)


def test_png_round_trip(tmp_path):
    rgb = np.random.default_rng(0).integers(0, 256, (6, 5, 3), dtype=np.uint8)
    save_png(rgb, tmp_path / "x.png")
    from PIL import Image
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "x.png")), rgb)
    g = load_gray(tmp_path / "x.png")
    assert g.shape == (6, 5) and 0 <= g.min() and g.max() <= 1
