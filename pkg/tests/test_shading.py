import numpy as np
import pytest

from isosr import autodiff as ad
from isosr.errors import ConfigError
from isosr.shading import ShadingParams, rgb8, shade, shade_arrays, write_png


def fields(mask, normal, depth, ao, dtype=np.float32):
    """Assemble (1, 6, H, W) from (H, W)/(3, H, W) maps."""
    arr = np.concatenate([
        np.asarray(mask, dtype=dtype)[None],
        np.asarray(normal, dtype=dtype),
        np.asarray(depth, dtype=dtype)[None],
        np.asarray(ao, dtype=dtype)[None],
    ], axis=0)
    return ad.tensor(arr[None])


def headlight(**kw):
    return ShadingParams(**kw)


class TestShade:
    def test_all_background_when_mask_negative(self):
        h = w = 4
        normal = np.zeros((3, h, w))
        normal[2] = 1.0
        o = fields(np.full((h, w), -1.0), normal, np.zeros((h, w)), np.ones((h, w)))
        params = headlight(c_background=(0.2, 0.4, 0.6))
        c = shade(o, params).data[0]
        for i, v in enumerate((0.2, 0.4, 0.6)):
            assert np.allclose(c[i], v, atol=1e-6)

    def test_frontal_surface_ambient_plus_diffuse(self):
        # n = l = v = (0,0,1), AO = 1, no specular -> c_m * (c_a + c_d)
        h = w = 3
        normal = np.zeros((3, h, w))
        normal[2] = 1.0
        o = fields(np.ones((h, w)), normal, np.full((h, w), 0.5), np.ones((h, w)))
        params = ShadingParams(c_ambient=(0.2, 0.2, 0.2), c_diffuse=(0.5, 0.5, 0.5),
                               c_specular=(0.0, 0.0, 0.0), c_material=(1.0, 0.8, 0.5))
        c = shade(o, params).data[0]
        expect = np.array([1.0, 0.8, 0.5]) * 0.7
        for i in range(3):
            assert np.allclose(c[i], expect[i], atol=1e-6)

    def test_ao_scales_prelerp_color_linearly(self):
        h = w = 2
        normal = np.zeros((3, h, w))
        normal[2] = 1.0
        params = ShadingParams(c_ambient=(0.1, 0.1, 0.1), c_diffuse=(0.4, 0.4, 0.4),
                               c_specular=(0.2, 0.2, 0.2), c_background=(0.0, 0.0, 0.0))
        full = fields(np.ones((h, w)), normal, np.ones((h, w)), np.ones((h, w)))
        half = fields(np.ones((h, w)), normal, np.ones((h, w)), np.full((h, w), 0.5))
        c_full = shade(full, params).data
        c_half = shade(half, params).data
        # with black background, full mask, and coefficients below the
        # clamp, compositing is identity and halving AO halves the color
        assert c_full.max() < 1.0
        assert np.allclose(c_half, 0.5 * c_full, atol=1e-6)

    def test_output_range(self):
        rng = np.random.default_rng(0)
        o = ad.tensor(rng.standard_normal((2, 6, 8, 8)).astype(np.float32) * 3.0)
        c = shade(o, headlight())
        assert c.data.min() >= 0.0 and c.data.max() <= 1.0

    def test_ao_monotonicity(self):
        rng = np.random.default_rng(1)
        base = rng.standard_normal((1, 6, 6, 6)).astype(np.float32)
        base[:, 5] = rng.random((1, 6, 6))
        lower = base.copy()
        lower[:, 5] *= 0.7
        params = ShadingParams(c_background=(0.0, 0.0, 0.0))
        c_hi = shade(ad.tensor(base), params).data
        c_lo = shade(ad.tensor(lower), params).data
        assert np.all(c_lo <= c_hi + 1e-7)

    def test_compositing_endpoints(self):
        h = w = 2
        normal = np.zeros((3, h, w))
        normal[2] = 1.0
        params = ShadingParams(c_background=(0.1, 0.2, 0.3),
                               c_specular=(0.0, 0.0, 0.0))
        solid = shade(fields(np.ones((h, w)), normal, np.ones((h, w)),
                             np.ones((h, w))), params).data
        # mask +1: pure shaded color, no background leak
        cm = np.array(params.c_material)
        expect = np.clip(cm * (np.array(params.c_ambient) + np.array(params.c_diffuse)), 0, 1)
        for i in range(3):
            assert np.allclose(solid[0, i], expect[i], atol=1e-6)

    def test_gradients_flow_to_all_inputs(self):
        rng = np.random.default_rng(2)
        o = ad.tensor(rng.standard_normal((1, 6, 4, 4)).astype(np.float64) * 0.5 + 0.2,
                      requires_grad=True)
        c = shade(o, headlight())
        ad.backward(ad.tsum(ad.mul(c, c)))
        g = o.grad
        assert g is not None
        # mask, normals and ao all receive gradient somewhere
        for ch in (0, 1, 2, 3, 5):
            assert np.abs(g[:, ch]).max() > 0.0, f"channel {ch} got no gradient"

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        base = rng.standard_normal((1, 6, 3, 3)) * 0.4
        base[:, 0] = rng.uniform(-0.8, 0.8, (1, 3, 3))   # mask inside clamp
        base[:, 1:4] += 0.5                              # normals away from zero
        base[:, 5] = rng.uniform(0.2, 0.9, (1, 3, 3))
        params = headlight(c_background=(0.05, 0.05, 0.05))
        target = rng.random((1, 3, 12, 12))[:, :, :3, :3]

        def loss_fn(arr):
            o = ad.tensor(arr, requires_grad=isinstance(arr, np.ndarray) and arr is base,
                          dtype=np.float64)
            c = shade(o, params)
            d = ad.sub(c, ad.tensor(target, dtype=np.float64))
            return ad.tmean(ad.mul(d, d)), o

        loss, o = loss_fn(base)
        ad.backward(loss)
        assert o.grad is not None
        eps = 1e-6
        rng2 = np.random.default_rng(4)
        flat = base.ravel()
        for i in rng2.integers(0, base.size, size=30):
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_fn(base)[0].item()
            flat[i] = orig - eps
            lm = loss_fn(base)[0].item()
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            ana = o.grad.ravel()[int(i)]
            denom = max(abs(num), abs(ana), 1e-6)
            assert abs(num - ana) / denom < 1e-4, f"idx {i}: {ana} vs {num}"

    def test_rejects_non_unit_light(self):
        with pytest.raises(ConfigError):
            ShadingParams(light_dir=(0.0, 0.0, 2.0))


class TestImageIO:
    def test_write_png_roundtrip(self, tmp_path):
        from PIL import Image

        rng = np.random.default_rng(5)
        img = rng.random((3, 8, 6)).astype(np.float32)
        path = tmp_path / "frame.png"
        write_png(path, img)
        back = np.asarray(Image.open(path))
        assert back.shape == (8, 6, 3)
        assert np.array_equal(back, rgb8(img))

    def test_rgb8_quantization(self):
        img = np.zeros((3, 1, 2), dtype=np.float32)
        img[:, 0, 1] = 1.0
        q = rgb8(img)
        assert q.dtype == np.uint8
        assert np.array_equal(q[0, 0], [0, 0, 0])
        assert np.array_equal(q[0, 1], [255, 255, 255])
