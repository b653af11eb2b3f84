import numpy as np
import pytest

from rm3d import tensorio
from rm3d.denoiser import (DenoiserSpec, _Engine, group_count, init_weights, load_denoiser,
                           time_embedding)


def unet_spec(cond=4, mode="film"):
    return DenoiserSpec(
        in_channels=1 + cond, out_channels=1, cond_channels=cond, cond_mode=mode,
        time_dim=16,
        layers=[
            ("conv", 1 + cond, 8, 3),
            ("push",),
            ("resblock", 8, 8),
            ("down", 8, 16),
            ("resblock", 16, 16),
            ("up", 16, 8),
            ("cat",),
            ("conv", 16, 8, 3),
            ("resblock", 8, 8),
            ("groupnorm", 8),
            ("silu",),
            ("conv", 8, 1, 3),
        ],
    )


class TestDescriptor:
    def test_round_trip(self):
        spec = unet_spec()
        text = spec.to_text()
        back = DenoiserSpec.parse(text)
        assert back == spec
        assert back.to_text() == text

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown layer kind"):
            DenoiserSpec.parse("format rm3d-denoiser/1\nin_channels 1\nout_channels 1\n"
                               "layer warp 1 1\n")

    def test_wrong_format_tag(self):
        with pytest.raises(ValueError, match="format"):
            DenoiserSpec.parse("format other/9\nin_channels 1\nout_channels 1\n")

    def test_channel_mismatch_names_layer(self):
        spec = unet_spec()
        spec.layers[3] = ("down", 9, 16)
        with pytest.raises(ValueError, match="layer 3"):
            spec.validate()

    def test_unbalanced_push_rejected(self):
        spec = DenoiserSpec(1, 1, layers=[("push",), ("conv", 1, 1, 3)])
        with pytest.raises(ValueError, match="unconsumed"):
            spec.validate()

    def test_cat_without_push_rejected(self):
        spec = DenoiserSpec(1, 1, layers=[("cat",), ("conv", 2, 1, 3)])
        with pytest.raises(ValueError, match="skip stack"):
            spec.validate()

    def test_final_channels_checked(self):
        spec = DenoiserSpec(1, 2, layers=[("conv", 1, 1, 3)])
        with pytest.raises(ValueError, match="ends with 1"):
            spec.validate()


class TestEngineOps:
    def test_identity_conv(self):
        spec = DenoiserSpec(1, 1, layers=[("conv", 1, 1, 1)])
        w = {"layers.0.weight": np.ones((1, 1, 1, 1, 1), dtype=np.float32),
             "layers.0.bias": np.zeros(1, dtype=np.float32)}
        eng = _Engine(spec, w)
        x = np.random.default_rng(0).standard_normal((1, 4, 5, 3)).astype(np.float32)
        assert np.array_equal(eng.forward(x, 0.0, None), x)

    def test_conv_same_padding_shapes(self):
        spec = DenoiserSpec(2, 3, layers=[("conv", 2, 3, 3)])
        eng = _Engine(spec, init_weights(spec, seed=1))
        out = eng.forward(np.zeros((2, 6, 5, 4), dtype=np.float32), 0.0, None)
        assert out.shape == (3, 6, 5, 4)

    def test_group_count_rule(self):
        assert group_count(8) == 8
        assert group_count(16) == 8
        assert group_count(6) == 1

    def test_groupnorm_normalizes(self):
        spec = DenoiserSpec(8, 8, layers=[("groupnorm", 8)])
        eng = _Engine(spec, init_weights(spec, seed=0))
        x = np.random.default_rng(2).standard_normal((8, 4, 4, 2)).astype(np.float32) * 5 + 3
        out = eng.forward(x, 0.0, None)
        assert abs(float(out.mean())) < 1e-3
        assert float(out.std()) == pytest.approx(1.0, abs=0.01)

    def test_down_up_shapes(self):
        spec = DenoiserSpec(4, 4, layers=[("down", 4, 4), ("up", 4, 4)])
        eng = _Engine(spec, init_weights(spec, seed=3))
        out = eng.forward(np.zeros((4, 8, 8, 4), dtype=np.float32), 0.0, None)
        assert out.shape == (4, 8, 8, 4)

    def test_missing_weight_named(self):
        spec = DenoiserSpec(1, 1, layers=[("conv", 1, 1, 3)])
        with pytest.raises(ValueError, match="layers.0.weight"):
            _Engine(spec, {})

    def test_wrong_shape_named(self):
        spec = DenoiserSpec(1, 1, layers=[("conv", 1, 1, 3)])
        w = {"layers.0.weight": np.zeros((1, 1, 5, 5, 5), dtype=np.float32),
             "layers.0.bias": np.zeros(1, dtype=np.float32)}
        with pytest.raises(ValueError, match="layers.0.weight"):
            _Engine(spec, w)


class TestTimeEmbedding:
    def test_shape_and_range(self):
        emb = time_embedding(500.0, 16)
        assert emb.shape == (16,)
        assert np.all(np.abs(emb) <= 1.0)

    def test_distinct_timesteps_distinct_embeddings(self):
        assert not np.allclose(time_embedding(1.0, 32), time_embedding(999.0, 32))

    def test_odd_dim_padded(self):
        emb = time_embedding(3.0, 7)
        assert emb.shape == (7,) and emb[-1] == 0.0


class TestFullForward:
    def test_unet_output_shape(self):
        spec = unet_spec()
        eng = _Engine(spec, init_weights(spec, seed=4))
        x = np.random.default_rng(5).standard_normal((5, 8, 8, 4)).astype(np.float32)
        cond = x[1:]
        out = eng.forward(x, 500.0, cond)
        assert out.shape == (1, 8, 8, 4)
        assert np.all(np.isfinite(out))

    def test_film_conditioning_changes_output(self):
        spec = unet_spec()
        eng = _Engine(spec, init_weights(spec, seed=6))
        x = np.random.default_rng(7).standard_normal((5, 8, 8, 4)).astype(np.float32)
        c1 = np.zeros((4, 8, 8, 4), dtype=np.float32)
        c2 = np.ones((4, 8, 8, 4), dtype=np.float32)
        assert not np.allclose(eng.forward(x, 10.0, c1), eng.forward(x, 10.0, c2))

    def test_time_conditioning_changes_output(self):
        spec = unet_spec()
        eng = _Engine(spec, init_weights(spec, seed=8))
        x = np.random.default_rng(9).standard_normal((5, 8, 8, 4)).astype(np.float32)
        c = np.zeros((4, 8, 8, 4), dtype=np.float32)
        assert not np.allclose(eng.forward(x, 1.0, c), eng.forward(x, 900.0, c))

    def test_xattn_block_runs(self):
        spec = DenoiserSpec(2, 2, cond_channels=3, cond_mode="film", time_dim=0,
                            layers=[("conv", 2, 8, 3), ("xattn", 8, 2), ("conv", 8, 2, 3)])
        eng = _Engine(spec, init_weights(spec, seed=10))
        x = np.random.default_rng(11).standard_normal((2, 6, 6, 2)).astype(np.float32)
        cond = np.random.default_rng(12).standard_normal((3, 6, 6, 2)).astype(np.float32)
        out = eng.forward(x, 0.0, cond)
        assert out.shape == (2, 6, 6, 2)
        assert np.all(np.isfinite(out))


class TestLoadDenoiser:
    def write_pair(self, tmp_path, spec, weights):
        spec_file = tmp_path / "denoiser.txt"
        weights_file = tmp_path / "weights.rm3d"
        spec_file.write_text(spec.to_text(), encoding="ascii")
        tensorio.save_records(weights_file, weights)
        return spec_file, weights_file

    def test_identity_network(self, tmp_path):
        spec = DenoiserSpec(1, 1, layers=[("conv", 1, 1, 1)])
        w = {"layers.0.weight": np.ones((1, 1, 1, 1, 1), dtype=np.float32),
             "layers.0.bias": np.zeros(1, dtype=np.float32)}
        den = load_denoiser(*self.write_pair(tmp_path, spec, w))
        x = np.random.default_rng(13).standard_normal((6, 6, 2, 1))
        assert np.allclose(den(x, 100), x, atol=1e-6)

    def test_volume_layout_round_trip(self, tmp_path):
        spec = unet_spec()
        den = load_denoiser(*self.write_pair(tmp_path, spec, init_weights(spec, seed=14)))
        x = np.random.default_rng(15).standard_normal((8, 8, 4, 1))
        cond = np.random.default_rng(16).uniform(0, 1, (8, 8, 4, 4))
        out = den(x, 500, cond)
        assert out.shape == x.shape
        assert out.dtype == np.float64

    def test_corrupted_weights_name_layer(self, tmp_path):
        spec = unet_spec()
        w = init_weights(spec, seed=17)
        w["layers.3.weight"] = w["layers.3.weight"][:, :-1]
        with pytest.raises(ValueError, match="layers.3.weight"):
            load_denoiser(*self.write_pair(tmp_path, spec, w))

    def test_missing_condition_rejected(self, tmp_path):
        spec = unet_spec()
        den = load_denoiser(*self.write_pair(tmp_path, spec, init_weights(spec, seed=18)))
        with pytest.raises(ValueError, match="condition"):
            den(np.zeros((8, 8, 4, 1)), 10, None)

    def test_wrong_input_channels_rejected(self, tmp_path):
        spec = unet_spec()
        den = load_denoiser(*self.write_pair(tmp_path, spec, init_weights(spec, seed=19)))
        with pytest.raises(ValueError, match="expected"):
            den(np.zeros((8, 8, 4, 2)), 10, np.zeros((8, 8, 4, 4)))
