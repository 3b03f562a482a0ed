import numpy as np
import pytest

from dconad import tensor as tn
from dconad.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from dconad.config import preset
from dconad.data import Normalizer, make_windows
from dconad.errors import CheckpointError, ConfigError, DimensionError
from dconad.model import (
    DetectorParams,
    EncoderConfig,
    EncoderParams,
    embed,
    encode,
    fuse,
    rel_block,
    time_block,
)
from dconad.tensor import Tape, Tensor


def _enc(seq_len=6, **kw):
    cfg = EncoderConfig(**{"d_in": 3, "window": seq_len, "d_model": 4, **kw})
    return EncoderParams.init(cfg, seq_len, np.random.default_rng(0))


class TestConfig:
    def test_both_blocks_disabled(self):
        with pytest.raises(ConfigError):
            EncoderConfig(d_in=3, window=8, enable_time_block=False, enable_rel_block=False)

    def test_heads_must_divide(self):
        with pytest.raises(ConfigError):
            EncoderConfig(d_in=3, window=8, d_model=10, n_heads=3)


class TestEmbed:
    def test_zero_window_gives_positional_table(self):
        p = _enc()
        out = embed(np.zeros((6, 3)), p)
        assert np.array_equal(out.data, p.positional)

    def test_zero_window_with_zero_positions(self):
        p = _enc()
        p.positional = np.zeros_like(p.positional)
        assert np.array_equal(embed(np.zeros((6, 3)), p).data, np.zeros((6, 4)))

    def test_msl_shape(self):
        cfg = EncoderConfig(d_in=55, window=90, d_model=256)
        p = EncoderParams.init(cfg, 90, np.random.default_rng(0))
        assert embed(np.zeros((90, 55)), p).shape == (90, 256)

    def test_identical_windows(self):
        p = _enc()
        w = np.random.default_rng(1).normal(size=(6, 3))
        assert np.array_equal(embed(w, p).data, embed(w.copy(), p).data)

    def test_variable_count_checked(self):
        with pytest.raises(DimensionError):
            embed(np.zeros((6, 2)), _enc())


class TestBlocks:
    def test_time_block_shape_and_attention_rows(self):
        p = _enc()
        trace = {}
        H = Tensor(np.random.default_rng(2).normal(size=(6, 4)))
        assert time_block(H, p, 0, trace).shape == (6, 4)
        (attn,) = trace["layer0.time.attn"]
        assert attn.shape == (6, 6)
        assert np.all(np.abs(attn.sum(-1) - 1) < 1e-9)

    def test_time_block_degenerate_weights(self):
        p = _enc()
        for name, t in p.tensors.items():
            if name.startswith("layer0.time.") and ".ln" not in name:
                t.data[...] = 0.0
        H = Tensor(np.random.default_rng(3).normal(size=(6, 4)))
        ln1, ln2 = (p["layer0.time.ln1.gain"], p["layer0.time.ln1.bias"]), (p["layer0.time.ln2.gain"], p["layer0.time.ln2.bias"])
        expected = tn.layer_norm(tn.layer_norm(H, *ln1), *ln2)
        assert np.allclose(time_block(H, p).data, expected.data, atol=1e-12)

    def test_multi_head_rows(self):
        p = _enc(n_heads=2)
        trace = {}
        time_block(Tensor(np.random.default_rng(4).normal(size=(6, 4))), p, 0, trace)
        assert len(trace["layer0.time.attn"]) == 2
        assert all(np.all(np.abs(a.sum(-1) - 1) < 1e-9) for a in trace["layer0.time.attn"])

    def test_rel_block_shapes(self):
        # 4 timestamps x 3 channels: attention is over the 3 channel tokens
        cfg = EncoderConfig(d_in=2, window=4, d_model=3)
        p = EncoderParams.init(cfg, 4, np.random.default_rng(5))
        trace = {}
        out = rel_block(Tensor(np.random.default_rng(6).normal(size=(4, 3))), p, 0, trace)
        assert out.shape == (4, 3)
        (attn,) = trace["layer0.rel.attn"]
        assert attn.shape == (3, 3)
        assert np.all(np.abs(attn.sum(-1) - 1) < 1e-9)
        assert p["layer0.rel.q.w"].shape == (4, 4)
        assert p["layer0.rel.ln1.gain"].shape == (4,)

    def test_fuse_shapes(self):
        p = _enc()
        rng = np.random.default_rng(7)
        a, b = Tensor(rng.normal(size=(6, 4))), Tensor(rng.normal(size=(6, 4)))
        assert p["layer0.fuse.ln1.gain"].shape == (8,)
        assert p["layer0.fuse.ff1.w"].shape[0] == 8
        assert fuse(a, b, p).shape == (6, 4)

    def test_fuse_not_symmetric(self):
        p = _enc()
        rng = np.random.default_rng(8)
        a, b = Tensor(rng.normal(size=(6, 4))), Tensor(rng.normal(size=(6, 4)))
        assert not np.allclose(fuse(a, b, p).data, fuse(b, a, p).data)

    def test_fuse_shape_mismatch(self):
        p = _enc()
        with pytest.raises(DimensionError):
            fuse(Tensor(np.ones((6, 4))), Tensor(np.ones((5, 4))), p)


class TestEncode:
    def _batch(self, L=8, d=3, n=2, seed=0):
        x = np.random.default_rng(seed).normal(size=(L * n + 5, d))
        return make_windows(x, L, L)

    def test_msl_preset_shapes(self):
        cfg = preset("msl").encoder_config(55)
        params = DetectorParams.init(cfg, seed=0, with_views=False)
        x = np.random.default_rng(0).normal(size=(90, 55))
        H_t, H_d = encode(make_windows(x, 90, 90), params)
        assert H_t.shape == (1, 90, 256)
        assert H_d.shape == (1, 89, 256)

    def test_relation_projection_follows_stream_length(self):
        params = DetectorParams.init(EncoderConfig(d_in=3, window=8, d_model=4), 0)
        assert params.enc_orig["layer0.rel.q.w"].shape == (8, 8)
        assert params.enc_diff["layer0.rel.q.w"].shape == (7, 7)

    def test_layers_preserve_shape(self):
        params = DetectorParams.init(EncoderConfig(d_in=3, window=8, d_model=4, n_layers=3), 0)
        H_t, H_d = encode(self._batch(), params)
        assert H_t.shape == (2, 8, 4) and H_d.shape == (2, 7, 4)

    def test_all_attention_rows_are_distributions(self):
        params = DetectorParams.init(EncoderConfig(d_in=3, window=8, d_model=4, n_layers=2), 0)
        trace = {}
        encode(self._batch(), params, trace)
        assert {k.split(".", 1)[1] for k in trace} == {"time.attn", "rel.attn"}
        for mats in trace.values():
            for a in mats:
                assert np.all(np.abs(a.sum(-1) - 1) < 1e-9)

    def test_deterministic(self):
        cfg = EncoderConfig(d_in=3, window=8, d_model=4)
        a = encode(self._batch(), DetectorParams.init(cfg, 3))
        b = encode(self._batch(), DetectorParams.init(cfg, 3))
        assert a[0].data.tobytes() == b[0].data.tobytes()
        assert a[1].data.tobytes() == b[1].data.tobytes()

    @pytest.mark.parametrize("flag,absent", [("enable_rel_block", ".rel."), ("enable_time_block", ".time.")])
    def test_disabled_block_has_no_parameters(self, flag, absent):
        cfg = EncoderConfig(d_in=3, window=8, d_model=4, **{flag: False})
        params = DetectorParams.init(cfg, 0)
        names = [n for n, _ in params.named_parameters()]
        assert not any(absent in n for n in names)
        assert params.enc_orig["layer0.fuse.ln1.gain"].shape == (4,)
        with Tape() as tape:
            H_t, H_d = encode(self._batch(), params)
            tn.backward(tn.add(tn.sum(H_t), tn.sum(H_d)))
        on_tape = {id(i) for node in tape.nodes for i in node.inputs}
        for name, t in params.named_parameters():
            if name.startswith("views."):
                continue
            assert id(t) in on_tape, name

    def test_rel_only_variant_runs(self):
        cfg = EncoderConfig(d_in=3, window=8, d_model=4, enable_time_block=False)
        H_t, H_d = encode(self._batch(), DetectorParams.init(cfg, 0))
        assert H_t.shape == (2, 8, 4)


class TestCheckpoint:
    def _model(self):
        cfg = EncoderConfig(d_in=3, window=6, d_model=4)
        params = DetectorParams.init(cfg, 1)
        norm = Normalizer.fit(np.random.default_rng(0).normal(size=(50, 3)))
        return params, norm

    def test_round_trip(self, tmp_path):
        params, norm = self._model()
        save_checkpoint(tmp_path / "c.bin", params, norm, {"seed": 1})
        loaded, norm2, run = load_checkpoint(tmp_path / "c.bin")
        assert run == {"seed": 1}
        for (n1, a), (n2, b) in zip(params.named_parameters(), loaded.named_parameters()):
            assert n1 == n2 and a.data.tobytes() == b.data.tobytes()
        assert np.array_equal(norm.mean, norm2.mean)

    def test_bytes_deterministic(self):
        a = checkpoint_bytes(*self._model(), {"seed": 1})
        b = checkpoint_bytes(*self._model(), {"seed": 1})
        assert a == b

    def test_version_mismatch_rejected(self, tmp_path):
        params, norm = self._model()
        raw = checkpoint_bytes(params, norm, {}).replace(b'"format_version": 1', b'"format_version": 9')
        (tmp_path / "c.bin").write_bytes(raw)
        with pytest.raises(CheckpointError, match="format_version"):
            load_checkpoint(tmp_path / "c.bin")

    def test_shape_mismatch_rejected(self, tmp_path):
        params, norm = self._model()
        raw = checkpoint_bytes(params, norm, {}).replace(b'"d_model": 4', b'"d_model": 2', 1)
        (tmp_path / "c.bin").write_bytes(raw)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "c.bin")

    def test_truncated_rejected(self, tmp_path):
        params, norm = self._model()
        (tmp_path / "c.bin").write_bytes(checkpoint_bytes(params, norm, {})[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "c.bin")
