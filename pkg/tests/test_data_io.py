import filecmp
import os

import numpy as np
import pytest

from tv3s import tvt
from tv3s.checkpoint import load_checkpoint, save_checkpoint
from tv3s.config import load_config, parse_config_text
from tv3s.data import SynthSpec, gen_synthetic, generate, load_dataset, read_index
from tv3s.decoder import TV3S, DecoderConfig
from tv3s.errors import ConfigError, FormatError
from tv3s.inference import replay_check, stream_logits
from tv3s.metrics import mvc

SMALL = dict(num_videos=2, frames_per_video=5, height=32, width=32, size_min=4, size_max=10)


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files:
        return False
    files = [f for f in os.listdir(a) if os.path.isfile(os.path.join(a, f))]
    if filecmp.cmpfiles(a, b, files, shallow=False)[1:] != ([], []):
        return False
    return all(same_tree(os.path.join(a, d), os.path.join(b, d)) for d in cmp.common_dirs)


class TestSynthetic:
    def test_deterministic_on_disk(self, tmp_path):
        spec = SynthSpec(seed=5, occlusion=True, **SMALL)
        gen_synthetic(spec, tmp_path / "a")
        gen_synthetic(spec, tmp_path / "b")
        assert same_tree(tmp_path / "a", tmp_path / "b")

    def test_seed_changes_data(self):
        a = generate(SynthSpec(seed=1, **SMALL))
        b = generate(SynthSpec(seed=2, **SMALL))
        assert not np.array_equal(a[0].frames[0], b[0].frames[0])

    def test_static_scene_is_perfectly_consistent(self):
        vids = generate(SynthSpec(seed=0, speed_max=0.0, noise=0.0, **SMALL))
        for v in vids:
            assert all(np.array_equal(f, v.frames[0]) for f in v.frames)
        assert mvc([(v.masks, v.masks) for v in vids], 4) == 1.0

    @pytest.mark.parametrize("size", [3, 7, 12])
    def test_rect_area(self, size):
        spec = SynthSpec(seed=0, shapes="rect", objects=1, num_classes=2, size_min=size, size_max=size,
                         num_videos=1, frames_per_video=3, height=32, width=32)
        for m in generate(spec)[0].masks:
            assert int((m == 1).sum()) == size * size

    def test_frames_in_unit_range(self):
        v = generate(SynthSpec(seed=0, **SMALL))[0]
        assert all(f.dtype == np.float32 and f.min() >= 0 and f.max() <= 1 for f in v.frames)

    def test_flicker_hides_colour_not_label(self):
        spec = SynthSpec(**{**SMALL, "num_videos": 1, "seed": 3, "occlusion": True, "flicker_prob": 1.0,
                            "noise": 0.0, "objects": 1})
        v = generate(spec)[0]
        cls = v.masks[0].max()
        first = v.frames[0][:, v.masks[0] == cls]
        later = v.frames[2][:, v.masks[2] == cls]
        assert not np.allclose(first[:, 0], later[:, 0])
        np.testing.assert_allclose(later, 0.6)

    @pytest.mark.parametrize("bad", [dict(size_max=40), dict(num_classes=1), dict(shapes="star")])
    def test_bad_generator_settings(self, bad):
        with pytest.raises(ConfigError):
            SynthSpec(**{**SMALL, **bad})

    def test_index_and_reload(self, tmp_path):
        vids = gen_synthetic(SynthSpec(seed=0, **SMALL), tmp_path)
        entries = read_index(tmp_path)
        assert entries[0] == {"id": "v0000", "frames": 5, "h": 32, "w": 32}
        back = load_dataset(tmp_path)
        for a, b in zip(vids, back):
            assert all(np.array_equal(x, y) for x, y in zip(a.frames, b.frames))
            assert all(np.array_equal(x, y) for x, y in zip(a.masks, b.masks))

    def test_missing_dataset_names_path(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="index.txt"):
            load_dataset(tmp_path / "absent")

    def test_malformed_index(self, tmp_path):
        (tmp_path / "index.txt").write_text("id=v frames=x\n")
        with pytest.raises(FormatError):
            read_index(tmp_path)


class TestCheckpoint:
    def model(self, **kw):
        return TV3S(DecoderConfig(**{"blocks": 1, "window": 4, "embed": 8, "n_state": 4, **kw}))

    def test_roundtrip_bitwise(self, tmp_path, rng):
        m = self.model(seed=4)
        save_checkpoint(m, tmp_path / "ck")
        back = load_checkpoint(tmp_path / "ck")
        assert back.cfg == m.cfg
        for p, q in zip(m.params(), back.params()):
            assert p.data.tobytes() == q.data.tobytes()
        f = rng.uniform(size=(3, 16, 16)).astype(np.float32)
        a = m.forward_frame(f, m.new_store(16, 16)).data
        b = back.forward_frame(f, back.new_store(16, 16)).data
        assert a.tobytes() == b.tobytes()

    def test_refuses_other_config(self, tmp_path):
        save_checkpoint(self.model(), tmp_path / "ck")
        with pytest.raises(ConfigError, match="embed: checkpoint 8 != requested 12.*enc.W_embed"):
            load_checkpoint(tmp_path / "ck", expect=self.model(embed=12).cfg)

    def test_corrupt_tensor(self, tmp_path):
        save_checkpoint(self.model(), tmp_path / "ck")
        path = tmp_path / "ck" / "head.W.tvt"
        path.write_bytes(b"JUNK" + path.read_bytes()[4:])
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(tmp_path / "ck")

    def test_missing_checkpoint_names_path(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="manifest"):
            load_checkpoint(tmp_path / "nowhere")


class TestStreaming:
    def test_replay_bitwise(self, rng):
        m = TV3S(DecoderConfig(blocks=2, window=4, embed=8, n_state=4))
        frames = [rng.uniform(size=(3, 32, 32)).astype(np.float32) for _ in range(4)]
        assert replay_check(m, frames)

    def test_reset_every_one_is_stateless(self, rng):
        m = TV3S(DecoderConfig(blocks=1, window=4, embed=8, n_state=4))
        frames = [rng.uniform(size=(3, 16, 16)).astype(np.float32) for _ in range(3)]
        out = stream_logits(m, frames, reset_every=1)
        for f, lg in zip(frames, out):
            assert np.array_equal(lg, m.forward_frame(f, m.new_store(16, 16)).data)


class TestConfigFiles:
    def test_parse(self):
        cfg = parse_config_text("# comment\nmodel.window = 8  # trailing\n\ntrain.lam=0.3\n")
        assert cfg["model"] == {"window": "8"} and cfg["train"] == {"lam": "0.3"}

    @pytest.mark.parametrize("text", ["window = 8", "model.window 8", "other.x = 1"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_config_text(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="cfg.txt"):
            load_config(tmp_path / "cfg.txt")


def test_masks_persist_as_float_labels(tmp_path):
    gen_synthetic(SynthSpec(seed=0, **SMALL), tmp_path)
    raw = tvt.load(tmp_path / "v0000" / "mask_0000.tvt")
    assert raw.dtype == np.float32 and set(np.unique(raw)) <= {0.0, 1.0, 2.0}
