import numpy as np
import pytest
import torch

from streamhoi.archive import (
    checkpoint_config_json,
    checkpoint_kind,
    load_estimator,
    load_generator,
    load_segmenter,
    save_generator,
    save_segmenter,
)
from streamhoi.exceptions import ConfigurationError, InvalidStateError
from streamhoi.generation import OnlineMotionGenerator
from streamhoi.perception import OnlineActionSegmenter


@pytest.fixture
def fitted_generator(tiny_motion_pairs, tiny_generator_kwargs):
    return OnlineMotionGenerator(**tiny_generator_kwargs).fit(tiny_motion_pairs)


@pytest.fixture
def fitted_segmenter(tiny_clips, tiny_segmenter_kwargs):
    return OnlineActionSegmenter(**tiny_segmenter_kwargs).fit(tiny_clips)


class TestGeneratorArchive:
    def test_roundtrip_samples_bitwise(
        self, tmp_path, fitted_generator, tiny_motion_pairs
    ):
        path = tmp_path / "gen.npz"
        save_generator(path, fitted_generator, config_json='{"note": 1}')
        loaded = load_generator(path)
        a = fitted_generator.sample(tiny_motion_pairs[:2], seed=4)
        b = loaded.sample(tiny_motion_pairs[:2], seed=4)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.frames, sb.frames)
        assert loaded.get_params() == fitted_generator.get_params()
        assert loaded.loss_history_ == fitted_generator.loss_history_
        assert loaded.steps_done_ == fitted_generator.steps_done_

    def test_resume_through_disk_matches_straight_run(
        self, tmp_path, tiny_motion_pairs, tiny_generator_kwargs
    ):
        straight = OnlineMotionGenerator(
            **dict(tiny_generator_kwargs, train_steps=9)
        ).fit(tiny_motion_pairs)
        partial = OnlineMotionGenerator(
            **dict(tiny_generator_kwargs, train_steps=5)
        ).fit(tiny_motion_pairs)
        path = tmp_path / "partial.npz"
        save_generator(path, partial)
        resumed = load_generator(path, pairs=tiny_motion_pairs)
        resumed.continue_fit(4)
        assert resumed.loss_history_ == straight.loss_history_
        sa = straight.denoiser_.state_dict()
        sb = resumed.denoiser_.state_dict()
        assert all(torch.equal(sa[k], sb[k]) for k in sa)

    def test_loading_without_pairs_cannot_resume(
        self, tmp_path, fitted_generator
    ):
        path = tmp_path / "gen.npz"
        save_generator(path, fitted_generator)
        loaded = load_generator(path)
        with pytest.raises(AttributeError):
            loaded.continue_fit(1)

    def test_config_echo_and_kind(self, tmp_path, fitted_generator):
        path = tmp_path / "gen.npz"
        save_generator(path, fitted_generator, config_json='{"task": "x"}')
        assert checkpoint_kind(path) == "generator"
        assert checkpoint_config_json(path) == '{"task": "x"}'

    def test_unfitted_generator_refuses_to_save(self, tmp_path):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            save_generator(tmp_path / "x.npz", OnlineMotionGenerator())


class TestSegmenterArchive:
    def test_roundtrip_logits_bitwise(self, tmp_path, fitted_segmenter, tiny_clips):
        path = tmp_path / "seg.npz"
        save_segmenter(path, fitted_segmenter)
        loaded = load_segmenter(path)
        a = fitted_segmenter.predict_logits(tiny_clips[:2])
        b = loaded.predict_logits(tiny_clips[:2])
        assert torch.equal(a, b)
        assert loaded.n_classes_ == fitted_segmenter.n_classes_
        assert loaded.get_params() == fitted_segmenter.get_params()

    def test_channels_survive_json_as_tuple(self, tmp_path, fitted_segmenter):
        path = tmp_path / "seg.npz"
        save_segmenter(path, fitted_segmenter)
        loaded = load_segmenter(path)
        assert loaded.channels == tuple(fitted_segmenter.channels)


class TestArchiveSafety:
    def test_kind_cross_check(self, tmp_path, fitted_generator, fitted_segmenter):
        gen_path = tmp_path / "gen.npz"
        seg_path = tmp_path / "seg.npz"
        save_generator(gen_path, fitted_generator)
        save_segmenter(seg_path, fitted_segmenter)
        with pytest.raises(ConfigurationError):
            load_segmenter(gen_path)
        with pytest.raises(ConfigurationError):
            load_generator(seg_path)

    def test_dispatch_by_kind(
        self, tmp_path, fitted_generator, fitted_segmenter
    ):
        gen_path = tmp_path / "gen.npz"
        seg_path = tmp_path / "seg.npz"
        save_generator(gen_path, fitted_generator)
        save_segmenter(seg_path, fitted_segmenter)
        assert isinstance(load_estimator(gen_path), OnlineMotionGenerator)
        assert isinstance(load_estimator(seg_path), OnlineActionSegmenter)

    def test_corrupted_weights_fail_loudly(self, tmp_path, fitted_generator):
        path = tmp_path / "gen.npz"
        save_generator(path, fitted_generator)
        with np.load(path) as npz:
            arrays = {k: npz[k].copy() for k in npz.files}
        weight_keys = [k for k in arrays if k.startswith("weights/")]
        arrays[weight_keys[0]] = arrays[weight_keys[0]] + 1.0
        np.savez(path, **arrays)
        with pytest.raises(InvalidStateError):
            load_generator(path)

    def test_non_checkpoint_file_rejected(self, tmp_path):
        path = tmp_path / "junk.npz"
        np.savez(path, stuff=np.zeros(3))
        with pytest.raises(ConfigurationError):
            load_generator(path)
        with pytest.raises(ConfigurationError):
            checkpoint_kind(path)
