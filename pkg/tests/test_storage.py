import numpy as np
import pytest

from sgim import checkpoint as ckpt
from sgim.config import (RunConfig, config_from_text, config_hash,
                         config_to_text, load_config, stage_seed)
from sgim.encoders import TeacherParams, init_encoder_params
from sgim.errors import ConfigError, UsageError
from sgim.generator import GeneratorFit, init_generator
from sgim.manipulate import init_identity_extractor
from sgim.pgm import read_pgm, write_pgm


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a": rng.standard_normal((3, 4)),
              "b.nested": rng.standard_normal(7),
              "scalarish": np.array(3.25)}
    path = tmp_path / "x.ckpt"
    ckpt.save_checkpoint(path, arrays, "master_seed=9\n", 9)
    loaded, text, seed = ckpt.load_checkpoint(path)
    assert seed == 9
    assert text == "master_seed=9\n"
    assert set(loaded) == set(arrays)
    for k in arrays:
        assert loaded[k].tobytes() == np.ascontiguousarray(arrays[k]).tobytes()
        assert loaded[k].shape == arrays[k].shape
    # a second save of the loaded state is byte-identical
    path2 = tmp_path / "y.ckpt"
    ckpt.save_checkpoint(path2, loaded, text, seed)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTSGIM" + b"\x00" * 32)
    with pytest.raises(UsageError):
        ckpt.load_checkpoint(p)


def test_encoder_and_teacher_array_roundtrip():
    rng = np.random.default_rng(1)
    enc = init_encoder_params(rng, 10, 6, 4)
    back = ckpt.encoder_from_arrays("e", ckpt.encoder_arrays("e", enc))
    for k, v in enc.arrays().items():
        assert np.array_equal(getattr(back, k), v)
    teacher = TeacherParams(text=init_encoder_params(rng, 5, 6, 4),
                            image=init_encoder_params(rng, 8, 6, 4))
    back_t = ckpt.teacher_from_arrays(ckpt.teacher_arrays(teacher))
    assert back_t.text.frozen and back_t.image.frozen
    assert np.array_equal(back_t.image.w2, teacher.image.w2)


def test_generator_array_roundtrip():
    rng = np.random.default_rng(2)
    gen = init_generator(rng, side=4, latent_dim=6)
    fit = GeneratorFit(gen, rng.standard_normal((5, 4, 6)))
    back = ckpt.generator_from_arrays(ckpt.generator_arrays(fit))
    assert back.params.side == 4 and back.params.latent_dim == 6
    assert np.array_equal(back.latents, fit.latents)
    for a, b in zip(back.params.layer_mods, gen.layer_mods):
        assert np.array_equal(a, b)


def test_latent_and_identity_roundtrip():
    rng = np.random.default_rng(3)
    w = rng.standard_normal((8, 32))
    gate = rng.standard_normal(8)
    back_w, back_gate = ckpt.latent_from_arrays(ckpt.latent_arrays(w, gate))
    assert np.array_equal(back_w, w) and np.array_equal(back_gate, gate)
    ident = init_identity_extractor(rng)
    back_i = ckpt.identity_from_arrays(ckpt.identity_arrays(ident))
    assert np.array_equal(back_i.w1, ident.w1)


def test_pgm_roundtrip(tmp_path):
    img = np.random.default_rng(4).standard_normal((8, 8))
    path = tmp_path / "img.pgm"
    write_pgm(path, img)
    pix = read_pgm(path)
    assert pix.shape == (8, 8)
    assert pix.min() == 0 and pix.max() == 255
    # ordering preserved under the monotone rescale
    flat_in = img.reshape(-1)
    flat_out = pix.reshape(-1)
    assert flat_out[np.argmax(flat_in)] == 255
    assert flat_out[np.argmin(flat_in)] == 0


def test_pgm_constant_image(tmp_path):
    path = tmp_path / "flat.pgm"
    write_pgm(path, np.full((4, 4), 3.0))
    assert np.all(read_pgm(path) == 0)


def test_pgm_rejects_non_square_flat(tmp_path):
    with pytest.raises(UsageError):
        write_pgm(tmp_path / "x.pgm", np.ones(15))


def test_config_text_roundtrip():
    cfg = RunConfig(master_seed=13, lambda_reg=0.002, use_loss_kl=False,
                    bias_spec={2: 1, 5: 0})
    back = config_from_text(config_to_text(cfg))
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError) as err:
        config_from_text("master_seed=3\nbanana=1\nlambda_reg=zebra\n")
    assert "banana" in str(err.value)
    assert "lambda_reg" in str(err.value)


def test_config_bool_and_bias_parsing():
    cfg = config_from_text("use_loss_kl=false\nadaptive_masking=1\n"
                           "bias_spec=1:0,3:2\n")
    assert cfg.use_loss_kl is False
    assert cfg.adaptive_masking is True
    assert cfg.bias_spec == {1: 0, 3: 2}


def test_load_config_overrides(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("master_seed=5\ntau=0.1\n")
    cfg = load_config(path, ["tau=0.2", "audio_epochs=3"])
    assert cfg.master_seed == 5
    assert cfg.tau == 0.2
    assert cfg.audio_epochs == 3
    with pytest.raises(ConfigError):
        load_config(path, ["notakey=1"])
    with pytest.raises(ConfigError):
        load_config(path, ["justakey"])


def test_stage_seed_offsets_distinct():
    seeds = {stage: stage_seed(7, stage)
             for stage in ("data", "teacher", "audio", "generator", "manip",
                           "eval")}
    assert len(set(seeds.values())) == len(seeds)
    assert seeds["data"] == 108


def test_manifest_from_config_carries_stage_seed():
    cfg = RunConfig(master_seed=21)
    assert cfg.dataset_manifest().seed == stage_seed(21, "data")
