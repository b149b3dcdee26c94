import numpy as np
import pytest
from model_fuzz import assert_bitwise_equal, mangle, random_params

from vgsn.model import ModelConfig, init_params
from vgsn.serialization import (
    ChecksumError,
    HeaderError,
    MagicError,
    ModelFormatError,
    SizeMismatchError,
    TruncatedError,
    VersionError,
    load_model,
    read_model,
    save_model,
    write_model,
)


@pytest.fixture(scope="module")
def small_model():
    return save_model(random_params(np.random.default_rng(99)))


def test_roundtrip_fuzz():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p = random_params(rng)
        raw = save_model(p)
        back = load_model(raw)
        assert_bitwise_equal(p, back)
        assert save_model(back) == raw


def test_reference_config_roundtrip():
    p = init_params(ModelConfig(image_size=64, encoder_depth=6, decoder_stages=4), 0)
    assert_bitwise_equal(p, load_model(save_model(p)))


def test_file_helpers(tmp_path, small_model):
    p = load_model(small_model)
    write_model(tmp_path / "m.vgsn", p)
    assert_bitwise_equal(p, read_model(tmp_path / "m.vgsn"))


def test_header_is_readable(small_model):
    head = small_model[: small_model.index(b"\n\n")].decode()
    keys = [line.split("=")[0] for line in head.splitlines()[1:]]
    assert head.startswith("VGSN-MODEL\nversion=1\n")
    assert keys[-2:] == ["param_count", "crc32"]


def test_bad_magic(small_model):
    with pytest.raises(MagicError):
        load_model(b"GGUF" + small_model[4:])


def test_version_mismatch(small_model):
    with pytest.raises(VersionError):
        load_model(small_model.replace(b"version=1\n", b"version=2\n", 1))


@pytest.mark.parametrize("keep", [0, 10, -1, -4, -17])
def test_truncated(small_model, keep):
    with pytest.raises((TruncatedError, MagicError)):
        load_model(small_model[:keep])


def test_trailing_bytes(small_model):
    with pytest.raises(SizeMismatchError):
        load_model(small_model + b"\x00\x00\x00\x00")


def test_header_size_inconsistent_with_blob():
    p = init_params(ModelConfig(image_size=32, encoder_depth=5, decoder_stages=3), 0)
    raw = save_model(p).replace(b"image_h=32\nimage_w=32", b"image_h=256\nimage_w=256", 1)
    with pytest.raises(SizeMismatchError):
        load_model(raw)


def test_checksum(small_model):
    raw = bytearray(small_model)
    raw[-1] ^= 0x01
    with pytest.raises(ChecksumError):
        load_model(bytes(raw))


@pytest.mark.parametrize(
    "old,new",
    [(b"grid=", b"grod="), (b"kind=", b"kind=x"), (b"latent_dim=", b"latent_dim=-"), (b"crc32=", b"crc32=zz")],
)
def test_header_defects(small_model, old, new):
    with pytest.raises(HeaderError):
        load_model(small_model.replace(old, new, 1))


def test_categories_are_distinct():
    cats = {cls.category for cls in (MagicError, VersionError, HeaderError, TruncatedError, SizeMismatchError, ChecksumError)}
    assert len(cats) == 6


def test_corruption_fuzz(small_model):
    """Every mangled stream is rejected with a categorized error or loads to the original."""
    rng = np.random.default_rng(1)
    original = load_model(small_model)
    for i in range(1000):
        raw = mangle(small_model, rng, i)
        try:
            loaded = load_model(raw)
        except ModelFormatError:
            continue
        assert_bitwise_equal(original, loaded)
