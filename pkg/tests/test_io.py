import json

import numpy as np
import pytest
import torch

from realosr import ValidationError
from realosr.denoiser import RealOSRNet
from realosr.io import file_sha256, load_checkpoint, read_png, save_checkpoint, state_hash, write_json_atomic, write_png


def test_png_8bit_round_trip(tmp_path, rng):
    img = np.round(rng.random((3, 5, 7)) * 255) / 255
    write_png(tmp_path / "a.png", img)
    np.testing.assert_array_equal(read_png(tmp_path / "a.png"), img)


def test_png_16bit_round_trip(tmp_path, rng):
    img = np.round(rng.random((1, 6, 6)) * 65535) / 65535
    write_png(tmp_path / "g.png", img, bits=16)
    np.testing.assert_allclose(read_png(tmp_path / "g.png"), img, atol=1e-12)
    with pytest.raises(ValidationError):
        write_png(tmp_path / "c.png", np.zeros((3, 4, 4)), bits=16)


def test_json_atomic(tmp_path):
    write_json_atomic(tmp_path / "sub" / "m.json", {"b": 1, "a": [1, 2]})
    assert json.loads((tmp_path / "sub" / "m.json").read_text()) == {"a": [1, 2], "b": 1}
    assert not list((tmp_path / "sub").glob(".tmp-*"))


def test_checkpoint_round_trip(tmp_path):
    model = RealOSRNet(view_size=32, width=8, variant="full")
    with torch.no_grad():
        model.embedding.heads["unet_1_conv1"].bias.add_(0.5)
    path = tmp_path / "c.pt"
    save_checkpoint(path, model, extra={"k": 1})
    back, extra = load_checkpoint(path)
    assert extra == {"k": 1}
    assert state_hash(dict(back.state_dict())) == state_hash(dict(model.state_dict()))
    with pytest.raises(ValidationError):
        load_checkpoint(path, variant="tp_baseline")
    before = file_sha256(path)
    load_checkpoint(path)
    assert file_sha256(path) == before


def test_state_hash_order_independent():
    a = {"x": torch.ones(2), "y": torch.zeros(3)}
    b = {"y": torch.zeros(3), "x": torch.ones(2)}
    assert state_hash(a) == state_hash(b)
    assert state_hash(a) != state_hash({"x": torch.ones(2), "y": torch.ones(3)})
