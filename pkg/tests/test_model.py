import pytest
import torch

from taco.errors import ConfigError, DataError, ShapeError
from taco.maem import MaemConfig
from taco.model import (
    ModelConfig, TacoModel, encoder_fingerprint, load_checkpoint, save_checkpoint,
    stage_resolution,
)

SMALL = ModelConfig(widths=(8, 16, 32, 64), proj_dim=32, pred_dim=16)


def test_stage_resolution():
    assert stage_resolution((32, 256), 1) == (16, 128)
    assert stage_resolution((32, 256), 4) == (2, 16)


def test_forward_shapes():
    m = TacoModel(SMALL, MaemConfig(), num_fonts=4)
    x = torch.rand(3, 3, 32, 256)
    f = m.encode(x)
    assert f.shape == (3, 64)
    z = m.project(f)
    assert z.shape == (3, 32) and m.predict_head(z).shape == (3, 32)
    logits = m(x)
    assert {k: v.shape[1] for k, v in logits.items()} == {
        "font": 4, "color": 14, "bold": 2, "italic": 2, "underline": 2, "strike": 2}


def test_wrong_input_shape():
    m = TacoModel(SMALL, MaemConfig(), num_fonts=4)
    with pytest.raises(ShapeError, match="32, 256"):
        m.encode(torch.rand(1, 3, 32, 128))


def test_maem_disabled_is_identity_module():
    m = TacoModel(SMALL, MaemConfig(enabled=False), num_fonts=4)
    assert isinstance(m.encoder.maem, torch.nn.Identity)
    assert m.parameter_counts()["maem"] == 0


@pytest.mark.parametrize("maem", [MaemConfig(insert_stage=5), MaemConfig(patch_size=3),
                                  MaemConfig(num_heads=3)])
def test_invalid_maem_placement(maem):
    with pytest.raises(ConfigError):
        TacoModel(SMALL, maem, num_fonts=4)


def test_checkpoint_roundtrip(tmp_path):
    torch.manual_seed(0)
    m = TacoModel(SMALL, MaemConfig(), num_fonts=4, font_table={i: f"F{i}" for i in range(4)})
    path = save_checkpoint(m, tmp_path / "c.pt", {"stage": "test"})
    back = load_checkpoint(path)
    assert back.font_table == m.font_table
    assert back.checkpoint_extra == {"stage": "test"}
    assert encoder_fingerprint(back) == encoder_fingerprint(m)
    x = torch.rand(2, 3, 32, 256)
    m.eval(), back.eval()
    assert torch.equal(m(x)["font"], back(x)["font"])


def test_bad_checkpoint(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_checkpoint(tmp_path / "missing.pt")
    torch.save({"format": "other"}, tmp_path / "x.pt")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "x.pt")


def test_fingerprint_sensitive_to_any_parameter():
    m = TacoModel(SMALL, MaemConfig(), num_fonts=4)
    before = encoder_fingerprint(m)
    with torch.no_grad():
        m.encoder.maem.v_conv[0].weight[0, 0, 0, 0] += 1e-6
    assert encoder_fingerprint(m) != before
