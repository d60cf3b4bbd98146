import numpy as np
import pytest
import torch
from PIL import Image

from msemcom.config import ConfigError
from msemcom.decoder import BitDecoder, auto_grid, decoder_layout, predict_labels, save_label_png


def test_default_shape():
    dec = BitDecoder(4096, 4, 64, 64, 8, 8)
    assert dec.grid == (64, 8, 8)
    assert dec(torch.randint(0, 2, (2, 4096)).float()).shape == (2, 4, 64, 64)


@pytest.mark.parametrize("lb,grid,hw", [(16, 4, 64), (64, 8, 64), (384, 8, 64), (96, 4, 32), (64, 8, 8)])
def test_supported_grids(lb, grid, hw):
    dec = BitDecoder(lb, 3, hw, hw, grid, grid, 16)
    assert dec(torch.zeros(1, lb)).shape == (1, 3, hw, hw)


def test_not_factorable_fails_at_construction():
    with pytest.raises(ConfigError):
        BitDecoder(100, 4, 64, 64, 8, 8)
    with pytest.raises(ConfigError):
        decoder_layout(64, 6, 6, 64, 64)


def test_auto_grid():
    assert auto_grid(16, 64, 64, 8) == 4
    assert auto_grid(384, 64, 64, 8) == 8
    assert auto_grid(4096, 64, 64, 8) == 8


def test_zero_bits_finite_and_gradient():
    dec = BitDecoder(64, 4, 32, 32, 4, 4, 16)
    assert torch.isfinite(dec.eval()(torch.zeros(1, 64))).all()
    dec.train()
    bits = torch.rand(2, 64, requires_grad=True)
    dec(bits).mean().backward()
    assert torch.isfinite(bits.grad).all() and bits.grad.abs().sum() > 0


def test_wrong_length():
    with pytest.raises(ValueError):
        BitDecoder(64, 4, 32, 32, 4, 4)(torch.zeros(1, 32))


class TestPredict:
    def test_constant(self):
        logits = torch.zeros(1, 5, 3, 3)
        logits[:, 3] = 1.0
        assert torch.equal(predict_labels(logits), torch.full((1, 3, 3), 3))

    def test_tie_goes_low(self):
        logits = torch.zeros(1, 5, 2, 2)
        logits[:, 1] = 2.0
        logits[:, 4] = 2.0
        assert torch.equal(predict_labels(logits), torch.ones(1, 2, 2, dtype=torch.long))

    def test_loop_oracle_and_softmax_invariance(self):
        logits = torch.randn(2, 6, 4, 5)
        pred = predict_labels(logits)
        for b in range(2):
            for i in range(4):
                for j in range(5):
                    col = logits[b, :, i, j].tolist()
                    assert pred[b, i, j].item() == col.index(max(col))
        assert torch.equal(predict_labels(torch.softmax(logits, 1)), pred)


def test_png_export(tmp_path):
    lab = torch.tensor([[0, 1], [2, 3]])
    save_label_png(lab, tmp_path / "p.png")
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "p.png")), lab.numpy())
