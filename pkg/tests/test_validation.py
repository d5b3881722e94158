import numpy as np
import pytest
import torch
from PIL import Image

from sem_tsr.validation import check_image, check_images, to_float_image


def test_uint8_gray_pil_equivalent():
    gray = (np.arange(40 * 50) % 256).astype(np.uint8).reshape(40, 50)
    rgb = np.repeat(gray[..., None], 3, axis=2)
    a = check_image(rgb)
    assert a.shape == (3, 40, 50) and a.dtype == torch.float32
    assert torch.equal(a, check_image(gray))
    assert torch.equal(a, check_image(Image.fromarray(rgb)))
    assert float(a.min()) == -1.0 and float(a.max()) == pytest.approx(1.0)


@pytest.mark.parametrize("bad", [np.zeros((20, 50, 3), np.uint8), np.zeros((40, 50, 2)), np.full((40, 40, 3), 2.0),
                                 np.full((40, 40, 3), np.nan)])
def test_rejects_bad_images(bad):
    with pytest.raises(ValueError):
        to_float_image(bad)


def test_check_images():
    img = np.zeros((40, 40, 3), np.uint8)
    assert len(check_images(img)) == 1
    assert len(check_images([img, img])) == 2
    with pytest.raises(ValueError):
        check_images([])
