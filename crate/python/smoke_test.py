"""Smoke test for the `mtrl` extension module.

Build and install first:

    pip install --no-build-isolation ./crates/py
    python python/smoke_test.py
"""

import json
import math
import random
import sys
import tempfile
from pathlib import Path

import mtrl


def rand_image(rng, n, c, h, w):
    return [rng.random() for _ in range(n * c * h * w)], (n, c, h, w)


def main():
    rng = random.Random(0)
    x, shape = rand_image(rng, 1, 3, 16, 16)

    packed, pshape = mtrl.wt_forward(x, shape)
    assert pshape == (1, 12, 8, 8), pshape
    back, bshape = mtrl.wt_inverse(packed, pshape)
    assert bshape == shape
    assert max(abs(a - b) for a, b in zip(back, x)) < 1e-5

    y, yshape = mtrl.degrade(x, shape, ops=["light", "blur"], seed=3)
    assert yshape == shape
    assert all(0.0 <= v <= 1.0 for v in y)
    assert mtrl.degrade(x, shape, ops=["light", "blur"], seed=3)[0] == y
    spec = json.dumps({"ops": [{"op": "cataract"}], "seed": 1})
    mtrl.degrade(x, shape, spec_json=spec)
    try:
        mtrl.degrade(x, shape, ops=["fog"])
    except ValueError:
        pass
    else:
        raise AssertionError("unknown op accepted")

    assert abs(mtrl.ssim(x, x, shape) - 1.0) < 1e-9
    assert math.isinf(mtrl.psnr(x, x, shape))
    assert mtrl.psnr(x, y, shape) > 0.0

    r = mtrl.paired_tests([1.0, 2.0, 3.5, 4.0, 6.0], [0.9, 2.3, 3.0, 3.2, 4.0])
    assert r["n"] == 5 and r["w_method"] == "exact", r
    assert 0.0 < r["t_p"] < 1.0

    assert mtrl.param_count() > 0
    big = json.dumps({"levels": 4, "base_channels": 8, "groups": 4, "reduction": 4,
                      "lambda": 0.67, "highpass_sigma": 2.0, "seed": 0})
    assert mtrl.param_count(big) > mtrl.param_count()

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        data = tmp / "hq"
        data.mkdir()
        for i in range(2):
            img, s = rand_image(rng, 1, 3, 16, 16)
            mtrl.save_image(img, s, str(data / f"eye{i}.png"))
        model = tmp / "model.json"
        model.write_text(json.dumps({"levels": 2, "base_channels": 4, "groups": 2, "reduction": 2,
                                     "lambda": 0.67, "highpass_sigma": 2.0, "seed": 1}))
        train = tmp / "train.json"
        train.write_text(json.dumps({"epochs": 1, "batch_size": 2, "decay_window": 1, "image_size": 16}))
        ckpt = tmp / "m.ckpt"
        code = mtrl.cli(["train", "--data", str(data), "--model-config", str(model),
                         "--train-config", str(train), "--out", str(ckpt)])
        assert code == 0, code

        enh = mtrl.Enhancer(str(ckpt))
        img, s = mtrl.load_image(str(data / "eye0.png"))
        out, oshape = enh.enhance(img, s)
        assert oshape == s and all(0.0 < v < 1.0 for v in out)
        (hf, hs), (rest, rs) = enh.forward(img, s)
        assert hs == rs == s
        assert enh.param_count == mtrl.param_count(model.read_text())

        assert mtrl.cli(["enhance", "--frobnicate"]) == 1

    print("smoke test ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
