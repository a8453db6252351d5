"""Exercise the Python bindings end to end on toy data."""

import json
import os
import tempfile

import numpy as np

import gpvd


def main():
    clip = gpvd.synthetic_clip(5, 32, 32, seed=1)
    assert clip.shape == (5, 3, 32, 32) and clip.dtype == np.float64

    ycc = gpvd.rgb_to_ycbcr(clip)
    assert np.abs(gpvd.ycbcr_to_rgb(ycc) - clip).max() < 1e-9

    noisy, record = gpvd.degrade(clip, severity=2.0, seed=3)
    again, _ = gpvd.degrade(clip, severity=2.0, seed=3)
    assert np.array_equal(noisy, again)
    assert 0.0 <= noisy.min() and noisy.max() <= 1.0
    json.loads(record)

    mid = clip.shape[0] // 2
    print(f"input PSNR {gpvd.psnr(noisy[mid], clip[mid]):.2f} dB, SSIM {gpvd.ssim(noisy[mid], clip[mid]):.3f}")
    assert gpvd.psnr(clip[mid], clip[mid]) >= 99.0
    assert gpvd.charbonnier(clip[mid], clip[mid]) < 2e-3

    tiles = gpvd.tile_plan(1216, 1216, 640, 64)
    assert len(tiles) == 4, tiles
    assert len(gpvd.variants()) == 8

    small = ["model.base_width=4", "model.stem_width=4", "model.head_hidden=4", "model.global_dim=4", "model.cue_channels=8"]
    model = gpvd.Model(small, seed=0)
    print(model)
    frame, log_var = model.forward(noisy)
    assert frame.shape == (3, 32, 32) and log_var.shape == (32, 32)
    tiled = model.restore_frame(noisy, tile=32, overlap=8)
    assert tiled.shape == frame.shape
    assert model.restore(noisy, tile=32, overlap=8).shape == noisy.shape

    before = model.loss(noisy, clip)["total"]
    history = model.train(
        [clip],
        ["train.epochs=1", "train.warmup_epochs=0", "train.steps_per_epoch=3", "train.batch=1", "train.patch=32"],
    )
    assert len(history) == 3 and all(np.isfinite(h["loss"]) for h in history)
    print(f"loss {before:.4f} -> {model.loss(noisy, clip)['total']:.4f}")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.ckpt")
        model.save(path)
        loaded = gpvd.Model.load(path)
        assert loaded.census() == model.census()
        assert np.array_equal(loaded.forward(noisy)[0], model.forward(noisy)[0])
        try:
            gpvd.Model.load(os.path.join(d, "missing.ckpt"))
        except OSError as e:
            assert "missing.ckpt" in str(e)
        else:
            raise AssertionError("loading a missing checkpoint should fail")

    try:
        gpvd.Model(["model.base_widht=4"])
    except ValueError as e:
        assert "model.base_width" in str(e)
    else:
        raise AssertionError("unknown key should be rejected")

    print("smoke test passed")


if __name__ == "__main__":
    main()
