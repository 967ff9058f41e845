"""Smoke test for the fogroute Python extension.

Build and install first:  pip install --no-build-isolation -e crates/py
"""

import math
import random
import tempfile
from pathlib import Path

import fogroute


def main():
    rng = random.Random(0)
    w = h = 32
    clear = fogroute.Image(w, h, [rng.random() for _ in range(w * h * 3)])
    depth = [rng.uniform(0.0, 40.0) for _ in range(w * h)]
    t = fogroute.compute_transmission(w, h, depth, 0.06)
    assert min(t) >= fogroute.T_FLOOR

    hazy = fogroute.synthesize_haze(clear, t, 1.0)
    back = fogroute.invert_haze(hazy, t, 1.0)
    err = max(abs(a - b) for a, b in zip(back.to_list(), clear.to_list()))
    assert err < 1e-9, err

    assert fogroute.classify_level(0.1) == "Light"
    assert fogroute.classify_level(1 / 3) == "Medium"
    assert fogroute.classify_level(0.9) == "Heavy"

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        pairs = fogroute.write_scene_set(str(tmp / "scenes"), 3, 32, 32, 1)
        n = fogroute.generate_dataset(str(pairs), str(tmp / "data"), 7, meters_per_unit=1.0, airlight=1.0)
        assert n == 9
        manifest = str(tmp / "data" / "manifest.json")

        state = fogroute.train(manifest, manifest, '{"epochs": 1}')
        assert len(state.history()) == 1
        state.save_dir(str(tmp / "state"))
        state = fogroute.TrainState.load_dir(str(tmp / "state"))

        img = fogroute.Image.load(next(str(p) for p in (tmp / "data").glob("*.png")))
        d = state.hden.estimate(img)
        assert 0.0 <= d <= 1.0
        out = state.dehaze(img)
        assert out["level"] in ("Light", "Medium", "Heavy")
        assert len(out["residual_trace"]) in (2, 4, 6)
        forced = state.dehaze(img, force_level="H")
        assert len(forced["residual_trace"]) == 6

        loss = fogroute.adaptive_loss(out["image"], out["transmission"], img, img, d, state.hden)
        expect = loss["gamma"] * loss["coh"] + (1 - loss["gamma"]) * loss["contra_rec"] + loss["dens"]
        assert math.isclose(loss["total"], expect, abs_tol=1e-12)

        ops = fogroute.Branches().estimate_ops(64, 64)
        assert ops[0] < ops[1] < ops[2]

        try:
            fogroute.Image.load(str(tmp / "missing.png"))
        except OSError:
            pass
        else:
            raise AssertionError("missing file should raise OSError")
        try:
            fogroute.classify_level(1.5)
        except ValueError:
            pass
        else:
            raise AssertionError("out-of-range score should raise ValueError")

    print("smoke test ok")


if __name__ == "__main__":
    main()
