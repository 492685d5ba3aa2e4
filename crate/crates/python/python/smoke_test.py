"""Builds the extension with cargo, imports it and exercises the main types.

    python3 crates/python/python/smoke_test.py
"""

import math
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[3]


def build_module(dest: Path) -> None:
    subprocess.run(
        ["cargo", "build", "-p", "scarseg-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    target = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target")) / "debug"
    lib = next(p for p in (target / "libscarseg_py.so", target / "libscarseg_py.dylib") if p.exists())
    shutil.copy(lib, dest / "scarseg_py.so")


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        build_module(tmp)
        sys.path.insert(0, str(tmp))
        import scarseg_py as ss

        model = ss.UNet(depth=2, base_width=4, seed=1)
        print(model)
        assert model.param_names()[0] == "enc0.conv1.weight"
        assert ss.UNet().param_count() == 2_161_921

        probs, shape = model.predict([0.0] * (4 * 16 * 16), [1, 4, 16, 16])
        assert shape == [1, 1, 16, 16]
        assert all(0.0 <= p <= 1.0 for p in probs)

        assert abs(ss.bce_loss([0.5] * 8, [0.0, 1.0] * 4) - math.log(2)) < 1e-6
        assert len(ss.tile_offsets(1024, 256, 128)) == 7

        m = ss.compute_metrics([1, 0, 0, 0], [1, 1, 0, 0], 2, 2)
        assert (m.tp, m.fn_, m.tn, m.fp) == (1, 1, 2, 0)
        assert m.pixel_accuracy == 0.75 and m.iou == 0.5

        data = tmp / "data"
        assert ss.synth_dataset(str(data), n_scenes=4, canvas=32, seed=3) == 4
        history = ss.fit(model, str(data), epochs=2, tile=32, batch_size=2)
        assert history.splitlines()[0] == "epoch,train_loss,val_loss,train_acc,val_acc,lr"
        assert len(history.splitlines()) == 3
        h, w, prob = model.predict_scene(str(data / "scenes" / "scene_0000"), tile=32, stride=32)
        assert (h, w, len(prob)) == (32, 32, 32 * 32)

        try:
            ss.UNet(depth=0)
        except ValueError as e:
            assert "depth" in str(e)
        else:
            raise AssertionError("depth 0 accepted")

        scenes = str(data / "scenes")
        code = ss.run_cli(["eval", "--pred", scenes, "--reference", scenes, "--out", str(tmp / "eval"), "--quiet"])
        assert code == 0
        assert ss.run_cli(["train", "--data", str(tmp / "missing")]) == 2

    print("smoke test ok")


if __name__ == "__main__":
    main()
