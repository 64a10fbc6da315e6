"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--images 100] [--boxes 100] [--repeat 5]
"""

import argparse
import random
import time

from boxforge import _backend
from boxforge.core import BBox, Detection, GroundTruth
from boxforge.evaluation import EvalConfig, evaluate
from boxforge.fusion import FusionConfig, nms, wbf


def make_images(n_images, n_boxes, n_models, seed=0):
    rng = random.Random(seed)
    images = []
    for img in range(1, n_images + 1):
        dets = []
        while len(dets) < n_boxes:
            cx, cy = rng.random(), rng.random()
            w, h = rng.uniform(0.02, 0.2), rng.uniform(0.02, 0.2)
            cat = rng.randint(1, 5)
            for m in range(n_models):
                jx, jy = rng.gauss(0, 0.01), rng.gauss(0, 0.01)
                box = BBox(
                    max(0.0, cx - w / 2 + jx), max(0.0, cy - h / 2 + jy),
                    min(1.0, cx + w / 2 + jx), min(1.0, cy + h / 2 + jy),
                )
                dets.append(Detection(box, rng.random(), cat, m, img))
        images.append(dets[:n_boxes])
    return images


def best_of(repeat, fn):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--images", type=int, default=100)
    p.add_argument("--boxes", type=int, default=100)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()

    images = make_images(args.images, args.boxes, 3)
    flat = [d for dets in images for d in dets]
    gts = [GroundTruth(d.bbox, d.category_id, d.image_id) for d in flat if d.model_id == 0]
    wbf_cfg, nms_cfg = FusionConfig(num_models=3), FusionConfig()
    cases = {
        "nms": lambda: [nms(d, nms_cfg) for d in images],
        "wbf": lambda: [wbf(d, wbf_cfg) for d in images],
        "evaluate": lambda: evaluate(flat, gts, EvalConfig()),
    }
    backends = sorted(_backend.BACKENDS)
    print(f"{len(flat)} detections over {args.images} images, best of {args.repeat}")
    print(f"{'case':<10}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    prev = _backend.name
    try:
        for case, fn in cases.items():
            row = {}
            for b in backends:
                _backend.set_backend(b)
                row[b] = best_of(args.repeat, fn)
            line = f"{case:<10}" + "".join(f"{row[b] * 1e3:>10.1f}ms" for b in backends)
            if len(backends) > 1:
                line += f"{row['python'] / row['cython']:>11.1f}x"
            print(line)
    finally:
        _backend.set_backend(prev)


if __name__ == "__main__":
    main()
