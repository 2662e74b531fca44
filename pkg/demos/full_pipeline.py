"""All three restoration modes on one synthetic scene, with a quality table.

    python demos/full_pipeline.py [size] [frames]

The full 256 x 256 x 101 setting takes a few minutes on one core.
"""

import sys

from uwrestore import metrics, pipeline, wave_sim
from uwrestore.imaging import mean_frame

size = int(sys.argv[1]) if len(sys.argv) > 1 else 128
frames = int(sys.argv[2]) if len(sys.argv) > 2 else 60

clean = wave_sim.make_scene("mixed", size, seed=0)
model = wave_sim.random_model(0, n_waves=3, target_sigma_motion=size / 40, width=size, height=size)
bundle = wave_sim.synthesize(clean, model, frames, seed=0)

print(f"{'mode':<10}{'ssim':>8}{'nmi':>8}{'rmse':>8}{'seconds':>9}")
base = metrics.evaluate(mean_frame(bundle.distorted), clean)
print(f"{'distorted':<10}{base.ssim:8.3f}{base.nmi:8.3f}{base.rmse:8.3f}")
for mode in pipeline.MODES:
    _, image, report = pipeline.run_restore(bundle.distorted, pipeline.PipelineConfig(mode=mode))
    q = metrics.evaluate(image, clean)
    print(f"{mode:<10}{q.ssim:8.3f}{q.nmi:8.3f}{q.rmse:8.3f}{report['time_total_s']:9.1f}")
