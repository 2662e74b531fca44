"""Render a wavy-surface video from a synthetic scene and report how hard it is.

    python demos/simulate_water.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from uwrestore import metrics, wave_sim
from uwrestore.imaging import mean_frame, save_sequence, write_image

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_simulate")
clean = wave_sim.make_scene("mixed", 128, seed=1)
model = wave_sim.random_model(1, n_waves=3, target_sigma_motion=4.0, width=128, height=128)
bundle = wave_sim.synthesize(clean, model, 40, seed=1)

print("waves:")
for w in model.waves:
    length = 2 * np.pi / np.hypot(*w.wavevector)
    period = 2 * np.pi / w.angular_frequency if w.angular_frequency else np.inf
    print(f"  amplitude={w.amplitude:.3f} wavelength={length:.1f}px period={period:.1f} frames")
print(f"max slope-gradient product: {model.max_slope_gradient():.3f} (must stay below 1)")
print(f"field RMS: {wave_sim.field_sigma(bundle.true_field):.2f} px")

blurred = mean_frame(bundle.distorted)
print(f"mean-frame SSIM vs clean: {metrics.ssim(blurred, clean):.3f}")

save_sequence(bundle.distorted, out / "distorted")
write_image(out / "clean.png", clean)
write_image(out / "mean.png", blurred)
print(f"frames written to {out}/distorted")
print("per-frame RMSE spread:", np.round([metrics.rmse(f, clean) for f in bundle.distorted.frames[:5]], 3))
