"""Log-Gaussian pitch transformation between two voices.

The transform standardizes voiced log-F0 under the source statistics and
re-expresses it under the target's, so the converted contour carries the
target's pitch level and range while keeping the source's shape.
"""

import numpy as np

from massvc import F0Statistics, convert_f0
from massvc.features import F0Statistics as Stats

rng = np.random.default_rng(0)

# A low, narrow voice and a higher, livelier one.
source = F0Statistics(mean_log_f0=np.log(110.0), std_log_f0=0.12,
                      n_voiced_frames=4000)
target = F0Statistics(mean_log_f0=np.log(205.0), std_log_f0=0.22,
                      n_voiced_frames=3500)

# A contour with unvoiced gaps (zeros).
t = np.linspace(0, 1.2, 240)
contour = 110.0 * (1 + 0.08 * np.sin(2 * np.pi * 1.7 * t))
contour[60:80] = 0.0
contour[190:205] = 0.0

converted = convert_f0(contour, source, target)
voiced = contour > 0
print(f"source: median {np.median(contour[voiced]):.1f} Hz")
print(f"converted: median {np.median(converted[voiced]):.1f} Hz "
      f"(target mean level {np.exp(target.mean_log_f0):.1f} Hz)")
print(f"unvoiced frames preserved: "
      f"{np.array_equal(converted == 0, contour == 0)}")

back = convert_f0(converted, target, source)
err = np.max(np.abs(back[voiced] - contour[voiced]) / contour[voiced])
print(f"round trip back to the source voice: max relative error {err:.2e}")

# Moment matching on a corpus whose statistics are measured, not assumed.
log_f0 = np.log(110.0) + 0.12 * rng.standard_normal(5000)
measured = Stats.from_log_values(log_f0)
out = np.log(convert_f0(np.exp(log_f0), measured, target))
print(f"corpus conversion: mean {out.mean():.4f} vs target "
      f"{target.mean_log_f0:.4f}, std {out.std():.4f} vs "
      f"{target.std_log_f0:.4f}")
