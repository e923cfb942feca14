"""Steady output voltage across the 79-90 kHz band.

The PI controller commands frequency, so the sign of the gain-curve slope
near 85 kHz fixes the controller sign.
"""

import numpy as np

from lccs_tuner.converter import ConverterParams
from lccs_tuner.simulator import frequency_sweep, recommended_sign

f = np.arange(79e3, 90.5e3, 1e3)
res = frequency_sweep(ConverterParams(), f)   # about one second per point

for fi, v in zip(res.f, res.vout):
    print(f"{fi / 1e3:5.1f} kHz  {v:7.2f} V  " + "#" * int(v / 5))

print("peak at", res.peak_frequency() / 1e3, "kHz")
print("slope at 85 kHz:", round(res.slope_at(85e3), 5), "V/Hz")
print("controller sign to use:", recommended_sign(res, 85e3))
for lo, hi, sgn in res.segments():
    print(f"branch {lo / 1e3:.0f}-{hi / 1e3:.0f} kHz {'rising' if sgn > 0 else 'falling'}")
