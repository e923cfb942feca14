"""Reference step, input sag and load step under PI frequency control.

Compares the tuned gains with the starting gains used before training on
the same noisy scenario.
"""

from lccs_tuner.agent import INITIAL_GAINS, PUBLISHED_GAINS, evaluation_reward
from lccs_tuner.simulator import segment_metrics

edges = [0.0, 0.04, 0.07, 0.1]   # step at 0, Vin -5 % at 40 ms, R_load -10 % at 70 ms

for name, (kp, ki) in (("tuned", PUBLISHED_GAINS), ("initial", INITIAL_GAINS)):
    total, loop = evaluation_reward(kp, ki, seed=0, decimation=10)
    w = loop.waveforms()
    print(f"\n{name} gains Kp={kp}, Ki={ki}: episode reward {total:.4g}")
    for i, seg in enumerate(segment_metrics(w, edges, 200.0, y0=0.0), start=1):
        print(f"  segment {i}: settling {seg.settling_time_2pct * 1e3:6.2f} ms, "
              f"overshoot {seg.overshoot_pct:5.2f} %, mean {seg.steady_mean:7.2f} V")
    print(f"  commanded frequency range {w.ctrl_f.min() / 1e3:.2f}-{w.ctrl_f.max() / 1e3:.2f} kHz")
