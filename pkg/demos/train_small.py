"""A short TD3 run next to DDPG on the same seed.

Desk-scale only: a few dozen episodes of 20 ms.  Prints the learning curve
in blocks of ten episodes and the gains each learner would deploy.
"""

import numpy as np

from lccs_tuner.agent import Td3Config, deployment_gains, evaluation_reward, train, trailing_stats

EPISODES = 30

for mode in ("td3", "ddpg"):
    cfg = Td3Config(mode=mode, episodes=EPISODES, seed=0)
    bundle, logs = train(cfg)
    hist = np.array(bundle.reward_history)
    blocks = hist.reshape(-1, 10).mean(axis=1)
    print(f"\n{mode}: mean reward per 10 episodes", np.round(blocks, -2))
    mean, var = trailing_stats(hist)
    print(f"  final window mean {mean:.4g}, variance {var:.4g}")
    print(f"  critic updates {bundle.critic_updates}, actor updates {bundle.actor_updates}")
    kp, ki = deployment_gains(bundle)
    score, _ = evaluation_reward(kp, ki, seed=1000)
    print(f"  deployed gains Kp={kp:.4f} Ki={ki:.4f}, held-out reward {score:.4g}")
