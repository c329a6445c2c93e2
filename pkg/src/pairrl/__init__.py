"""PPO with paired-view invariance and sensitivity objectives on a toy tabletop task."""
