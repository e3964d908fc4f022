"""Regenerate models/demo_l1.json and models/demo_l2.json (10 neurons per layer, seed 2024)."""
from pathlib import Path

import numpy as np

from qcbound import random_network, save_model

out = Path(__file__).resolve().parents[1] / "models"
out.mkdir(exist_ok=True)
for layers in (1, 2):
    net = random_network(np.random.default_rng(2024), 1, [10] * layers, 1)
    save_model(net, out / f"demo_l{layers}.json")
    print(out / f"demo_l{layers}.json")
