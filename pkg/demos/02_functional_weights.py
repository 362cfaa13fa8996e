"""A single linear neuron recovers the linear functional regression coefficient.

On noiseless linear data the first-layer weight function of a one-neuron
linear network and the coefficient function of the PC-based linear model
estimate the same object, so the two curves should nearly coincide.

    python demos/02_functional_weights.py
"""

import numpy as np

from fnncc.charts import make_fnn_predictor, make_sof_predictor
from fnncc.fnn import FnnConfig, functional_weights
from fnncc.simgen import ScenarioSpec, ShiftSpec, make_datasets
from fnncc.sof import beta_hat

data = make_datasets(ScenarioSpec("A", noise_sd=0.0), ShiftSpec(), (1000, 250, 200, 200), seed=2)
config = FnnConfig(
    n_neurons=(1,), activations=("linear",), learning_rate=0.001, batch_size=1000,
    max_epochs=20000, patience=20000, lr_decay=0.9999,
)
fnn, _ = make_fnn_predictor(data.train, data.train, config)
sof = make_sof_predictor(data.train)

gamma = functional_weights(fnn.model)[0]
beta = beta_hat(sof.model)[0]
grid = data.train.grid
print(f"retained components: {sof.model.M}")
print(f"correlation over the grid: {np.corrcoef(gamma, beta)[0, 1]:.4f}")
for i in range(0, grid.size, 15):
    print(f"t={grid[i]:.2f}  gamma={gamma[i]:+.4f}  beta={beta[i]:+.4f}")
