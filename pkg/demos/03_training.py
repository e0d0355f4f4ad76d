# %% [markdown]
# # Training the face network
# Balanced batches of 21 faces per class, RMSProp, Xavier init and dropout.
# On a single core an iteration of 63 faces takes several seconds, so the
# default run here is short; pass a larger count on the command line to go
# further (about 45 iterations separate the 30 synthetic faces).

# %%
import sys
import time

import numpy as np

from emofusion.synthetic import face_set
from emofusion.train import OptimizerConfig, train_cnn

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 20
faces, labels = face_set(10, seed=1)
print(faces.shape, np.bincount(labels))

# %%
start = time.perf_counter()


def report(it, net, loss):
    if it % 10 == 9:
        acc = (net.predict_proba(faces).argmax(axis=1) == labels).mean()
        print(f"iteration {it + 1:4d}  loss {loss:.4f}  train accuracy {acc:.2f}  "
              f"{time.perf_counter() - start:.0f} s")
    return False


result = train_cnn(faces, labels, OptimizerConfig(iterations=iterations, seed=0), callback=report)

# %%
losses = np.array(result.losses)
window = min(10, losses.size)
print("first losses", np.round(losses[:window], 3))
print("last losses ", np.round(losses[-window:], 3))
