# %% [markdown]
# # The whole workflow through the command line
# Build a small synthetic corpus, then run the same commands an operator
# would: fit the descriptor model, train the CNN, calibrate its evidence
# table on the validation split and evaluate all three modes.

# %%
import sys
import tempfile
from pathlib import Path

from emofusion.cli import run
from emofusion.synthetic import write_corpus

iterations = sys.argv[1] if len(sys.argv) > 1 else "30"
work = Path(tempfile.mkdtemp())
root = write_corpus(work / "corpus", {"train": 60, "val": 30, "test": 30}, seed=3)
common = ["--root", str(root), "--model", str(work / "model.emf"), "--out", str(work / "out")]

# %%
run(["build-vocab", *common])
run(["fit-bn", "--vocab", str(work / "out" / "vocab.txt"), *common])
# a gentler learning rate than the default keeps this corpus stable
run(["train-cnn", "--iterations", iterations, "--lr", "1e-4", "--initial-accumulator", "0", *common])
run(["calibrate", *common])
run(["eval", "--mode", "ensemble", *common])
print((work / "out" / "report.txt").read_text())

# %% [markdown]
# Averaging the two distributions instead of using the evidence node:

# %%
run(["eval", "--average", *common])

# %%
image = next((root / "test" / "positive").glob("*.ppm"))
run(["predict", "--image", str(image), *common])
