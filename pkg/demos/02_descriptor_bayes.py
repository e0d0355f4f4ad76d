# %% [markdown]
# # Scene descriptors and naive Bayes
# Fit the descriptor model on a synthetic corpus, look at the per-class
# frequencies and classify a few hand-written descriptor sets.

# %%
import tempfile

import numpy as np

from emofusion.bayes import NaiveBayes
from emofusion.data_io import load_dataset
from emofusion.evalreport import descriptor_histogram, evaluate
from emofusion.labels import CLASSES
from emofusion.pipeline import FusionModel
from emofusion.synthetic import write_corpus

root = write_corpus(tempfile.mkdtemp(), {"train": 150, "test": 90}, seed=0)
train = load_dataset(root, "train")
print(train.class_counts)

# %%
bayes = NaiveBayes.fit(train, smoothing=1.0)
print(len(bayes.vocabulary), "descriptors, prior", np.round(bayes.prior, 3))
for word, counts in descriptor_histogram(train, bayes.vocabulary)[:8]:
    print(f"{word:12s}", counts)

# %%
for tags in ({"party", "people"}, {"funeral", "crowd"}, {"office"}, set()):
    post = bayes.posterior(tags)
    print(sorted(tags), CLASSES[int(np.argmax(post))], np.round(post, 3))

# %% [markdown]
# Scoring only the descriptors that are present ignores the rest of the
# vocabulary; compare accuracy with the full Bernoulli model.

# %%
test = load_dataset(root, "test")
for presence_only in (False, True):
    model = NaiveBayes.fit(train, smoothing=1.0, presence_only=presence_only)
    report = evaluate(test, FusionModel(None, model), "bn")
    print("presence only" if presence_only else "full bernoulli", f"{100 * report.accuracy:.2f}%")
