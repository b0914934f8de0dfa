"""
Scoring multi-label annotations
===============================

Three numbers summarize annotation quality: the F-score averaged over
images (MF-S), the F-score averaged over concepts (MF-C) and the mean
average precision over concepts (MAP).
"""

import numpy as np

from ctxkernel import evaluate
from ctxkernel.evalmetrics import average_precision

# a single ranked list: relevant items at ranks 1 and 3
print("AP:", average_precision([0.9, 0.8, 0.7, 0.1], [1, -1, 1, -1]))  # (1 + 2/3) / 2

scores = np.array([[2.1, -0.3, 0.4],
                   [-1.0, 0.8, -0.2],
                   [0.5, 0.6, -1.5],
                   [-0.7, -0.1, 0.9]])
truth = np.array([[1, -1, 1],
                  [-1, 1, -1],
                  [1, -1, -1],
                  [-1, -1, 1]])
report = evaluate(scores, truth, ["sky", "sea", "tree"])
print("MF-S %.3f  MF-C %.3f  MAP %.3f" % report.summary())
for name, (p, r, f, ap) in zip(report.concept_names, report.per_concept):
    print(f"{name:>5}: P={p:.2f} R={r:.2f} F={f:.2f} AP={ap:.2f}")
