"""EER and minDCF on synthetic verification scores.

Target and non-target scores are drawn from two Gaussians whose separation
grows; both metrics fall as the classes pull apart, and neither changes under
a strictly increasing transform of the scores.
"""

import numpy as np

from gradw.metrics import compute_eer, compute_min_dcf

rng = np.random.default_rng(0)
labels = np.r_[np.ones(500, bool), np.zeros(500, bool)]
print("separation   EER     minDCF(p=0.01)")
for sep in (0.0, 0.5, 1.0, 2.0, 3.0):
    scores = rng.standard_normal(1000) + sep * labels
    eer, thr = compute_eer(scores, labels)
    print(f"{sep:10.1f}   {eer:.4f}  {compute_min_dcf(scores, labels):.4f}")

scores = rng.standard_normal(1000) + labels
print("invariance under exp():",
      compute_eer(scores, labels)[0] == compute_eer(np.exp(scores), labels)[0],
      compute_min_dcf(scores, labels) == compute_min_dcf(np.exp(scores), labels))
