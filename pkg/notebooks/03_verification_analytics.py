# coding: utf-8

# # DET curves, the 0.01 FAR operating point and yaw-binned improvement
#
# Scores are simulated: genuine pairs drift toward impostor scores as probe
# yaw grows, and a "normalized" method halves that drift.

# In[1]:

import numpy as np

from morphfit import ScoreMatrix, binned_frr, compute_det, frr_at_far, improvement_curve

rng = np.random.default_rng(3)
ids = [f"img{i:03d}" for i in range(300)]
subject = {i: f"s{k % 30}" for k, i in enumerate(ids)}
yaw = {i: float(rng.uniform(-70, 70)) for i in ids}
gallery = [i for i in ids if abs(yaw[i]) < 5] or ids[:30]

# In[2]:


def simulate(drift):
    s = np.empty((len(ids), len(gallery)))
    for a, p in enumerate(ids):
        for b, g in enumerate(gallery):
            genuine = subject[p] == subject[g]
            s[a, b] = rng.normal(3.0 - drift * abs(yaw[p]) / 70.0 if genuine else 0.0)
    return ScoreMatrix(ids, gallery, s, subject, yaw)


baseline, method = simulate(2.5), simulate(1.2)
print("FRR at 0.01 FAR: baseline %.3f, method %.3f"
      % (frr_at_far(compute_det(baseline), 0.01), frr_at_far(compute_det(method), 0.01)))

# In[3]:

for (c, fb), (_, fm) in zip(binned_frr(baseline), binned_frr(method)):
    print("%+5.0f deg  baseline %.3f  method %.3f" % (c, fb, fm))
curve = improvement_curve(baseline, method)
print("delta FRR:", np.round(curve.delta_frr, 3))
