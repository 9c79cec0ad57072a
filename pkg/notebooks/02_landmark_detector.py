# coding: utf-8

# # Training the cascaded landmark detector on synthetic renders
#
# 150 renders train a 3-stage cascade; 30 more are held out. Error is the
# mean point distance divided by the face-box diagonal.

# In[1]:

import time

import numpy as np

from morphfit import (LandmarkSet, compute_isomap, detect_landmarks, generate_synthetic_model,
                      normalized_error, train_cascade)
from morphfit.synthetic import face_texture, random_sample

model = generate_synthetic_model(seed=1, V=1200, K=20)
chart = compute_isomap(model)
albedo = face_texture(model, chart, 256)
rng = np.random.default_rng(0)
corpus = []
for _ in range(180):
    s = random_sample(model, chart, albedo, rng, size=160, face_px=(90, 115))
    corpus.append((s["image"], LandmarkSet(s["names"], s["points"]), s["box"]))
train, held = corpus[:150], corpus[150:]

# In[2]:

cascade = train_cascade(train, stages=3, seed=0)
print("training error per stage:", np.round(cascade.training_errors, 4))

# In[3]:

init, final, times = [], [], []
for image, truth, box in held:
    t0 = time.perf_counter()
    found = detect_landmarks(image, box, cascade)
    times.append(time.perf_counter() - t0)
    init.append(normalized_error(cascade.initial_points(box), truth.points, box))
    final.append(normalized_error(found.points, truth.points, box))
print("held-out error: init %.4f -> final %.4f" % (np.mean(init), np.mean(final)))
print("median detection time: %.1f ms" % (1e3 * np.median(times)))
