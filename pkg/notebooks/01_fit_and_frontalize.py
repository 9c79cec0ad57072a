# coding: utf-8

# # Fitting the model to landmarks and pose-normalizing a face
#
# A synthetic face is rendered at 35 degrees of yaw, fitted from its 49
# landmarks, and re-rendered frontally. Outputs land in ./out/.

# In[1]:

import os

import numpy as np

from morphfit import (FitConfig, compute_isomap, extract_pose_angles, fit, fitted_mesh,
                      generate_synthetic_model, instantiate, remap_texture, render_frontal)
from morphfit.io import write_image, write_texture
from morphfit.synthetic import face_texture, random_sample

os.makedirs("out", exist_ok=True)
model = generate_synthetic_model(seed=1, V=1200, K=20)
chart = compute_isomap(model)
albedo = face_texture(model, chart, 256)

# In[2]:

# one rendering with known shape and pose
rng = np.random.default_rng(5)
sample = random_sample(model, chart, albedo, rng, yaw=(35, 35), pitch=(0, 0), roll=(0, 0))
write_image("out/input.png", sample["image"])
print("true yaw/pitch/roll:", sample["angles"])

# In[3]:

# camera and shape alternate; the cost trace never goes up
result = fit(model, list(zip(sample["names"], sample["points"])), FitConfig(lam=3.0, iterations=5))
print("cost trace:", np.round(result.costs, 3))
print("estimated pose:", extract_pose_angles(result.camera))

# In[4]:

# fitted shape error against the true shape, in model units
truth = instantiate(model, sample["alpha"]).points
mesh = fitted_mesh(model, result)
print("mean vertex error:", np.linalg.norm(mesh.points - truth, axis=1).mean())

# In[5]:

# isomap texture (occluded texels masked) and the frontal re-rendering
tex = remap_texture(sample["image"], mesh, result.camera, chart, 256)
write_texture("out/input.isomap.png", tex)
write_image("out/input.frontal.png", render_frontal(mesh, tex, chart, 256))
print("filled texel fraction:", tex.mask.mean())
