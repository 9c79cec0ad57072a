"""Regenerate the pinned fit inputs and the golden frontal render.

Run from the repository root:  python3 tests/data/make_golden.py
Only rerun after an intentional change to rendering or fitting; the test
compares future runs against the files written here.
"""

import os
import shutil
import subprocess
import sys
import tempfile

import numpy as np

from morphfit.io import write_image, write_landmarks
from morphfit.landmarks import LandmarkSet
from morphfit.model import generate_synthetic_model
from morphfit.synthetic import face_texture, random_sample
from morphfit.texture import compute_isomap

HERE = os.path.dirname(os.path.abspath(__file__))
SEED, VERTICES, COEFFS = 1, 1200, 20


def main():
    model = generate_synthetic_model(SEED, VERTICES, COEFFS)
    chart = compute_isomap(model)
    tex = face_texture(model, chart, 256)
    s = random_sample(model, chart, tex, np.random.default_rng(77), size=192,
                      yaw=(25.0, 25.0), pitch=(5.0, 5.0), roll=(-4.0, -4.0))
    write_image(os.path.join(HERE, "golden_input.png"), s["image"])
    write_landmarks(os.path.join(HERE, "golden_input.landmarks.txt"), LandmarkSet(s["names"], s["points"]))
    with tempfile.TemporaryDirectory() as tmp:
        mpath = os.path.join(tmp, "m.mfm")
        run = [sys.executable, "-m", "morphfit.cli"]
        subprocess.run(run + ["model", "gen", "--seed", str(SEED), "--vertices", str(VERTICES),
                              "--coeffs", str(COEFFS), "--out", mpath], check=True)
        subprocess.run(run + ["fit", os.path.join(HERE, "golden_input.png"), "--model", mpath,
                              "--landmarks", os.path.join(HERE, "golden_input.landmarks.txt"),
                              "--out-dir", tmp], check=True, stdout=subprocess.DEVNULL)
        shutil.copy(os.path.join(tmp, "golden_input.frontal.png"), os.path.join(HERE, "golden_frontal.png"))


if __name__ == "__main__":
    main()
