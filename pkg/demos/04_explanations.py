"""Explanation maps for a warm-started model: Grad-CAM from conv
gradients, RISE from randomly masked forwards, and overlap-controlled
random maps. Exports one map to CSV and reads it back.
"""

import os
import tempfile

import numpy as np

from attn_tutor import data as D
from attn_tutor import explain as E
from attn_tutor import model as M
from attn_tutor import train as TR

ds = D.generate(D.DatasetSpec(n_samples=300, image_size=12, grid=3, seed=2))
mc = M.VqaModelConfig(image_size=12, region_grid=3, feature_dim=12,
                      question_vocab=D.VOCAB_SIZE, answer_classes=D.N_CLASSES,
                      recurrent_hidden=12)
cfg = TR.TrainConfig(warm_epochs=4, adv_epochs=0, batch_size=25, seed=0)
state = TR.init_state(mc, cfg)
TR.warm_start(state, ds, cfg)

sample = ds.samples[0]
cam = E.grad_cam(mc, state.params, sample, sample.answer)
sal = E.rise(mc, state.params, sample, sample.answer, n_masks=200, rng_seed=3)
rand = E.random_explanation(sample.gt_attention, overlap_target=0.2, rng_seed=5)

print("reference attention:\n", sample.gt_attention.round(2))
print("grad-cam:\n", cam.grid.round(2), "degenerate:", cam.degenerate)
print("rise:\n", sal.grid.round(2), "degenerate:", sal.degenerate)
print("random (overlap 0.2):\n", rand.grid.round(2))

from attn_tutor import metrics as ME

for name, m in (("grad-cam", cam), ("rise", sal), ("random", rand)):
    print(f"{name}: overlap with reference {ME.overlap(m.grid, sample.gt_attention):.3f}")

with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "cam.csv")
    E.write_map_csv(path, cam.grid)
    back = E.read_map_csv(path)
    assert np.array_equal(back, cam.grid)
    print("CSV round-trip exact")
