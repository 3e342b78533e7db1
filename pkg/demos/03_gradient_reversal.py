"""
Gradient reversal and gradient checking
=======================================

A gradient reversal layer is the identity going forward and multiplies the
incoming gradient by -lambda going back.  The detector's analytic gradients
are checked against central finite differences.
"""
import numpy as np

from simreal.boxes import Box
from simreal.detector import BatchItem, DetectorModel, gradient_check_model, label_patches, patch_boxes, patch_features
from simreal.numerics import GRL, Network, gradient_check, make_rng

grl = GRL(0.5)
g = np.array([[1.0, -2.0, 4.0]])
print("GRL forward:", grl.forward(g)[0], " backward:", grl.backward(None, g)[0])

# a tiny tanh network, checked against finite differences
rng = make_rng(0)
net = Network.mlp([3, 4, 1], "tanh", rng)
x = rng.normal(size=(5, 3))
print("2-layer tanh max relative error:", gradient_check(net, lambda y: (float(np.sum(y ** 2)), 2 * y), x))

# the full detector: trunk, detection head and both adversarial domain heads
rng = np.random.default_rng(0)
yy, xx = np.mgrid[:64, :64]
disc = ((xx - 30) / 9) ** 2 + ((yy - 22) / 7) ** 2 < 1
images = [rng.normal(1000, 50, (64, 64)) + b * disc for b in (800, 400)]
labels = label_patches(patch_boxes(64, 64), [Box(21, 15, 39, 29)], 0.3, 0.1)
batch = [BatchItem(patch_features(images[0]), labels, 0), BatchItem(patch_features(images[1]), None, 1)]
model = DetectorModel.init(1, hidden=16, domain_hidden=8, lam=0.7)
print("detector max relative error:", gradient_check_model(model, batch, consistency_weight=0.5))
