"""Knowledge accumulates without replay when classes keep coming back.

Trains one network on a long stream of two-class tasks (masked softmax, one
epoch each) and compares it with the same network trained on shuffled data.
Pass ``--mnist`` to use a 2000-image MNIST subset and the small CNN; that run
takes several minutes.
"""
import sys
import tempfile

from clstream.config import RunConfig
from clstream.metrics import moving_average
from clstream.runner import run_scenario

from _shared import export_mnist_subset, sparkline

settings = {"scenario.num_tasks": 300, "dataset.samples_per_class": 2000, "run.seeds": [0]}
if "--mnist" in sys.argv:
    root = export_mnist_subset(tempfile.mkdtemp())
    settings = {
        "dataset.kind": "idx",
        "dataset.train_images": str(root / "train-images-idx3-ubyte"),
        "dataset.train_labels": str(root / "train-labels-idx1-ubyte"),
        "dataset.test_images": str(root / "test-images-idx3-ubyte"),
        "dataset.test_labels": str(root / "test-labels-idx1-ubyte"),
        "train.architecture": "cnn",
        "train.lr": 0.1,
        "scenario.num_tasks": 500,
    }

result = run_scenario(RunConfig.from_mapping(settings))
log = result.seeds[0].log
smooth = moving_average(log.overall)
print(f"i.i.d. reference accuracy: {log.iid_accuracy:.3f}")
for t in (0, 10, 20, 50, 100, 200, len(log) - 1):
    if t < len(log):
        print(f"  after task {t:3d}: accuracy {log.overall[t]:.3f}  (smoothed {smooth[t]:.3f})")
print("smoothed accuracy over the stream:")
print("  " + sparkline(smooth[:: max(1, len(smooth) // 70)]))
print(f"final smoothed accuracy is {smooth[-1] / log.iid_accuracy:.1%} of the i.i.d. reference")
