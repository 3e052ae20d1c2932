"""A short training run at 64x64 so it finishes in a couple of minutes.

Writes a dataset, trains, saves a checkpoint, reloads it and scores the
training images.  The numbers say the loop works; they are not a benchmark.
"""

import tempfile
from pathlib import Path

import numpy as np

from vasl.checkpoint import load_checkpoint, save_checkpoint
from vasl.config import ModelConfig
from vasl.data import SynthSpec, load_dataset, write_dataset
from vasl.metrics import evaluate_arrays
from vasl.model import build_model
from vasl.tensor import Tensor
from vasl.train import fit

root = Path(tempfile.mkdtemp(prefix="vasl_demo_"))
write_dataset(root / "data", SynthSpec(count=8, size=64, seed=2))
samples = load_dataset(root / "data", size=64)

# the encoder divides by 16 (64 -> 4) and the four upsampling stages double back to 64
cfg = ModelConfig(image_size=64, lr_schedule="constant", batch_size=2, epochs=150)
net, store = build_model(cfg)
result = fit(net, store, samples, cfg, on_epoch=lambda e: print(f"epoch {e.epoch:2d} loss {e.loss:.4f} iou {e.iou:.3f}"))
save_checkpoint(root / "demo.ckpt", cfg, store, epoch=result.epoch)

net, _, _ = load_checkpoint(root / "demo.ckpt")
items = []
for s in samples:
    prob = net.predict({d: Tensor(getattr(s, d)[None]) for d in net.domains})[0]
    items.append((s.id, prob[0], s.mask[0].astype(np.uint8)))
print(evaluate_arrays(items).to_text())
print("artifacts in", root)
