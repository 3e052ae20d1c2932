"""How a synthetic splice sample is built.

Background: smooth colour blotches, a brightness ramp and per-pixel grain.
Donor: a grain-free texture pasted through a rectangle or ellipse footprint,
with brightness pushed away from what it covers.  Depth is a ramp with the
pasted region lifted to a constant.  The edge plane is a Sobel magnitude.
"""

import numpy as np

from vasl.data import SynthSpec, render, synth_sample

spec = SynthSpec(count=4, size=128, seed=1)
for i in range(spec.count):
    s = synth_sample(spec, i)
    m = s.mask[0] == 1
    print(
        f"{s.id}: mask {m.mean():.3f} of the image, "
        f"depth inside {s.depth[0][m].mean():.2f} vs outside {s.depth[0][~m].mean():.2f}, "
        f"edge on mask {s.edge[0][m].mean():.3f} vs background {s.edge[0][~m].mean():.3f}"
    )

# the mask is exactly the set of pixels the paste changed
rgb, _, mask = render(spec, 0)
bg, _, _ = render(spec, 0, paste=False)
changed = np.any(rgb != bg, axis=0)
print("render-twice check:", bool(np.array_equal(changed, mask[0] == 1)))
