"""
Bending rays at a water surface
===============================

Refract single rays, then render a small Gaussian field through flat and
wavy water and compare with the dry render.
"""

import numpy as np

from refractrace.geom import Camera, RefractionConfig, refract
from refractrace.gaussians import random_init
from refractrace.renderer import RenderJob, SurfaceHandle, render_forward
from refractrace.scene_io import write_png
from refractrace.scene_io.synthetic import FlatSurface, SineSurface

# %%
# A ray hitting still water at 45 degrees leaves at about 32 degrees.
water = RefractionConfig(1.0, 1.333)
d = np.array([np.sin(np.radians(45)), 0.0, -np.cos(np.radians(45))])
t = refract(d, np.array([0.0, 0.0, 1.0]), water.eta)
print("refracted angle:", np.degrees(np.arccos(-t[2])))

# %%
# Some coloured Gaussians on the floor, seen from above.
field = random_init(300, ([-1.5, -1.5, -0.05], [1.5, 1.5, 0.05]), seed=1, opacity=0.6)
field.sh[:, 0] = np.random.default_rng(1).normal(0, 1.5, (len(field), 3))
cam = Camera.look_at([1.5, -2.5, 3.0], [0, 0, 0], [0, 0, 1], 40.0, 128, 128)
domain = (-2.5, 2.5, -2.5, 2.5)

# %%
# Render dry, through still water and through a sine wave.
dry = render_forward(RenderJob(cam, field)).image
still = render_forward(RenderJob(cam, field, SurfaceHandle(FlatSurface(1.0, domain), 40, 40, 2), water)).image
wave = SineSurface(1.0, 0.1, (0.5, 0.3), 0.0, domain)
wavy = render_forward(RenderJob(cam, field, SurfaceHandle(wave, 40, 40, 2), water)).image

for name, img in (("dry", dry), ("still", still), ("wavy", wavy)):
    write_png(f"refraction_{name}.png", np.clip(img, 0, 1))
print("mean |still - dry|:", np.abs(still - dry).mean())
print("mean |wavy - still|:", np.abs(wavy - still).mean())
