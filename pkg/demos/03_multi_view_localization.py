# # More views, better positions
#
# Each view of an object gives its own ground estimate; errors in where the
# camera thinks it stood pass straight into that estimate. Averaging views
# cancels part of the error, so localization should improve as views are added.

import numpy as np
from dataclasses import replace

from geograph.geometry import haversine_m
from geograph.geoloc import localize_object
from geograph.simulator import SimConfig, generate_corpus

# Only camera position noise: one metre per axis, nothing else.
cfg = replace(SimConfig(seed=3, n_scenes=200).noise_free(), pose_noise_sigma_m=1.0)
scenes = generate_corpus(cfg)


def mae_with_views(k):
    errors = []
    for scene in scenes:
        for obj in scene.objects:
            members = [i for i, d in enumerate(scene.detections)
                       if d.gt_object_id == obj.object_id and d.view_id < k]
            errors.append(haversine_m(localize_object(members, scene.detections).final, obj.position))
    return np.mean(errors)


for k in (1, 2, 3, 4):
    print(f"{k} view(s): mean error {mae_with_views(k):.3f} m")

# With independent per-view errors the mean error should fall roughly like
# one over the square root of the view count.
print(f"ideal 4-view / 1-view ratio {1 / np.sqrt(4):.2f}, observed {mae_with_views(4) / mae_with_views(1):.2f}")
