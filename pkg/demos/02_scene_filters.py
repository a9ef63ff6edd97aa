"""The two scene filters on a tiny hand-built photo corpus.

An image survives the outdoors filter when at least 9 of its 10 most
activated scene classes are flagged outdoor, and the buildings filter
when any of the building classes reaches an activation of 0.05.
"""

import numpy as np

from livmap import FilterSpec, GeoImage, apply_filter
from livmap.imagery import SCENE_CLASS_COUNT

# Classes 0..99 play the outdoor roles, 100..123 the building roles.
outdoor_mask = np.zeros(SCENE_CLASS_COUNT, dtype=bool)
outdoor_mask[:100] = True
building_classes = frozenset(range(100, 124))


def activations(pairs):
    row = np.full(SCENE_CLASS_COUNT, 1e-4)
    for index, value in pairs:
        row[index] = value
    return row


corpus = {
    1: activations([(i, 0.5 - 0.01 * i) for i in range(10)]),    # street panorama
    2: activations([(i, 0.5 - 0.01 * i) for i in range(9)] + [(100, 0.6)]),  # facade shot
    3: activations([(200 + i, 0.4 - 0.01 * i) for i in range(10)]),  # indoor party
    4: activations([(100, 0.05)] + [(300 + i, 0.04) for i in range(9)]),  # boundary case
    5: activations([(101, 0.049)] + [(300 + i, 0.04) for i in range(9)]),  # just below
}
images = [GeoImage(i, 100.0 * i, 50.0, "flickr") for i in corpus]

outdoors = FilterSpec(mode="outdoors", outdoor_mask=outdoor_mask)
buildings = FilterSpec(mode="buildings", building_classes=building_classes)

for name, spec in (("outdoors", outdoors), ("buildings", buildings)):
    result = apply_filter(images, corpus, spec)
    print(f"{name:9s}: kept {result.retained_ids} "
          f"({result.retained_count}/{result.input_count}, "
          f"{100 * result.retention_rate:.0f}%)")

# Raising the threshold can only shrink the buildings subset.
for threshold in (0.03, 0.05, 0.08):
    spec = FilterSpec(mode="buildings", building_classes=building_classes,
                      threshold=threshold)
    kept = apply_filter(images, corpus, spec).retained_ids
    print(f"buildings at threshold {threshold}: {kept}")
