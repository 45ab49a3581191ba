"""Toolkit for reducing false-positive lesion detections.

Turns stacks of per-voxel probability maps into uncertainty maps, detects
lesion components, matches them against reference lesions via a bipartite
correspondence graph, extracts per-lesion features, reduces them, and
classifies each detection as a true or false positive with an extremely
randomized trees model.
"""

__version__ = "0.1.0"
