"""Edit a graph down to one node per anatomy class and show what was removed.

Run: python demos/02_graph_editing.py
"""

import numpy as np

from latentgraph.editing import EditConfig, edit_graph, node_scores, temporal_degrees
from latentgraph.synth import NUM_SPATIAL_RELATIONS, WorldConfig, generate_sequence
from latentgraph.temporal import assemble_video_graph, make_schedule

world = WorldConfig(task="clip", T=10, dup_rate=0.4)
seq = generate_sequence(world, seed=1)
g = assemble_video_graph(seq.frames, make_schedule("exponential", 3, world.T), world.num_classes,
                         NUM_SPATIAL_RELATIONS, world.dim)
config = EditConfig(editable_classes=world.anatomy_classes)

# Score = (1 - 1/degree) * confidence: well-connected, confident nodes survive.
table = node_scores(g, temporal_degrees(g), config)
f0 = g.frames[0]
print("frame 0 nodes (class, confidence, score, duplicate):")
for i in range(f0.num_nodes):
    print(f"  {int(f0.class_ids[i]):2d}  {f0.confidences[i]:.2f}  {table.score[i]:.3f}  {bool(seq.is_duplicate[0][i])}")

e = edit_graph(g, config)
print(f"\nnodes {g.num_nodes} -> {e.num_nodes}, spatial edges {g.num_spatial_edges} -> {e.num_spatial_edges}, "
      f"temporal edges {g.num_temporal_edges} -> {e.num_temporal_edges}")
print(f"editing again changes nothing: {edit_graph(e, config) == e}")

kept_dup = removed_dup = 0
for t, (before, after) in enumerate(zip(g.frames, e.frames)):
    kept = {tuple(b) for b in after.boxes.tolist()}
    for i in range(before.num_nodes):
        if seq.is_duplicate[t][i]:
            kept_dup += tuple(before.boxes[i].tolist()) in kept
            removed_dup += tuple(before.boxes[i].tolist()) not in kept
print(f"duplicates removed {removed_dup}, duplicates kept {kept_dup}")
print(f"node-count ratio after editing {e.num_nodes / max(g.num_nodes, 1):.2f}; "
      f"nodes per frame {np.mean([f.num_nodes for f in e.frames]):.1f}")
