# # Linking detections across panoramas with a graph network
#
# Each scene has a handful of objects seen from four nearby panoramas. Every
# detection becomes a node; every pair of detections from different views
# becomes a candidate edge. A small message-passing network scores the edges,
# and connected components of the kept edges are the re-identified objects.

import numpy as np

from geograph.geoloc import init_refine_net
from geograph.gnn import TrainConfig, init_model
from geograph.graph import POSE_BLOCK_DIM
from geograph.pipeline import GraphOptions, evaluate_results, infer_scene, train
from geograph.simulator import SimConfig, generate_corpus

# Simulated corpus: appearance descriptors are noisy, camera poses are jittered,
# some objects are missed and some detections are spurious.
train_set = generate_corpus(SimConfig(seed=10, n_scenes=100, feature_noise_sigma=0.1))
test_set = generate_corpus(SimConfig(seed=11, n_scenes=100, feature_noise_sigma=0.1))
scene = test_set[0]
print(f"scene 0: {len(scene.objects)} objects, {len(scene.detections)} detections in {len(scene.cameras)} views")

# ## Train with and without the geometric block
#
# Besides the appearance descriptor, each node carries where its camera stood,
# which way it looked, where the box sits in the image and where the box
# projects onto the ground. Switching that block off leaves appearance alone.

for include_pose in (False, True):
    options = GraphOptions(include_pose=include_pose)
    model = init_model(32 + POSE_BLOCK_DIM, 64, seed=0, dropout_p=0.2)
    net = init_refine_net(0)
    log, _ = train(model, net, train_set, TrainConfig(epochs=10, seed=0), options)
    results = [infer_scene(s, model, net, graph_options=options) for s in test_set]
    report, _ = evaluate_results(results, test_set)
    label = "appearance + geometry" if include_pose else "appearance only"
    print(f"{label:>22}: final loss {log[-1]['total_loss']:.4f}  "
          f"pairwise F1 {report['reid']['pairwise_f1']:.3f}  strict F1 {report['reid']['f1']:.3f}  "
          f"geo MAE {report['geo']['mae_m']:.2f} m")

# ## Looking at one scene
#
# The last model trained used geometry; inspect what it grouped.

res = results[0]
ids = [d.gt_object_id for d in res.detections]
for k, comp in enumerate(res.components):
    members = sorted(comp)
    print(f"component {k}: nodes {members} -> truth ids {[ids[i] for i in members]}")
print("edge scores above 0.5:", int(np.sum(res.graph.edge_scores >= 0.5)), "of", len(res.graph.edges))
