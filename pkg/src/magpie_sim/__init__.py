"""Seeded tabletop simulator for a perceive-plan-act manipulation pipeline.

Modules: ``pddl`` (typed STRIPS parser/printer), ``planner`` (grounding and
heuristic search), ``btree`` (plan-to-behavior-tree compilation and ticking),
``gripper`` (force calibration, 4-bar linkage, two-finger closing),
``perception`` (palm-camera rendering, segmentation, PCA grasps, relations),
``world`` (ground-truth scene, primitives, perturbations), ``executive``
(the replanning loop) and ``cli``.
"""

__version__ = "0.1.0"
