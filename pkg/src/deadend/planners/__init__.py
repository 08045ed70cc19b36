"""Classical baselines: Hybrid A* with pure pursuit, and follow-the-gap."""

from deadend.planners.controllers import (Controller, FTGController, HybridAStarController, NullController,
                                          Percept, PolicyController)
from deadend.planners.ftg import FollowTheGap, FTGParams, ftg_step
from deadend.planners.hybrid_astar import NoPath, PlannedPath, PlannerParams, hybrid_astar, motion_primitives
from deadend.planners.pursuit import PurePursuit, pure_pursuit, pursuit_steering

__all__ = [
    "Controller", "FTGController", "HybridAStarController", "NullController", "Percept", "PolicyController",
    "FollowTheGap", "FTGParams", "ftg_step", "NoPath", "PlannedPath", "PlannerParams", "hybrid_astar",
    "motion_primitives", "PurePursuit", "pure_pursuit", "pursuit_steering",
]
