"""Image registration by evolving free-form coordinate transforms.

Each candidate is a pair of expression trees mapping sensed pixel
coordinates into the reference frame; candidates are ranked by sampled
mutual information between the two images.
"""

__version__ = "0.1.0"

from .chromosome import Chromosome
from .evaluation import (
    ControlPointSet,
    GroundTruthTransform,
    make_synthetic_pair,
    make_texture_scene,
    rmse,
)
from .evolution import GpParams, RunResult, register
from .expr import EvalContext, Node, evaluate, parse, random_tree, serialize
from .fitness import FitnessResult, JointHistogram, SamplePlan, evaluate_fitness, mutual_information
from .imaging import GrayImage, difference_image, load, save, warp_to_reference

__all__ = [
    "Chromosome",
    "ControlPointSet",
    "EvalContext",
    "FitnessResult",
    "GpParams",
    "GrayImage",
    "GroundTruthTransform",
    "JointHistogram",
    "Node",
    "RunResult",
    "SamplePlan",
    "difference_image",
    "evaluate",
    "evaluate_fitness",
    "load",
    "make_synthetic_pair",
    "make_texture_scene",
    "mutual_information",
    "parse",
    "random_tree",
    "register",
    "rmse",
    "save",
    "serialize",
    "warp_to_reference",
]
