"""Deformation-graph skinning (LBS, DQS, adaptive hybrid), surface Gaussians and transform fitting."""
from .errors import DataError, HybridSkinError, NumericalError, ObjParseError, UsageError
from .fitting import FrameParams, fit_frame, fit_sequence, objective
from .graph import DeformationGraph, build_graph, sample_control_nodes
from .mesh import Mesh, load_obj, write_obj
from .skinning import NodeTransform, NodeTransforms, deform_mesh

__version__ = "0.1.0"
