"""Table structure recognition by splitting an image into grids, embedding them and merging them into cells."""

from .estimator import SEMTableRecognizer, annotation_structure
from .metrics import adjacency_relations, exact_structure, f1, teds, teds_structures
from .model import ModelConfig, SEMNet
from .structure import (BBox, Cell, GridLattice, TableStructure, assemble_structure, iou, match_content,
                        to_html, to_html_tree)
from .supervision import Annotation, make_merge_targets, make_separator_labels
from .synth import SynthConfig, synth_table
from .training import TrainConfig, lr_schedule, objective

__version__ = "0.1.0"
