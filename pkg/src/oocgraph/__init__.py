"""Out-of-context object detection with a dual graph-convolution network."""

from .checkpoint import load_model, save_model
from .detect import ContextFreeClassifier, KlMode, Method, OocRecord, detect, kl_divergence, ooc_score
from .experiment import run_experiment
from .gcn import DEFAULT_WIDTHS, AdamWState, GcnModel, adamw_step, gcn_backward, gcn_forward, train_epochs
from .gcrn import EmHistory, Gcrn, LabelSource, cong_forward, em_train, predict, pretrain_repg
from .ingest import attach_oracle_appearance, corrupt_labels, parse_coco_annotations
from .metrics import accuracy_report, auc, roc_curve
from .scene import BoundingBox, ObjectNode, SceneGraph, Violation, build_scene_graph
from .synth import GenConfig, WorldModel, generate_dataset, generate_world

__version__ = "0.1.0"
