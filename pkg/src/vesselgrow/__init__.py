"""Vessel segmentation for X-ray angiograms by pixel classification and region growing."""
from .element import ElementParams, segment, segment_detailed, state_connectivity
from .evaluation import confusion, leave_one_image_out, rates, roc_auc
from .featureset import FEATURE_NAMES, build_training_rows, extract_stack, read_csv, write_csv
from .forest import ForestModel, ForestParams, load_model, predict_proba, save_model, train
from .imaging import load_dataset, load_gray, sample_reflected, save_mask

__version__ = "0.1.0"
