"""File formats, LiDAR ingestion, synthetic data and model persistence."""

from .kitti import IGNORE_ID, OOD_ID, LabelMap, PointCloud, attach_labels, read_kitti_labels, read_kitti_scan, read_label_map
from .persist import load_ensemble, load_model, save_ensemble, save_model
from .projection import RangeImage, pixel_indices, range_to_pgm, spherical_project, write_range_image
from .synth import SynthClass, SynthData, SynthSpec, default_spec_text, parse_synth_spec, synth_generate
from .tensorfile import decode_tensor, encode_tensor, read_tensor, write_tensor
