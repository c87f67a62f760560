"""saliencybench: pixel-importance estimators and their evaluation on a
small synthetic contrast-detection task."""

from .nn import (BackwardMode, Network, Tape, backward,
                 finite_difference_gradient)
from .model import (ModelConfig, TrainedModel, balanced_accuracy, build_network,
                    class_score, load_model, predict_class, predict_prob,
                    save_model, train)
from .data import (Dataset, LabeledSample, SceneParams, generate_dataset,
                   generate_sample, load_dataset, read_pgm, write_dataset,
                   write_pgm)
from .estimators import (ESTIMATOR_NAMES, EstimatorParams, Heatmap,
                         backprop_saliency, compute_heatmap,
                         deconvolution_saliency, expected_gradients,
                         integrated_gradients, postprocess, random_baseline,
                         read_heatmap, smoothgrad, write_heatmap)
from .segmentation import (FelzParams, RankedRegions, RegionMap,
                           felzenszwalb_segment, region_mean_scores)
from .metrics import (DscCurve, PerturbationCurve, RocCurve, auc, dsc,
                      dsc_curve, fidelity, perturbation_curves,
                      roc_curve_mean, xrai_top_percent)

__version__ = "0.1.0"
