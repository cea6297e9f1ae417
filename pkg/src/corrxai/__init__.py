"""Exemplar-based image classification with correspondence re-ranking.

Pipelines: a cosine kNN over global embeddings shortlists gallery images;
patch-wise optimal transport or correspondence-map similarity re-ranks the
shortlist; the dominant class of the re-ranked top-k is the prediction,
shipped with a visual-correspondence explanation. Companion analytics
evaluate accuracy, explanation diversity, and human-AI team performance
from trial logs.
"""

from .explain import (BoxPair, ExplanationRecord, SupportImage,
                      build_explanation, parse_explanation,
                      serialize_explanation)
from .knn import (Prediction, RankedNeighbor, cosine_distance, knn_classify,
                  majority_vote, rank_gallery)
from .metrics import (AccuracyReport, DiversityReport, evaluate_topk,
                      explanation_diversity, ms_ssim, rgb_to_gray)
from .pipeline import ClassifierConfig, make_classifier
from .rerank import (ArgmaxCorrespondenceSource, CorrespondenceMap,
                     FileCorrespondenceSource, Keypoint, KeypointSet,
                     RerankPair, RerankResult, argmax_correspondence,
                     chm_corr_classify, chm_corr_plus_classify, chm_score,
                     emd_corr_classify, keypoint_patches,
                     load_correspondence_file, write_correspondence_file)
from .store import (DatasetManifest, Dims, FeatureRecord, GalleryIndex,
                    ManifestEntry, ValidationReport, load_feature_bank,
                    load_manifest, validate_manifest, write_feature_bank,
                    write_manifest)
from .teams import (SweepRow, SweepTable, TrialLog, TrialResponse,
                    accept_reject_breakdown, difficulty_level,
                    load_trial_log, mann_whitney_u, team_accuracy,
                    threshold_sweep, user_accuracy, write_trial_log)
from .transport import (CostMatrix, FlowMatrix, FlowPair, SinkhornError,
                        cost_matrix, emd_distance, sinkhorn_flow,
                        top_l_flows, transport_cost)
from .weights import (CCMap, PatchMask, binarize_map, cross_correlation_map,
                      uniform_marginal, weights_to_marginal)

__version__ = "0.1.0"
