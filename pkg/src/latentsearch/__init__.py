"""Latent fingerprint identification engine.

Pipeline: images -> ridge fields and ROI -> minutiae maps -> minutiae and
texture templates with compressed / product-quantized descriptors ->
second-order graph matching -> fused scores -> ranked candidate lists.
"""

from .core import (CandidateEntry, CandidateList, Descriptor, DescriptorStage,
                   Minutia, MinutiaKind, MinutiaeTemplate, RidgeFields,
                   SourceTag, TextureTemplate, angle_diff,
                   deserialize_record, deserialize_template,
                   serialize_record, serialize_template, wrap_angle)
from .descriptor import (CompressorModel, PatchSpec, PQCodebook, adc_distance,
                         build_adc_table, calibrate_d0, compress_descriptor,
                         extract_descriptor, quantize_descriptor, train_compressor,
                         train_pq)
from .matcher import (Correspondence, MatchResult, compare_minutiae_templates,
                      compare_texture_templates, fuse_scores,
                      normalize_similarity, second_order_match,
                      select_top_correspondences, similarity_matrix)
from .minutiae_map import (EncoderParams, MinutiaeMap, decode_minutiae_map,
                           detect_minutiae_baseline, encode_minutiae_map,
                           interpolate_orientation, vote_common_minutiae)
from .preprocess import (PipelineTag, ProcessedImage, contrast_enhance,
                         decompose_texture, gabor_enhance, stft_enhance)
from .ridges import (PatchSimilarity, RidgeDictionary, build_dictionary,
                     estimate_ridge_fields, patch_similarity, segment_roi)
from .search import (CmcCurve, GalleryIndex, LatentTemplates, PipelineConfig,
                     ReferenceTemplates, VirtualMinutiaGrid,
                     build_latent_templates, build_reference_template,
                     evaluate_cmc, extract_virtual_minutiae, load_config,
                     load_gallery, score_reference, search_gallery,
                     write_manifest)

__version__ = "0.1.0"
