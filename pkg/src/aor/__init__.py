"""Anatomical-ontology tooling for chest X-ray instruction data.

Builds chain-of-thought VQA samples and region-sentence report pairs from an
ontology knowledge base and per-study scene graphs, with the region-triplet
text protocol, RoIAlign geometry and evaluation metrics used around them.
"""

from __future__ import annotations

from .cot import QueryTarget, compile_template, count_templates, enumerate_templates, instantiate
from .expand import expand_corpus, expand_sample
from .geometry import NormalizedBox, iou, perturb_box, roi_align
from .ontology import OntologyKB, load_kb, reference_kb, validate_kb
from .study import StudyGraph, build_study_graph, propagate_causal
from .triplets import TripletStreamParser, parse_cot, render_cot, serialize_triplet

__all__ = [
    "NormalizedBox",
    "OntologyKB",
    "QueryTarget",
    "StudyGraph",
    "TripletStreamParser",
    "build_study_graph",
    "compile_template",
    "count_templates",
    "enumerate_templates",
    "expand_corpus",
    "expand_sample",
    "instantiate",
    "iou",
    "load_kb",
    "parse_cot",
    "perturb_box",
    "propagate_causal",
    "reference_kb",
    "render_cot",
    "roi_align",
    "serialize_triplet",
    "validate_kb",
]
