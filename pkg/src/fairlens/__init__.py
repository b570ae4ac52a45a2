"""Locate unfairness in feed-forward classifiers and pick a repair for it."""

from .causality import AieRecord, ResponsibilityStats, analyze_all, causality_attribute, causality_neuron
from .dataset import Dataset, Schema, encode, load_csv, load_preset, load_schema, split, synth_generate
from .metrics import FairnessMetric, MetricKind, accuracy, cds, gds, spd
from .model import MLP, AttributeTarget, Intervention, NeuronTarget, TrainConfig, forward, predict, train
from .repair import CriticalRegion, RepairOutcome, repair_in, repair_post, repair_pre, reweigh
from .selector import Category, Recommendation, recommend, select_category, select_method

__version__ = "0.1.0"
