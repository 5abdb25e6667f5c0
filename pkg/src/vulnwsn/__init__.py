"""Vulnerability prediction from weighted class-dependency networks."""

__version__ = "0.1.0"

from .dataset import LabeledDataset, StratifiedFolds, join, run_cv, stratified_folds, undersample
from .evalstats import ConfusionMatrix, aggregate, confusion, measures, wilcoxon_rank_sum
from .extractor import SourceUnit, compute_cyclomatic, extract_tree, parse_source
from .facts import CodeFacts, load_facts, save_facts
from .learners import FeedForwardNetwork, GaussianNaiveBayes, RandomForest, classify, make_learner
from .netmetrics import betweenness_all, clustering_coefficient, feature_table, int_of_in, int_of_out
from .vulnlabels import count_vulnerabilities, parse_unified_diff, resolve_classes, to_labels
from .wsn import build_wsn, edge_weight, tally_dependencies
