"""Supervised classification of streaming trees with the signature kernel."""
from .estimators import PrecomputedSVC, SKTreeClassifier, TreeKernel
from .ingest import (EventTypeMap, FeaturizationConfig, HostEvent, LabeledDataset,
                     build_process_trees, normalize_tree, parse_events)
from .sig_numerics import (BaseKernel, PdeGrid, TruncatedTensor, chen_product,
                           expected_sig_truncated, sig_inner_truncated, sig_kernel_pde,
                           sig_truncated)
from .synthetic import generate_synthetic
from .tree_kernel import GramMatrix, MmdConfig, gram, mmd_squared, tree_kernel_sigma
from .tree_model import (PiecewiseLinearPath, StreamingTree, TimeSeries, branch_count,
                         enumerate_branches, event_count, interpolate)

__version__ = "0.1.0"
