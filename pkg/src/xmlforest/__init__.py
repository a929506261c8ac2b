"""
xmlforest - extreme multilabel classification with instance-tree forests.

Each tree recursively clusters training instances with spherical k-means
on hashed projections of their label vectors and routes test points to a
leaf by cosine similarity to hashed feature centroids. Trees train in
parallel, on one machine or across workers that send their trees to a
master.
"""

__version__ = "1.0.0"
__license__ = "MIT"

from .data_io import read_dataset, write_dataset
from .evaluation import evaluate, precision_at_k
from .forest import ForestModel, predict_forest, predict_forest_batch, train_forest
from .sparse import Dataset, SparseMatrix, SparseVec
from .storage import ModelStore, deserialize_model, serialize_model
from .tree import TrainConfig, predict_tree, train_tree

__all__ = [
    "Dataset",
    "ForestModel",
    "ModelStore",
    "SparseMatrix",
    "SparseVec",
    "TrainConfig",
    "deserialize_model",
    "evaluate",
    "precision_at_k",
    "predict_forest",
    "predict_forest_batch",
    "predict_tree",
    "read_dataset",
    "serialize_model",
    "train_forest",
    "train_tree",
    "write_dataset",
]
