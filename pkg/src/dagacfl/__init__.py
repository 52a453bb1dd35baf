"""Asynchronous clustered federated learning over a DAG ledger."""
from .changepoint import SegmentPrior, confidence, first_changepoint
from .config import ConfigError, SimConfig, load_config
from .datasets import ClientDataset, ClusterPlan, load_mnist_idx, make_synthetic, partition
from .evaluation import build_graph, louvain, modularity, satisfaction_rate
from .fedcore import ModelSpec, ParamVector, TrainConfig, fedavg, init_params, local_train
from .ledger import DagLedger, GenesisConfig, Transaction
from .simulation import account_costs, run, run_fedavg_baseline
from .tipselect import TipSelectConfig, rank_tips, select

__all__ = [
    "SegmentPrior", "confidence", "first_changepoint", "ConfigError", "SimConfig", "load_config",
    "ClientDataset", "ClusterPlan", "load_mnist_idx", "make_synthetic", "partition", "build_graph",
    "louvain", "modularity", "satisfaction_rate", "ModelSpec", "ParamVector", "TrainConfig", "fedavg",
    "init_params", "local_train", "DagLedger", "GenesisConfig", "Transaction", "account_costs", "run",
    "run_fedavg_baseline", "TipSelectConfig", "rank_tips", "select",
]
