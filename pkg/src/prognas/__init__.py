"""Progressive differentiable architecture search over cell-based networks,
built on a from-scratch reverse-mode autodiff engine."""

from .catalog import ALL_KINDS, OpKind, instantiate_op, op_param_count
from .cell import AlphaTable, CellSpec, MixedEdge, Schema, full_schema, init_alphas
from .config import RunConfig, desk_run_config, load_run_config, reference_schedule
from .data import Dataset, load_cifar10, split_half, synth_dataset
from .evalnet import EvalConfig, build_eval_net, cutout, drop_path, train_eval
from .genotype import (Genotype, connection_levels, derive_genotype,
                       genotype_parse, genotype_serialize, random_genotype,
                       refine_skips)
from .optim import OptimizerConfig, ParamStore, adam_step, cosine_lr, sgd_step
from .search import (DropoutPolicy, SearchSettings, StageConfig, StageSchedule,
                     prune_operations, run_progressive_search, run_stage)
from .supernet import SearchNetConfig, activation_count_proxy, build_supernet, dry_run
from .tensor import Tensor, precision, set_default_dtype

__version__ = "0.1.0"
