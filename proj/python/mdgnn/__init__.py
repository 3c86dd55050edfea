"""Permutation-equivariant GNNs with edge-graph bottleneck training for
cell-free massive MIMO: channel simulation, WMMSE/ZF/L-MMSE baselines,
structured-weight models, and the training/evaluation loop."""

from ._mdgnn import (
    ChannelRealization,
    GibConfig,
    Model,
    ModelConfig,
    SystemConfig,
    TrainConfig,
    build_model,
    eval_precoding,
    evaluate_model,
    format_percent,
    generate_channel,
    lmmse_basis,
    load_channel_snapshot,
    load_model,
    save_channel_snapshot,
    structure_param_count,
    sum_se_power,
    sum_se_precoding,
    train,
    wmmse_power,
    wmmse_precoding,
    worker_count,
    zf_basis,
)

__all__ = [
    "ChannelRealization",
    "GibConfig",
    "Model",
    "ModelConfig",
    "SystemConfig",
    "TrainConfig",
    "build_model",
    "eval_precoding",
    "evaluate_model",
    "format_percent",
    "generate_channel",
    "lmmse_basis",
    "load_channel_snapshot",
    "load_model",
    "save_channel_snapshot",
    "structure_param_count",
    "sum_se_power",
    "sum_se_precoding",
    "train",
    "wmmse_power",
    "wmmse_precoding",
    "worker_count",
    "zf_basis",
]
