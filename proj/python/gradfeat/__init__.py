"""Gradient features from pretrained convolutional networks."""

from ._gradfeat import (
    Error,
    LinearHead,
    NetworkDef,
    ParamSet,
    TangentParams,
    adopt_ntk,
    build_network,
    default_network,
    desk_config,
    evaluate,
    fit_probe,
    forward_features,
    full_logits,
    gen_synthetic,
    head_jvp,
    jvp_forward,
    load_checkpoint,
    load_cifar_binary,
    load_idx,
    run_ablation,
    save_checkpoint,
    verify,
    vjp_theta2,
)

__version__ = "0.1.0"
