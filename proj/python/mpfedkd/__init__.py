"""Multi-prototype federated knowledge distillation simulator (C++ core)."""

from ._core import (  # noqa: F401
    ConfigError,
    DataError,
    Error,
    NumericError,
    ShapeError,
    accuracy,
    aggregate_parameters,
    aggregate_prototypes,
    average_accuracy,
    ce_loss,
    chac,
    chac_centroids,
    delta_ssq,
    init_parameters,
    kmeans,
    lemgp_repulsive,
    macro_f1,
    partition_json,
    resolve_config,
    rmse_mae,
    run_experiment,
    skd_loss,
    synth_blobs,
)

__all__ = [name for name in dir() if not name.startswith("_")]
