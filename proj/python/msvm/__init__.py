"""Python interface to the msvm C++ library."""

from ._msvm import (
    ConfigError,
    DimensionError,
    IoError,
    Model,
    NumericError,
    apply_kernel,
    arch,
    count_flops,
    count_params,
    decay_map,
    flatten,
    init_ssm_params,
    known_variants,
    min_route_distance,
    route_names,
    route_order,
    run_cli,
    scan_cost,
    selective_kernel,
    selective_scan,
    ss2d,
    unflatten,
    verify,
)

__all__ = [name for name in dir() if not name.startswith("_")]
