"""Python bindings for the pcet point-cloud tracker."""

from ._pcet import (
    Box3D,
    ConfigError,
    FormatError,
    Model,
    NumericError,
    arp_identity,
    center_distance,
    cli,
    config_digest,
    fps,
    generate_sequence,
    iou3d,
    points_in_box,
    precision_auc,
    read_velodyne,
    split_of,
    success_auc,
    tkt_loss,
    transform_box,
    wrap_angle,
    write_velodyne,
)

__all__ = [
    "Box3D",
    "ConfigError",
    "FormatError",
    "Model",
    "NumericError",
    "arp_identity",
    "center_distance",
    "cli",
    "config_digest",
    "fps",
    "generate_sequence",
    "iou3d",
    "points_in_box",
    "precision_auc",
    "read_velodyne",
    "split_of",
    "success_auc",
    "tkt_loss",
    "transform_box",
    "wrap_angle",
    "write_velodyne",
]
