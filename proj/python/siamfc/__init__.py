"""Fully-convolutional Siamese tracker: networks, training, tracking and evaluation."""

from ._core import (
    BoundingBox,
    ChecksumError,
    ConfigError,
    Error,
    FormatError,
    IoError,
    Model,
    NumericError,
    ShapeError,
    TruncatedError,
    VersionError,
    crop_scale,
    curate,
    evaluate,
    extract_crop,
    infer_shapes,
    iou,
    label_map,
    logistic_loss,
    map_loss,
    ope_auc,
    set_num_threads,
    synth_dataset,
    synth_sequence,
    track,
    train,
    xcorr,
)

__all__ = [name for name in dir() if not name.startswith("_")]
