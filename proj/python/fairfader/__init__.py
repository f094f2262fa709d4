"""Attribute-invariant (fader) representation learning core."""

from _fairfader import (  # noqa: F401
    ArchSpec,
    Encoder,
    __version__,
    accuracy_variance,
    attr_planes,
    build_encoder,
    class_weights,
    conv2d,
    deconv2d,
    gen_synthetic,
    gradcheck_suite,
    load_encoder,
    parse_utk_filename,
    stratified_accuracy,
)
