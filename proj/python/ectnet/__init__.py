"""1D residual CNNs for eddy-current scan classification (bindings to the C++ core)."""

from ._ectnet import (
    NUM_CLASSES,
    CheckpointError,
    ConfigError,
    DataError,
    Error,
    Network,
    NumericError,
    ShapeError,
    __version__,
    architecture_names,
    class_name,
    count_flops,
    count_parameters,
    load_dataset,
    run_cli,
    synth_generate,
)


def main(argv=None):
    """Console entry point mirroring the `ectnet` executable."""
    import sys

    code, out, err = run_cli(list(sys.argv[1:] if argv is None else argv))
    sys.stdout.write(out)
    sys.stderr.write(err)
    return code


__all__ = [
    "NUM_CLASSES",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "Error",
    "Network",
    "NumericError",
    "ShapeError",
    "__version__",
    "architecture_names",
    "class_name",
    "count_flops",
    "count_parameters",
    "load_dataset",
    "main",
    "run_cli",
    "synth_generate",
]
