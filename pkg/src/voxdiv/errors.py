"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: InvalidInputError -> 2,
NumericError -> 3. Everything else is a plain bug.
"""


class VoxdivError(Exception):
    """Base class for all package errors."""


class InvalidInputError(VoxdivError):
    """Bad user input: malformed files, invalid flags, out-of-range specs."""


class InvalidSpecError(InvalidInputError):
    """Shape spec cannot be rasterized (e/f < 1, volume too small, ...)."""


class EmptyMaskError(InvalidInputError):
    """An operation that needs foreground voxels got none."""


class DegeneratePatternError(InvalidInputError):
    """A division pattern lost one of its daughters."""


class FileFormatError(InvalidInputError):
    """Corrupt or wrong-version file (VXG, checkpoint, manifest)."""


class NumericError(VoxdivError):
    """Numeric failure at run time (NaN divergence, degenerate statistics)."""
