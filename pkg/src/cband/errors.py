"""Exception types shared across the pipeline.

Each class carries a ``kind`` used by the CLI for machine-readable errors.
"""


class CbandError(Exception):
    kind = "CbandError"

    def __init__(self, *args):
        super().__init__(*args)
        self.kind = type(self).__name__


# ingest
class ParseError(CbandError):
    pass


class TruncatedStream(CbandError):
    pass


class DimensionMismatch(CbandError):
    pass


class DecodeError(CbandError):
    pass


class NoFrames(CbandError):
    pass


class MissingFrameRate(CbandError):
    pass


class UnsupportedFormat(CbandError):
    pass


# backbone
class ManifestMissing(CbandError):
    pass


class ManifestMismatch(CbandError):
    pass


class ModelLoadError(CbandError):
    pass


class InputTooSmall(CbandError):
    pass


# nss
class DegenerateInput(CbandError):
    pass


class FeatureCacheError(CbandError):
    pass


# regressor
class ShapeError(CbandError):
    pass


class DivergenceError(CbandError):
    def __init__(self, step, loss=float("nan")):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step


class EmptyInput(CbandError):
    pass


class ModelFormatError(CbandError):
    pass


# eval / sureal / synth
class DataIntegrityError(CbandError):
    pass


class UnderdeterminedError(CbandError):
    pass


class EmptyLadder(CbandError):
    pass
