"""Exception hierarchy shared by every module in the package."""


class OocError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(OocError, ValueError):
    pass


class ValidationError(OocError, ValueError):
    pass


class LabelIndexError(OocError, IndexError):
    pass


class EmptySceneError(ValidationError):
    pass


class StateError(OocError, RuntimeError):
    """Operation called in the wrong lifecycle phase (e.g. EM before pretraining)."""


class UnsupportedError(OocError):
    pass


class DegenerateInputError(OocError, ValueError):
    """Metric undefined for the input, e.g. AUC with a single class present."""


class ConfigError(OocError, ValueError):
    pass


# -- ingestion -------------------------------------------------------------


class IngestError(OocError):
    """Base for every structured failure the annotation parsers can report."""


class ParseError(IngestError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SchemaError(IngestError, ValueError):
    pass


class ReferentialIntegrityError(IngestError, ValueError):
    def __init__(self, kind: str, ref_id):
        super().__init__(f"annotation references unknown {kind} id {ref_id!r}")
        self.kind = kind
        self.ref_id = ref_id


class AnnotationValidationError(IngestError, ValueError):
    def __init__(self, message: str, index: int):
        super().__init__(f"annotation #{index}: {message}")
        self.index = index


class MappingError(IngestError, ValueError):
    pass


# -- checkpoints -----------------------------------------------------------


class CheckpointError(OocError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointDimensionError(CheckpointError):
    pass
