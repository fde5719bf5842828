"""Exception hierarchy shared by every module."""


class ReefError(Exception):
    """Base class for domain errors (CLI exit status 1)."""


class MeshError(ReefError):
    """A mesh violates a structural invariant or an operation precondition."""


class NonManifoldError(MeshError):
    """An edge is shared by three or more faces, or winding is inconsistent."""

    def __init__(self, message, edge=None):
        super().__init__(message)
        self.edge = edge


class ObjParseError(ReefError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AtlasError(ReefError):
    """Chart parameterization or packing failed."""


class BakeError(ReefError):
    pass


class DecodeError(ReefError):
    """A compressed blob is malformed, truncated or inconsistent."""


class PipelineError(ReefError):
    def __init__(self, message, stage_index=None, stage_name=None):
        if stage_index is not None:
            message = f"stage {stage_index} ({stage_name}): {message}"
        super().__init__(message)
        self.stage_index = stage_index
        self.stage_name = stage_name
