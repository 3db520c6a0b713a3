"""Exporter exceptions. Input problems map to CLI exit code 2."""


class ExportError(Exception):
    pass


class EncoderUnavailable(ExportError):
    """The named encoder cannot be constructed in this environment."""


class LayerIndexInvalid(ExportError):
    pass


class EmptyClassList(ExportError):
    """No classes or no templates to build prototypes from."""


class DuplicateClass(ExportError):
    pass
