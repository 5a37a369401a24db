"""Exception hierarchy shared across the pipeline."""


class NetInterpError(Exception):
    """Base class for every error raised by this package."""

    code = "error"


class IngestError(NetInterpError, ValueError):
    """Input document could not be turned into a report. Fatal for a request."""


class MalformedDocument(IngestError):
    code = "malformed_document"


class MissingRequiredField(IngestError):
    code = "missing_required_field"

    def __init__(self, field: str):
        super().__init__(f"required field missing: {field}")
        self.field = field


class RangeViolation(IngestError):
    code = "range_violation"


class InvalidOffset(NetInterpError, ValueError):
    code = "invalid_offset"


class ConfigError(NetInterpError):
    code = "config_error"
