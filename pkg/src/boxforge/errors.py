"""Exception hierarchy.

Every error raised on bad input derives from :class:`BoxforgeError`. The CLI
maps :class:`ConfigError` to exit code 2 and everything else to exit code 3.
"""


class BoxforgeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(BoxforgeError, ValueError):
    """Invalid configuration or argument combination."""


class InvalidGeometryError(BoxforgeError, ValueError):
    """Non-finite or otherwise unusable box coordinates."""


class InvalidMetaError(BoxforgeError, ValueError):
    """Image metadata with non-positive dimensions."""


class ShapeError(BoxforgeError, ValueError):
    """Image buffers with incompatible dimensions."""


class InputError(BoxforgeError, ValueError):
    """Input data that violates an operation's preconditions."""


class ValidationError(InputError):
    """A field value outside its allowed range."""


class ReferentialIntegrityError(InputError):
    """Records referencing ids that do not exist.

    Attributes:
        kind: What kind of id dangles ("image_id", "category_id").
        ids: Sorted offending ids.
    """

    def __init__(self, kind, ids):
        self.kind = kind
        self.ids = sorted(set(ids))
        super().__init__(f"unknown {kind}: {self.ids}")


class ParseError(BoxforgeError):
    """Malformed JSON. ``offset`` is the byte offset of the failure."""

    def __init__(self, path, offset, msg):
        self.path = path
        self.offset = offset
        super().__init__(f"{path}: parse error at byte {offset}: {msg}")


class DecodeError(BoxforgeError):
    """Unsupported or corrupt image stream."""
