"""Exception hierarchy shared by every module of the engine."""


class MultifuseError(Exception):
    """Base class for all engine errors."""


class InvalidVectorError(MultifuseError, ValueError):
    pass


class DimensionMismatchError(MultifuseError, ValueError):
    pass


class ZeroVectorError(MultifuseError, ValueError):
    pass


class EmptySentenceError(MultifuseError, ValueError):
    pass


class EmptyWordError(MultifuseError, ValueError):
    pass


class ConfigError(MultifuseError, ValueError):
    pass


class IncompatibleFusionError(MultifuseError, ValueError):
    pass


class ParseError(MultifuseError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class FormatError(MultifuseError, ValueError):
    pass


class DuplicateIdError(MultifuseError, KeyError):
    def __init__(self, item_id):
        self.item_id = item_id
        super().__init__(f"duplicate id: {item_id!r}")

    def __str__(self) -> str:
        return self.args[0]


class EmptyIndexError(MultifuseError, ValueError):
    pass


class InvalidKError(MultifuseError, ValueError):
    pass


class VersionError(MultifuseError, ValueError):
    def __init__(self, found: int, expected: int):
        self.found = found
        self.expected = expected
        super().__init__(f"format version mismatch: file has v{found}, reader expects v{expected}")


class ChecksumError(MultifuseError, ValueError):
    pass


class ValidationError(MultifuseError, ValueError):
    """One or more catalog records failed validation.

    ``problems`` holds ``(line_number, message)`` pairs.
    """

    def __init__(self, problems: list[tuple[int, str]]):
        self.problems = list(problems)
        lines = "; ".join(f"line {n}: {msg}" for n, msg in self.problems[:10])
        more = f" (+{len(self.problems) - 10} more)" if len(self.problems) > 10 else ""
        super().__init__(lines + more)


class EmptyCatalogError(MultifuseError, ValueError):
    pass


class BundleError(MultifuseError, OSError):
    pass


class MissingLabelError(MultifuseError, ValueError):
    pass


class IncompatibleQueryError(MultifuseError, ValueError):
    pass


class InvalidShortlistError(MultifuseError, ValueError):
    pass


class SpecError(MultifuseError, ValueError):
    pass
