class TableError(Exception):
    """Base class for table read/write failures."""


class NotATableFile(TableError):
    def __init__(self, msg: str = "not a table file"):
        super().__init__(msg)


class CorruptIndex(TableError):
    def __init__(self, msg: str = "corrupt index"):
        super().__init__(msg)


class CorruptIndexBlock(TableError):
    def __init__(self, msg: str = "corrupt index block"):
        super().__init__(msg)


class CorruptBlock(TableError):
    def __init__(self, msg: str = "corrupt block"):
        super().__init__(msg)


class CorruptLocator(TableError):
    def __init__(self, msg: str = "corrupt locator"):
        super().__init__(msg)


class UnsortedKeys(ValueError):
    def __init__(self, msg: str = "keys not strictly sorted"):
        super().__init__(msg)


class DegenerateModel(ValueError):
    """Raised when encoded keys have zero variance and no slope can be fit."""
