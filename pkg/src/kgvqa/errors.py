"""Exception and warning types shared across the package."""

from __future__ import annotations


class KGVQAError(Exception):
    """Base class for all package errors."""


class DataError(KGVQAError):
    """Input data is malformed or inconsistent (maps to CLI exit code 2)."""


# -- knowledge graph loading -------------------------------------------------

class GraphLoadError(DataError):
    pass


class MalformedLine(GraphLoadError):
    def __init__(self, line_no: int, source: str = "", detail: str = ""):
        self.line_no = line_no
        self.source = source
        msg = f"malformed line {line_no}"
        if source:
            msg += f" in {source}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class UnlabeledId(GraphLoadError):
    def __init__(self, id_: str):
        self.id = id_
        super().__init__(f"id {id_!r} is referenced by a triple but has no label")


class DuplicateMeta(GraphLoadError):
    def __init__(self, entity: str):
        self.entity = entity
        super().__init__(f"entity {entity!r} has more than one meta record")


# -- sampling / building -----------------------------------------------------

class AnchorIneligible(KGVQAError):
    def __init__(self, anchor: str, reason: str):
        self.anchor = anchor
        self.reason = reason
        super().__init__(f"anchor {anchor!r} is ineligible: {reason}")


class MissingLabel(DataError):
    def __init__(self, id_: str):
        self.id = id_
        super().__init__(f"no label for id {id_!r}")


class DuplicateOption(KGVQAError):
    def __init__(self, text: str):
        self.text = text
        super().__init__(f"option text {text!r} occurs more than once")


class BrokenPath(DataError):
    def __init__(self, detail: str):
        super().__init__(f"broken path: {detail}")


class CorpusExhausted(UserWarning):
    """Valid instances ran out before a split reached its target size."""


# -- answering ---------------------------------------------------------------

class TransportError(KGVQAError):
    """A remote endpoint could not be reached after all retries."""


class ProtocolError(KGVQAError):
    """A remote endpoint replied with a non-conforming envelope."""


# -- causal engine -----------------------------------------------------------

class NoEligiblePairs(KGVQAError):
    def __init__(self, kind: str):
        self.kind = kind
        super().__init__(f"no eligible intervention pairs for {kind}")


class InvalidPair(KGVQAError):
    """An intervention pair violates the invariants of its kind."""


# -- agent -------------------------------------------------------------------

class DecompositionUnparseable(KGVQAError):
    pass


class ToolFailure(KGVQAError):
    pass
