"""Exception hierarchy shared by every module.

Each class carries the numeric code the control protocol reports for it.
"""


class KinesimError(Exception):
    code = 500


class InvalidParamsError(KinesimError, ValueError):
    code = 400


class UnknownEntityError(KinesimError, KeyError):
    code = 404

    def __str__(self):
        # KeyError quotes its argument; keep the plain message.
        return str(self.args[0]) if self.args else ""


class InvalidStateError(KinesimError):
    code = 409


class URDFError(InvalidParamsError):
    """Raised when a URDF document cannot be turned into a valid model."""


class DanglingLinkError(URDFError):
    def __init__(self, joint, link):
        super().__init__(f"joint {joint!r} references undeclared link {link!r}")
        self.joint = joint
        self.link = link


class ChainError(InvalidParamsError):
    pass


class SpawnCollisionError(InvalidStateError):
    def __init__(self, pairs):
        names = ", ".join(f"{a}<->{b}" for a, b in pairs)
        super().__init__(f"spawn pose penetrates existing bodies: {names}")
        self.pairs = list(pairs)


class DegenerateCloudError(InvalidParamsError):
    pass


class UnsatisfiableSamplingError(InvalidStateError):
    pass
