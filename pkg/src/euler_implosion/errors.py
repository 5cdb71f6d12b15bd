"""Error types shared by all modules.

Every failure carries a short machine-readable ``code`` (for example
``OUT_OF_RANGE`` or ``SANDWICH_VIOLATION``).  Domain errors map to CLI exit
code 1, verification failures to exit code 2.
"""


class ProfileError(Exception):
    """Domain error: bad input, degenerate parameters, numerical breakdown."""

    exit_code = 1

    def __init__(self, code, message="", **details):
        self.code = code
        self.message = message
        self.details = details
        super().__init__(f"{code}: {message}" if message else code)


class VerificationError(ProfileError):
    """A certificate, margin or consistency check came out wrong."""

    exit_code = 2
