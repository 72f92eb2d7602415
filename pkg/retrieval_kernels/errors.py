"""
Error types raised across the package.

Every error carries a machine-parsable ``code`` and the process exit status the
CLI uses when the error escapes an action.
"""


class RetrievalKernelError(Exception):
    code = "ERROR"
    exit_status = 1

    def one_line(self) -> str:
        msg = " ".join(str(self).split())
        return f"error: {self.code}: {msg}"


class InvalidInput(RetrievalKernelError, ValueError):
    code = "INVALID_INPUT"
    exit_status = 2


class InvalidConfig(RetrievalKernelError, ValueError):
    code = "INVALID_CONFIG"
    exit_status = 3


class IntegrityError(RetrievalKernelError, ValueError):
    code = "INTEGRITY"
    exit_status = 4


class TransportError(RetrievalKernelError, RuntimeError):
    code = "TRANSPORT"
    exit_status = 5

    def __init__(self, message: str, retries: int = 0):
        super().__init__(f"{message} (after {retries} retries)")
        self.retries = retries


class ProtocolError(RetrievalKernelError, RuntimeError):
    code = "PROTOCOL"
    exit_status = 6
