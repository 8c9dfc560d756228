"""Exception hierarchy shared by the compiler, simulator and runtime."""

from __future__ import annotations


class JaccError(Exception):
    """Base class for every error raised by jaccsim."""


class SourceError(JaccError):
    """A diagnostic tied to a position in DSL or task-graph text."""

    def __init__(self, message: str, line: int = 0, col: int = 0, expected=None):
        self.message = message
        self.line = line
        self.col = col
        self.expected = sorted(expected) if expected else []
        where = f"{line}:{col}: " if line else ""
        extra = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{where}{message}{extra}")


class ParseError(SourceError):
    pass


class CompileError(JaccError):
    """Compilation failed; `diagnostics` holds every collected problem."""

    def __init__(self, message: str, diagnostics=None):
        self.diagnostics = list(diagnostics or [])
        super().__init__(message)


class AssemblyError(SourceError):
    pass


class InternalCompilerError(JaccError):
    pass


class LaunchError(JaccError):
    pass


class InvalidArgument(LaunchError):
    pass


class KernelTrap(LaunchError):
    """Raised when a kernel stops abnormally on the device."""

    kind = "trap"

    def __init__(self, kernel: str, thread: int, detail: str = "", task=None):
        self.kernel = kernel
        self.thread = thread
        self.detail = detail
        self.task = task
        super().__init__(self._render())

    def _render(self) -> str:
        msg = f"{self.kind} in kernel '{self.kernel}' (thread {self.thread})"
        if self.detail:
            msg += f": {self.detail}"
        if self.task is not None:
            msg += f" [task {self.task}]"
        return msg

    def with_task(self, task):
        self.task = task
        self.args = (self._render(),)
        return self


class BoundsTrap(KernelTrap):
    kind = "BoundsTrap"


class BarrierDivergenceTrap(KernelTrap):
    kind = "BarrierDivergenceTrap"


class MemoryFault(KernelTrap):
    kind = "MemoryFault"


class RuntimeStateError(JaccError):
    """A task graph or host object was used in the wrong lifecycle state."""


class ObjectLockedError(RuntimeStateError):
    pass
