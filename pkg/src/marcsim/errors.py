"""Exception types raised across the simulator."""


class MarcSimError(Exception):
    """Base class; the CLI turns these into a one-line error record."""

    kind = "error"


class UnorderedTrace(MarcSimError):
    kind = "unordered_trace"

    def __init__(self, index):
        super().__init__(f"timestamp decreases at command {index}")
        self.index = index


class TimingViolation(MarcSimError):
    kind = "timing_violation"

    def __init__(self, index, gap=None):
        msg = f"ACT-to-ACT gap below tRCmin at command {index}"
        if gap is not None:
            msg += f" (gap={gap} ns)"
        super().__init__(msg)
        self.index = index
        self.gap = gap


class ParseError(MarcSimError):
    kind = "parse_error"

    def __init__(self, line, content, reason=""):
        super().__init__(f"line {line}: {reason or 'malformed'}: {content!r}")
        self.line = line
        self.content = content


class BelowTrcMin(MarcSimError):
    kind = "below_trc_min"


class WindowFull(MarcSimError):
    kind = "window_full"


class NotPending(MarcSimError):
    kind = "not_pending"


class ZeroBaseline(MarcSimError):
    kind = "zero_baseline"


class ConfigError(MarcSimError):
    kind = "config_error"
