# standard
import logging
import os


class LogString:
    """
    One log event of the solver or the CLI. Subclasses below fix the wording of each event.
    `short` is the one-line summary, `full` adds detail (values, exception text) and is what gets logged.
    """
    short: str
    full: str
    context: str | None                                     # Shown as "[context] " before the message
    exception: Exception | None                             # Traceback is logged when the logger is at DEBUG
    logger: logging.Logger

    def __init__(self, short: str, full: str = None, context: str = None,
                 exception: Exception = None, logger_name: str = None):
        self.short = short
        self.full = full or short
        self.context = context
        self.exception = exception
        self.logger = logging.getLogger(logger_name or os.getenv("LOGGER_NAME", "root"))

    def __str__(self):
        return self.full

    def record(self, level: str) -> None:
        """Send the full message to the logger at the given level name."""
        level_number = logging.getLevelName(level.upper())
        prefix = f"[{self.context}] " if self.context else ""
        self.logger.log(
            level=level_number,
            msg=f"{prefix}{self.full}",
            exc_info=self.exception if self.logger.isEnabledFor(logging.DEBUG) else None)


########################
# codelist log strings #
########################

class CodeListBuilt(LogString):
    """Info about a traced right-hand side."""
    def __init__(self, n_state: int, n_lines: int, n_blocks: int, context: str = None):
        short = "Code list built."
        full = f"{short} States: {n_state}. Lines: {n_lines}. Sub-ODE blocks: {n_blocks}."
        super().__init__(short, full, context=context)


class ParamUpdated(LogString):
    """Parameter value changed in a code list."""
    def __init__(self, name: str, old_value: float, new_value: float, n_lines: int):
        short = f"Parameter '{name}' updated."
        full = f"{short} {old_value} -> {new_value}. Immediates recomputed: {n_lines}."
        super().__init__(short, full)


class SubODERegistered(LogString):
    """Standard function added to the sub-ODE registry."""
    def __init__(self, name: str, m: int):
        super().__init__(f"Registered sub-ODE function '{name}' with {m} output(s).")


##########################
# integrator log strings #
##########################

class SolveBegin(LogString):
    """Info about a starting integration."""
    def __init__(self, n_state: int, p: int, t_span: tuple[float, float], atol: float, rtol: float):
        short = "Starting Taylor integration."
        full = f"{short} States: {n_state}. Order: {p}. Interval: [{t_span[0]}, {t_span[1]}]. " \
               f"Tolerances: atol={atol:g}, rtol={rtol:g}."
        super().__init__(short, full)


class StepRejected(LogString):
    """Debug string for a rejected step."""
    def __init__(self, t: float, h: float, error: float, new_h: float):
        short = "Step rejected."
        full = f"{short} t={t:.17g}, h={h:.6g}, scaled error {error:.3g}. Retrying with h={new_h:.6g}."
        super().__init__(short, full)


class MaxStepsAbort(LogString):
    """Integration stopped by the step limit."""
    def __init__(self, max_steps: int, t: float):
        short = "Maximum number of steps exceeded."
        full = f"{short} Limit: {max_steps}. Reached t={t:.17g}. Aborting."
        super().__init__(short, full)


class SolveFinished(LogString):
    """Integration result summary."""
    def __init__(self, n_accepted: int, n_failed: int, t_end: float, time_s: float):
        short = "Finished Taylor integration."
        full = f"{short} Accepted steps: {n_accepted}. Rejected steps: {n_failed}. " \
               f"End: {t_end}. Time: {time_s:.3f} s."
        super().__init__(short, full)


##########################
# structural log strings #
##########################

class StructuralCheckFailed(LogString):
    """Offsets that are not structurally valid for a signature matrix."""
    def __init__(self, status: str, violations: list, context: str = None):
        short = f"Structural check: {status}."
        full = f"{short} Violations (row, column): {violations}." if violations else short
        super().__init__(short, full, context=context)


#####################
# bench log strings #
#####################

class ReferenceRun(LogString):
    """Info about the reference solution run of a sweep."""
    def __init__(self, problem: str, tolerance: float):
        short = "Computing reference solution."
        full = f"{short} Problem: {problem}. Tolerance: {tolerance:g}."
        super().__init__(short, full)


class SweepRowBegin(LogString):
    """Info about a tolerance sweep row."""
    def __init__(self, problem: str, tolerance: float, p: int):
        short = "Running sweep row."
        full = f"{short} Problem: {problem}. Tolerance: {tolerance:g}. Order: {p}."
        super().__init__(short, full)


class SweepRowFailed(LogString):
    """A sweep row that ended with an error. The suite continues."""
    def __init__(self, problem: str, tolerance: float, exception: Exception):
        short = "Sweep row failed."
        full = f"{short} Problem: {problem}. Tolerance: {tolerance:g}. " \
               f"{type(exception).__name__}: {exception}. Continuing."
        super().__init__(short=short, full=full, exception=exception)


class CsvWritten(LogString):
    """Result file written."""
    def __init__(self, path: str, n_rows: int):
        short = "Results saved."
        full = f"{short} Path: {path}. Rows: {n_rows}."
        super().__init__(short, full)


###################
# cli log strings #
###################

class ConfigMissing(LogString):
    """Config file not found, defaults are used."""
    def __init__(self, path: str):
        short = "Config file not found. Using defaults."
        full = f"{short} Path: {path}."
        super().__init__(short, full)


class CommandFailed(LogString):
    """CLI command ended with an error."""
    def __init__(self, command: str, exception: Exception):
        short = f"Command '{command}' failed."
        full = f"{short} {type(exception).__name__}: {exception}"
        super().__init__(short=short, full=full, exception=exception)
