"""Exception types shared across the pipeline."""


class EmptyTrainingSet(ValueError):
    """Training or normalization requested on zero samples."""


class NotBootstrapped(RuntimeError):
    """Pipeline asked for a prediction before an initial model exists."""


class DegenerateBootstrap(RuntimeError):
    """Bootstrap epochs kept producing a single class."""


class StorageFailure(OSError):
    """A persistent sink (CSV store, report, checkpoint) was unwritable."""


class EmptyTimeline(ValueError):
    """Accuracy requested on an empty timeline."""


class IncomparableTimelines(ValueError):
    """Paired significance test on timelines with different truth sequences."""
