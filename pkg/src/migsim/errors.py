"""Exception types raised across migsim."""


class MigsimError(Exception):
    pass


class ParseError(MigsimError):
    """A catalog, scenario, trace or workspace string could not be parsed."""


class ValidationError(MigsimError):
    """Input parsed but violates a geometric or schema invariant."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NoFit(MigsimError):
    """No profile in the catalog can hold the requested memory."""


class CapacityError(MigsimError):
    pass


class IllegalTransition(MigsimError):
    def __init__(self, rule, message=""):
        self.rule = rule
        super().__init__(f"{rule}: {message}" if message else rule)


class OutOfOrderSample(MigsimError):
    pass


class UnsatisfiableJob(MigsimError):
    """The job cannot run even on an idle, unpartitioned GPU."""


class ScenarioError(MigsimError):
    pass
