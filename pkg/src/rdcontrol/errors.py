"""Typed failures. Each carries a machine-readable code and the CLI exit status."""


class RDControlError(Exception):
    exit_code = 3
    code = "numerical_failure"

    def __init__(self, message="", **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        return {"error": type(self).__name__, "code": self.code, "message": str(self), "details": self.details}


class ConfigInvalid(RDControlError):
    exit_code = 2
    code = "config_invalid"

    def __init__(self, field, message=""):
        super().__init__(f"invalid config field '{field}': {message}" if message else f"invalid config field '{field}'",
                         field=field)
        self.field = field


# assumption violations (exit 4)

class AssumptionViolation(RDControlError):
    exit_code = 4
    code = "assumption_violation"


class LambdaZeroUnsupported(AssumptionViolation):
    code = "lambda_zero_unsupported"


class MassConditionViolated(AssumptionViolation):
    code = "mass_condition_violated"


# numerical failures (exit 3)

class DegenerateInput(RDControlError):
    code = "degenerate_input"


class ShapeMismatch(RDControlError):
    code = "shape_mismatch"


class NonfiniteState(RDControlError):
    code = "nonfinite_state"


class BlowupDetected(RDControlError):
    code = "blowup_detected"


class OrderTooHigh(RDControlError):
    code = "order_too_high"


class RankDeficient(RDControlError):
    code = "rank_deficient"


class NoDecayDetected(RDControlError):
    code = "no_decay_detected"


class WeightedSourceUnbounded(RDControlError):
    code = "weighted_source_unbounded"


class ScheduleExhausted(RDControlError):
    code = "schedule_exhausted"


class ZeroDenominator(RDControlError):
    code = "zero_denominator"


class IllConditioned(RDControlError):
    code = "ill_conditioned"


class NotConverged(RDControlError):
    code = "not_converged"
