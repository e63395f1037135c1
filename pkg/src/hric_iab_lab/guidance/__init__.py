from .client import (EmptyCompletionError, EndpointError, EndpointStatusError, EndpointTimeoutError,
                     EndpointTransportError, GuidanceError, LlmEndpointConfig, build_messages, create_client,
                     request_guidance)
from .guidance import (ArityError, DuplicateMbsLineError, EndpointProvider, GuidanceAuditLog, GuidanceInput,
                       GuidanceOutcome, GuidanceParseError, GuidancePolicy, GuidanceProvider, GuidanceWorker,
                       HeuristicProvider, MissingMbsLineError, NonNumericTokenError, PolicyError, RowSumError,
                       SbsReport, UnknownMbsIndexError, ValidationBounds, ValidationReport, ValueRangeError,
                       Violation, build_prompt, guidance_with_fallback, heuristic_guidance, parse_guidance,
                       serialize_policy, simplex_violations, uniform_policy, validate_input)
