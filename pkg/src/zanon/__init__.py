"""Zero-delay z-anonymity for data streams, with a probabilistic bridge to
k-anonymity and a simulator to check one against the other."""

__version__ = "0.1.0"

from .model import (DEFAULT_PARAMS, KAnonReport, ModelParams, binomial_tail, evaluate,
                    log_binomial_tail, p_exposure, p_k_anon, p_output,
                    p_pair_match, p_publish, p_publish_horizon)
from .popularity import (AccessLog, RatePopularity, estimate_exposure_probs,
                         piecewise_power_law, power_law_rates)
from .simulator import (EmpiricalReport, SimConfig, generate_stream,
                        oracle_anonymize, run_experiment)
from .stream import (AnonymizerState, Decision, Observation, Verdict,
                     ZAnonConfig, anonymize, attribute_window_count,
                     new_anonymizer, process)
