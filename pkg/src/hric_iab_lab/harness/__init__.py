from .config import (DEFAULT_ALPHA_GRID, DEFAULT_METHODS, PROFILES, ConfigError, EvaluationSettings,
                     ExperimentConfig, TrainingSettings, config_from_mapping, config_sha256, config_to_mapping,
                     dump_config, load_config, parse_config)
from .cli import UsageError, build_parser, latency_summary, main
