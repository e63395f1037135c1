from .trainer import (CURVE_COLUMNS, FIXED_BLENDING, GUIDED_METHODS, METHODS, EpochRecord, EvaluationResult,
                      GuidanceSettings, Phase, PhaseSchedule, SlotLog, TrainerContractError, TrainingConfig,
                      TrainingRun, blending_weight, derive_seed, epoch_controls, evaluate, final_window_median,
                      noise_sigma_cosine, noise_sigma_linear, project, run_training, select_action, write_curves)
