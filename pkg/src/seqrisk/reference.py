"""Reference metrics reported for the original private 216k-patient cohort.

These values are context metadata for reports, never acceptance targets:
the cohort they were measured on is not available, so synthetic runs are
checked against directional properties instead.
"""

COHORT = {
    "n_patients": 216_394,
    "n_cases": 21_405,
    "n_controls": 194_989,
    "splits": {"train": 164_459, "validation": 8_656, "test": 43_279},
    "test_composition": {"controls": 39_947, "cases": 3_332},
    "case_age": {"mean": 66.69, "std": 16.3},
    "control_age": {"mean": 56.53, "std": 8.5},
    "n_concepts_before_filter": 15_000,
    "n_concepts_after_filter": 1_837,
}

# 12-month observation window (M24, M18), 15-month prediction horizon
WINDOW_SWEEP_24_18 = {
    "lr": {"auroc": 0.8699, "aucpr": 0.5787},
    "mlp": {"auroc": 0.8683, "aucpr": 0.4828},
    "rf": {"auroc": 0.8980, "aucpr": 0.6228},
    "cnn": {"auroc": 0.8909, "aucpr": 0.5240},
    "lstm": {"auroc": 0.9148, "aucpr": 0.6271},
    "embmlp": {"auroc": 0.8956, "aucpr": 0.5846},
}

# same window with the two slices aggregated into one
AGGREGATED_24_18 = {
    "lr": {"auroc": 0.8714, "auroc_std": 0.001, "aucpr": 0.5898, "aucpr_std": 0.001},
    "mlp": {"auroc": 0.8743, "auroc_std": 0.002, "aucpr": 0.5813, "aucpr_std": 0.003},
    "rf": {"auroc": 0.8965, "auroc_std": 0.002, "aucpr": 0.6152, "aucpr_std": 0.002},
    "lstm": {"auroc": 0.9100, "auroc_std": 0.004, "aucpr": 0.6087, "aucpr_std": 0.004},
}

TEMPORAL_DELTA_24_18 = {
    "lstm_all_features": {"auroc": 0.9148, "aucpr": 0.6271},
    "lstm_delta_subset": {"auroc": 0.8949, "aucpr": 0.5212},
    "subset_auroc_ratio": 0.978,
    "delta_top_k": 47,
}

ABLATIONS = {
    "binarized_lstm_auroc": 0.9013,
    "frequency_lstm_auroc": 0.9148,
    "small_cohort": {
        "train_size": 8_500,
        "rf": {"auroc": 0.8845, "auroc_std": 0.003, "aucpr": 0.5449, "aucpr_std": 0.002},
        "lstm": {"auroc": 0.8931, "auroc_std": 0.001, "aucpr": 0.5321, "aucpr_std": 0.001},
    },
    "rf_top50": {
        "rf": {"auroc": 0.8822, "auroc_std": 0.004, "aucpr": 0.583, "aucpr_std": 0.004},
        "lstm": {"auroc": 0.8901, "auroc_std": 0.001, "aucpr": 0.5277, "aucpr_std": 0.001},
    },
    "density_filtered": {"lstm_auroc": 0.9234, "rf_auroc": 0.9097},
}

MODEL_DEFAULTS = {
    "d_emb": 32,
    "hidden": 128,
    "batch_size": 512,
    "learning_rate": 1e-3,
    "max_epochs": 100,
    "runs_per_config": 5,
}
