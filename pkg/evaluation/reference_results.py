# Reference mean ± σ test metrics for the multiclass task, five repeats per family
REFERENCE_RESULTS = {
    "clip_ic": {"accuracy": (0.759, 0.000), "precision_macro": (0.743, 0.000), "recall_macro": (0.740, 0.000), "f1_macro": (0.737, 0.000)},
    "siglip2": {"accuracy": (0.634, 0.028), "precision_macro": (0.635, 0.025), "recall_macro": (0.648, 0.021), "f1_macro": (0.636, 0.025)},
    "vit": {"accuracy": (0.462, 0.017), "precision_macro": (0.462, 0.029), "recall_macro": (0.437, 0.035), "f1_macro": (0.434, 0.026)},
    "cnn_gen": {"accuracy": (0.386, 0.114), "precision_macro": (0.420, 0.127), "recall_macro": (0.409, 0.111), "f1_macro": (0.391, 0.116)},
    "cnn_base": {"accuracy": (0.379, 0.079), "precision_macro": (0.441, 0.131), "recall_macro": (0.417, 0.088), "f1_macro": (0.369, 0.078)},
    "clip_cs": {"accuracy": (0.359, 0.052), "precision_macro": (0.120, 0.017), "recall_macro": (0.333, 0.000), "f1_macro": (0.175, 0.018)},
    "clip_em": {"accuracy": (0.331, 0.094), "precision_macro": (0.356, 0.112), "recall_macro": (0.348, 0.096), "f1_macro": (0.301, 0.073)},
    "fnn_base": {"accuracy": (0.324, 0.052), "precision_macro": (0.303, 0.074), "recall_macro": (0.385, 0.069), "f1_macro": (0.285, 0.047)},
}

# Orderings the harness is expected to reproduce even when absolute numbers drift
EXPECTED_RANKINGS = [
    ("clip_ic", "cnn_base"),
    ("clip_ic", "fnn_base"),
    ("clip_ic", "cnn_gen"),
]

# Floor for the fine-tuned CLIP mean test accuracy
CLIP_IC_MIN_ACCURACY = 0.65
