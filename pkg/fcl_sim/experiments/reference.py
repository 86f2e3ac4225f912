"""
Published reference results at full scale (a convolutional encoder on real images),
shown next to desk-scale numbers for context only. Values are percentages as
(recall, precision) per label fraction.
"""

LABEL_FRACTIONS = (0.1, 0.2, 0.4, 0.8)

FINETUNE_REFERENCE = {
    "local": {
        "random_init": [(21.56, 17.35), (23.13, 20.79), (24.88, 23.69), (23.92, 26.06)],
        "local_cl": [(26.57, 26.54), (28.82, 28.20), (31.46, 30.49), (34.27, 30.71)],
        "fcl": [(30.41, 33.54), (34.41, 32.96), (37.03, 34.95), (39.25, 35.02)],
    },
    "federated": {
        "random_init": [(43.15, 38.97), (45.63, 40.41), (50.73, 44.66), (55.61, 46.35)],
        "local_cl": [(43.41, 39.59), (45.69, 41.39), (50.35, 45.58), (55.47, 47.70)],
        "fcl": [(48.03, 42.87), (51.50, 45.71), (55.13, 48.73), (59.23, 50.21)],
    },
}

# Federated fine-tuning recall at L=10% for each negatives policy.
ABLATION_REFERENCE = {
    "local_only": 44.72,
    "local_plus_remote": 47.45,
    "remote_only": 48.03,
}


def reference_cell(mode: str, method: str, fraction: float):
    """(recall, precision) for a table cell, or None when nothing was published."""
    rows = FINETUNE_REFERENCE.get(mode, {}).get(method)
    if rows is None or fraction not in LABEL_FRACTIONS:
        return None
    return rows[LABEL_FRACTIONS.index(fraction)]
