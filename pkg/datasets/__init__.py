from datasets.corruption import corrupt_source_priors
from datasets.feature_table import load_feature_table, write_feature_table
from datasets.synthetic import (
    BLOBS_ROT60,
    BLOBS_ROT60_MEANS,
    ShiftSpec,
    blobs_rot60_shift,
    make_blobs_rot60,
    make_gaussian_domains,
)
from datasets.views import LabeledDataset, UnlabeledView
