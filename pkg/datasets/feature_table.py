"""
Feature-table CSV files: externally extracted features with labels.

    #meta,C=<int>,d=<int>
    id,label,x0,...,x{d-1}
    0,2,0.125,-1.5,...

Values are written with shortest round-trip decimals, so a write/load cycle is bit-exact.
"""
import csv
import logging
import os
import re
from typing import List, Tuple

import numpy as np

from core.errors import FeatureTableParseError
from datasets.views import LabeledDataset

logger = logging.getLogger(__name__)

META_PATTERN = re.compile(r"^#meta,C=(\d+),d=(\d+)$")


def _parse_meta(line: str) -> Tuple[int, int]:
    match = META_PATTERN.match(line.strip())
    if not match:
        raise FeatureTableParseError(f"expected '#meta,C=<int>,d=<int>', got '{line.strip()}'", 1)
    C, d = int(match.group(1)), int(match.group(2))
    if C < 2 or d < 1:
        raise FeatureTableParseError(f"need C >= 2 and d >= 1, got C={C}, d={d}", 1)
    return C, d


def load_feature_table(path: str) -> LabeledDataset:
    """
    Parse a feature-table CSV into a LabeledDataset, preserving row order.

    Raises:
        FileNotFoundError: If the file doesn't exist.
        FeatureTableParseError: On a bad meta line or header, a row with the
            wrong number of values, an unparsable number or a label outside 0..C-1.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"No feature table found at {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        first = next(reader, None)
        if first is None:
            raise FeatureTableParseError("file is empty", 1)
        C, d = _parse_meta(",".join(first))
        expected_header = ["id", "label"] + [f"x{j}" for j in range(d)]
        header = next(reader, None)
        if header != expected_header:
            raise FeatureTableParseError(f"expected header {','.join(expected_header)}", 2)

        inputs: List[List[float]] = []
        labels: List[int] = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != d + 2:
                raise FeatureTableParseError(f"expected {d + 2} fields, got {len(row)}", line)
            try:
                int(row[0])
                label = int(row[1])
                values = [float(v) for v in row[2:]]
            except ValueError as e:
                raise FeatureTableParseError(f"unparsable value: {e}", line)
            if not 0 <= label < C:
                raise FeatureTableParseError(f"label {label} outside 0..{C - 1}", line)
            if not all(np.isfinite(values)):
                raise FeatureTableParseError("non-finite feature value", line)
            inputs.append(values)
            labels.append(label)

    x = np.asarray(inputs, dtype=np.float64).reshape(len(inputs), d)
    dataset = LabeledDataset(x, np.asarray(labels, dtype=np.int64), C, domain=os.path.basename(path))
    logger.info("Loaded feature table %s: N=%d, d=%d, C=%d", path, dataset.size, d, C)
    return dataset


def write_feature_table(dataset: LabeledDataset, path: str) -> str:
    """Write `dataset` in the feature-table format; returns the path."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"#meta,C={dataset.num_classes},d={dataset.dim}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id", "label"] + [f"x{j}" for j in range(dataset.dim)])
        for i, (x, y) in enumerate(zip(dataset.inputs, dataset.labels)):
            writer.writerow([i, int(y)] + [repr(float(v)) for v in x])
    logger.info("Wrote feature table %s (%d rows)", path, dataset.size)
    return path
