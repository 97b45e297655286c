import csv
import logging
import os
from typing import List

from memory.bank import MemoryBank

logger = logging.getLogger(__name__)


class BankDump:
    """Writes memory-bank snapshots to CSV for debugging."""

    def __init__(self, storage_dir: str = "bank_dumps"):
        """Initialize dump storage with the specified directory."""
        self.storage_dir = storage_dir
        os.makedirs(storage_dir, exist_ok=True)

    @staticmethod
    def header(num_classes: int) -> List[str]:
        return (
            ["sample_id", "neighbor_ids"]
            + [f"prior_{c}" for c in range(num_classes)]
            + [f"prob_{c}" for c in range(num_classes)]
        )

    def save(self, bank: MemoryBank, name: str = "bank") -> str:
        """
        Save a bank snapshot as `<storage_dir>/<name>.csv`.

        Returns:
            Path of the written file.
        """
        filepath = os.path.join(self.storage_dir, f"{name}.csv")
        return dump_bank(bank, filepath)


def dump_bank(bank: MemoryBank, filepath: str) -> str:
    """
    Write one row per sample: id, semicolon-joined neighbor ids, priors, probs.
    """
    with open(filepath, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(BankDump.header(bank.num_classes))
        priors = bank.source_priors
        for i in range(bank.size):
            writer.writerow(
                [i, ";".join(str(int(j)) for j in bank.neighbor_lists[i])]
                + [repr(float(v)) for v in priors[i]]
                + [repr(float(v)) for v in bank.probs[i]]
            )
    logger.info("Dumped memory bank (%d samples) to %s", bank.size, filepath)
    return filepath
