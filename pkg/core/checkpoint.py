import json
import logging
import os

from core.model import ModelParams

logger = logging.getLogger(__name__)


class Checkpoint:
    """
    JSON persistence for ModelParams.

    Document layout: {"layers": [{"w": [[...]], "b": [...], "act": "tanh"}, ...],
    "split": int, "h": int, "C": int}. Python's float repr is the shortest
    round-trip decimal, so every finite double survives save/load bit-exactly.

    Attributes:
        name: Checkpoint name (file stem).
        params: The stored parameters.
    """

    def __init__(self, name: str, params: ModelParams):
        self.name = name
        self.params = params

    @staticmethod
    def path_for(name: str, base_path: str) -> str:
        return os.path.join(base_path, f"{name}.json")

    def save(self, base_path: str = "checkpoints") -> str:
        """
        Write the checkpoint as `<base_path>/<name>.json`.

        Returns:
            Path of the written file.
        """
        filepath = save_params(self.params, self.path_for(self.name, base_path))
        logger.info("Saved checkpoint '%s' to %s", self.name, filepath)
        return filepath

    @staticmethod
    def load(name: str, base_path: str = "checkpoints") -> "Checkpoint":
        """
        Load a checkpoint by name.

        Raises:
            FileNotFoundError: If no checkpoint file exists.
        """
        filepath = Checkpoint.path_for(name, base_path)
        return Checkpoint(name, load_params(filepath))


def dumps_params(params: ModelParams) -> str:
    return json.dumps(params.to_dict(), indent=2) + "\n"


def save_params(params: ModelParams, filepath: str) -> str:
    """Write ModelParams to an explicit file path."""
    directory = os.path.dirname(filepath)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(filepath, "w", encoding="utf-8") as f:
        f.write(dumps_params(params))
    return filepath


def load_params(filepath: str) -> ModelParams:
    """
    Read ModelParams from a checkpoint file.

    Raises:
        FileNotFoundError: If the file doesn't exist.
        ShapeError: If the document is malformed.
    """
    if not os.path.exists(filepath):
        raise FileNotFoundError(f"No checkpoint found at {filepath}")
    with open(filepath, "r", encoding="utf-8") as f:
        data = json.load(f)
    return ModelParams.from_dict(data)
