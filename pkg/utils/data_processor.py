import csv
import json
import logging
import math
import os
from dataclasses import fields, is_dataclass

import numpy as np

from lib.transport.exceptions import ConfigError, ReportWriteError

logger = logging.getLogger(__name__)


class DataProcessor:
    """Handles encoding of reports, laws and samples to JSON and CSV."""

    @staticmethod
    def to_jsonable(data):
        """
        Converts numpy values, dataclasses and objects with to_dict into plain JSON trees.

        Non-finite floats become None so that the output is strict JSON.
        """
        if hasattr(data, "to_dict"):
            return DataProcessor.to_jsonable(data.to_dict())
        if is_dataclass(data) and not isinstance(data, type):
            return {f.name: DataProcessor.to_jsonable(getattr(data, f.name)) for f in fields(data)}
        if isinstance(data, dict):
            return {str(key): DataProcessor.to_jsonable(value) for key, value in data.items()}
        if isinstance(data, (list, tuple)):
            return [DataProcessor.to_jsonable(value) for value in data]
        if isinstance(data, np.ndarray):
            return DataProcessor.to_jsonable(data.tolist())
        if isinstance(data, (np.bool_, bool)):
            return bool(data)
        if isinstance(data, (np.integer, int)):
            return int(data)
        if isinstance(data, (np.floating, float)):
            value = float(data)
            return value if math.isfinite(value) else None
        return data

    @staticmethod
    def dumps(data) -> str:
        """
        Deterministic JSON text: sorted keys, fixed indent, strict floats.
        """
        return json.dumps(DataProcessor.to_jsonable(data), sort_keys=True, indent=2, allow_nan=False)

    @staticmethod
    def write_json(data, path: str) -> str:
        """
        Writes data as deterministic JSON.

        Args:
            data: Report, dataclass or JSON-like tree
            path: Output file; parent directories are created

        Returns:
            str: The path written

        Raises:
            ReportWriteError: If the file cannot be written
        """
        try:
            text = DataProcessor.dumps(data)
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            with open(path, "w") as f:
                f.write(text + "\n")
            logger.info(f"Wrote {path}")
            return path
        except (OSError, TypeError, ValueError) as e:
            logger.error(f"Failed to write JSON to {path}: {e}")
            raise ReportWriteError(path, str(e))

    @staticmethod
    def read_json(path: str) -> dict:
        try:
            with open(path, "r") as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Failed to read JSON from {path}: {e}")
            raise ConfigError(str(e), path=path)

    @staticmethod
    def write_samples_csv(columns: dict, path: str) -> str:
        """
        Writes two-column CSV rows (source, value), one row per sample value.

        Args:
            columns (dict): source label -> sequence of values, written in insertion order
            path (str): Output file

        Raises:
            ReportWriteError: If the file cannot be written
        """
        try:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            with open(path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["source", "value"])
                for source, values in columns.items():
                    for value in np.asarray(values, dtype=float).ravel():
                        writer.writerow([source, repr(float(value))])
            logger.info(f"Wrote {path}")
            return path
        except OSError as e:
            logger.error(f"Failed to write CSV to {path}: {e}")
            raise ReportWriteError(path, str(e))

    @staticmethod
    def read_samples_csv(path: str) -> dict:
        samples = {}
        with open(path, "r", newline="") as f:
            for row in csv.DictReader(f):
                samples.setdefault(row["source"], []).append(float(row["value"]))
        return samples

    @staticmethod
    def read_cost_matrix(path: str) -> np.ndarray:
        """
        Reads a numeric cost matrix, one CSV row per atom of P.

        Raises:
            ConfigError: If the file is missing, ragged or not numeric
        """
        try:
            with open(path, "r", newline="") as f:
                rows = [[float(cell) for cell in row] for row in csv.reader(f) if row]
        except (OSError, ValueError) as e:
            logger.error(f"Failed to read cost matrix from {path}: {e}")
            raise ConfigError(f"unreadable cost matrix: {e}", path=path)
        if not rows or len({len(row) for row in rows}) != 1:
            logger.error(f"Cost matrix in {path} is empty or ragged")
            raise ConfigError("cost matrix must be a nonempty rectangular table", path=path)
        return np.array(rows)
