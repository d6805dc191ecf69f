from pathlib import Path
from typing import Iterable
import numpy as np
from src.shared_enum_vars import IsolationStrategies
from src.schema import IsolationConfig


class IsolationMap:
    """
    Symmetric, irreflexive relation over the subarrays of a bank: isolated(i, j) is True when subarrays i and j share
    no bitline or sense amplifier, so one row of each may be open at the same time.
    """
    def __init__(self, matrix: np.ndarray, descriptor: str = "explicit"):
        matrix = np.asarray(matrix, dtype=bool)

        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"isolation matrix must be square, got shape {matrix.shape}.")
        if not np.array_equal(matrix, matrix.T):
            raise ValueError("isolation matrix must be symmetric.")
        if matrix.diagonal().any():
            raise ValueError("a subarray cannot be isolated from itself.")

        self.matrix = matrix.copy()
        self.matrix.setflags(write=False)
        self.descriptor = descriptor

    @property
    def subarrays(self) -> int:
        return self.matrix.shape[0]

    def isolated(self, i: int, j: int) -> bool:
        return bool(self.matrix[i, j])

    def partners(self, i: int) -> list[int]:
        return np.flatnonzero(self.matrix[i]).tolist()

    def coverage_of(self, i: int) -> float:
        """Fraction of subarrays isolated from i; equals a row's HiRA coverage when subarrays are equal in size."""
        return len(self.partners(i)) / self.subarrays

    def mean_coverage(self) -> float:
        return float(self.matrix.sum()) / self.subarrays ** 2

    def __eq__(self, other):
        if not isinstance(other, IsolationMap):
            return NotImplemented
        return np.array_equal(self.matrix, other.matrix)

    def __repr__(self):
        return f"IsolationMap(subarrays={self.subarrays}, descriptor={self.descriptor!r})"

    @classmethod
    def from_pairs(cls, subarrays: int, pairs: Iterable[tuple[int, int]], descriptor: str = "explicit"):
        matrix = np.zeros((subarrays, subarrays), dtype=bool)
        for i, j in pairs:
            if not (0 <= i < subarrays and 0 <= j < subarrays):
                raise ValueError(f"pair ({i}, {j}) is outside {subarrays} subarrays.")
            if i == j:
                raise ValueError(f"pair ({i}, {j}) makes a subarray isolated from itself.")
            matrix[i, j] = matrix[j, i] = True
        return cls(matrix, descriptor)

    @classmethod
    def adjacent_share(cls, subarrays: int) -> "IsolationMap":
        # open-bitline layout: neighbours share a sense amplifier stripe
        index = np.arange(subarrays)
        matrix = np.abs(index[:, None] - index[None, :]) >= 2
        return cls(matrix, "adjacent-share")

    @classmethod
    def target_coverage(cls, subarrays: int, coverage: float, seed: int) -> "IsolationMap":
        """Random symmetric map whose expected mean coverage is `coverage`."""
        if subarrays < 2:
            return cls(np.zeros((subarrays, subarrays), dtype=bool), f"target-coverage {coverage} seed {seed}")

        rng = np.random.default_rng(seed)
        edge_probability = min(1.0, coverage * subarrays / (subarrays - 1))
        upper = np.triu(rng.random((subarrays, subarrays)) < edge_probability, k=1)
        return cls(upper | upper.T, f"target-coverage {coverage} seed {seed}")

    @classmethod
    def from_file(cls, path: str | Path) -> "IsolationMap":
        """
        File format: a "subarrays N" header line followed by one "i j" line per isolated pair. Lines starting with
        '#' are comments.
        """
        subarrays = None
        pairs = []

        with open(path, "r", encoding="utf-8") as file:
            for line_number, line in enumerate(file, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue

                tokens = line.split()
                if subarrays is None:
                    if len(tokens) != 2 or tokens[0] != "subarrays" or not tokens[1].isdigit():
                        raise ValueError(f"line {line_number}: expected 'subarrays N' header.")
                    subarrays = int(tokens[1])
                    continue

                if len(tokens) != 2 or not all(t.isdigit() for t in tokens):
                    raise ValueError(f"line {line_number}: expected 'i j' pair, got {line!r}.")
                pairs.append((int(tokens[0]), int(tokens[1])))

        if subarrays is None:
            raise ValueError(f"{path}: missing 'subarrays N' header.")

        return cls.from_pairs(subarrays, pairs, f"file {Path(path).name}")

    def to_file(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as file:
            file.write(f"subarrays {self.subarrays}\n")
            for i, j in zip(*np.nonzero(np.triu(self.matrix, k=1))):
                file.write(f"{i} {j}\n")

    @classmethod
    def from_config(cls, config: IsolationConfig, subarrays: int) -> "IsolationMap":
        match config.strategy:
            case IsolationStrategies.ADJACENT_SHARE:
                return cls.adjacent_share(subarrays)
            case IsolationStrategies.TARGET_COVERAGE:
                return cls.target_coverage(subarrays, config.target_coverage, config.seed)
            case IsolationStrategies.FILE:
                loaded = cls.from_file(config.path)
                if loaded.subarrays != subarrays:
                    raise ValueError(f"{config.path} describes {loaded.subarrays} subarrays, geometry has "
                                     f"{subarrays}.")
                return loaded
            case _:
                raise ValueError(f"Unrecognised isolation strategy {config.strategy}.")


class SubarrayPairsTable:
    """
    The controller's copy of the isolation relation. It starts as an exact copy of the chip's map; corrupt() flips
    entries to emulate a faulty reverse-engineering step.
    """
    def __init__(self, isolation_map: IsolationMap):
        self._matrix = isolation_map.matrix.copy()
        self._matrix.setflags(write=True)
        self._partners = [np.flatnonzero(row).tolist() for row in self._matrix]

    def isolated(self, i: int, j: int) -> bool:
        return bool(self._matrix[i, j])

    def partners(self, i: int) -> list[int]:
        return self._partners[i]

    def corrupt(self, pairs: Iterable[tuple[int, int]]) -> None:
        for i, j in pairs:
            if i == j:
                raise ValueError("cannot mark a subarray as isolated from itself.")
            value = not self._matrix[i, j]
            self._matrix[i, j] = self._matrix[j, i] = value
        self._partners = [np.flatnonzero(row).tolist() for row in self._matrix]

    def matches(self, isolation_map: IsolationMap) -> bool:
        return np.array_equal(self._matrix, isolation_map.matrix)
