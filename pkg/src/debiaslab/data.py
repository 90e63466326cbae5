"""LETOR-format learning-to-rank data and a seeded synthetic stand-in."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_GRADE = 4


class LetorParseError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class QueryDocPair:
    query_id: int
    doc_id: int
    features: np.ndarray
    grade: int

    def __eq__(self, other):
        return (
            isinstance(other, QueryDocPair)
            and self.query_id == other.query_id
            and self.doc_id == other.doc_id
            and self.grade == other.grade
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True)
class QueryGroup:
    """One query with its candidate documents.

    Documents are stored column-wise: ``features`` is (M, D) and ``grades`` (M,).
    """

    query_id: int
    features: np.ndarray
    grades: np.ndarray

    def __len__(self):
        return len(self.grades)

    @property
    def docs(self) -> list[QueryDocPair]:
        return [
            QueryDocPair(self.query_id, i, self.features[i], int(g))
            for i, g in enumerate(self.grades)
        ]

    @property
    def relevant(self) -> np.ndarray:
        return binarize_relevance(self.grades)


@dataclass(frozen=True)
class Dataset:
    groups: list[QueryGroup]
    feature_dim: int
    title_feature_index: int | None = None

    def __post_init__(self):
        if self.title_feature_index is not None and not 0 <= self.title_feature_index < self.feature_dim:
            raise ConfigError(
                f"title_feature_index {self.title_feature_index} outside [0, {self.feature_dim})"
            )
        for g in self.groups:
            if g.features.shape[1] != self.feature_dim:
                raise ValueError(f"query {g.query_id} has features of width {g.features.shape[1]}")

    def __len__(self):
        return len(self.groups)

    @property
    def n_docs(self) -> int:
        return sum(len(g) for g in self.groups)

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All documents as ``(query_ids, features, grades)`` arrays."""
        if not self.groups:
            return np.zeros(0, int), np.zeros((0, self.feature_dim)), np.zeros(0, int)
        qids = np.concatenate([np.full(len(g), g.query_id) for g in self.groups])
        return qids, np.vstack([g.features for g in self.groups]), np.concatenate([g.grades for g in self.groups])

    def split(self, test_fraction: float, seed: int) -> tuple["Dataset", "Dataset"]:
        """Hold out a seeded random subset of queries; both parts keep query order."""
        if not 0 < test_fraction < 1:
            raise ConfigError("test_fraction must be in (0, 1)")
        n_test = max(1, int(round(test_fraction * len(self.groups))))
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
        test_idx = set(rng.choice(len(self.groups), size=n_test, replace=False).tolist())
        train = [g for i, g in enumerate(self.groups) if i not in test_idx]
        test = [g for i, g in enumerate(self.groups) if i in test_idx]
        return (
            Dataset(train, self.feature_dim, self.title_feature_index),
            Dataset(test, self.feature_dim, self.title_feature_index),
        )


def binarize_relevance(grade):
    """Grades above 2 count as relevant."""
    return np.asarray(grade) > 2 if np.ndim(grade) else bool(grade > 2)


def parse_letor_line(line: str, feature_dim: int, line_no: int | None = None) -> QueryDocPair:
    """Parse ``<grade> qid:<qid> <fid>:<value> ... [# comment]``; fids are 1-based.

    Missing features are zero-filled. ``doc_id`` is left at 0; the loader
    assigns it from the position within the query.
    """
    where = f"line {line_no}" if line_no is not None else "line"
    body = line.split("#", 1)[0]
    tokens = body.split()
    if len(tokens) < 2:
        raise LetorParseError(f"{where}: expected '<grade> qid:<id> ...', got {line.strip()!r}")
    try:
        grade = int(tokens[0])
    except ValueError:
        raise LetorParseError(f"{where}: non-integer grade {tokens[0]!r}") from None
    if not 0 <= grade <= MAX_GRADE:
        raise LetorParseError(f"{where}: grade {grade} outside [0, {MAX_GRADE}]")
    key, _, qid = tokens[1].partition(":")
    if key != "qid" or not qid:
        raise LetorParseError(f"{where}: malformed query token {tokens[1]!r}")
    try:
        query_id = int(qid)
    except ValueError:
        raise LetorParseError(f"{where}: non-integer query id in {tokens[1]!r}") from None

    features = np.zeros(feature_dim)
    for tok in tokens[2:]:
        fid, sep, val = tok.partition(":")
        try:
            if not sep:
                raise ValueError
            fid_i = int(fid)
            value = float(val)
        except ValueError:
            raise LetorParseError(f"{where}: malformed feature token {tok!r}") from None
        if not 1 <= fid_i <= feature_dim:
            raise LetorParseError(f"{where}: feature id {fid_i} outside [1, {feature_dim}] in {tok!r}")
        if not np.isfinite(value):
            raise LetorParseError(f"{where}: non-finite feature value in {tok!r}")
        features[fid_i - 1] = value
    return QueryDocPair(query_id, 0, features, grade)


def format_letor_line(pair: QueryDocPair) -> str:
    # repr() round-trips float64 exactly
    feats = " ".join(f"{i + 1}:{float(v)!r}" for i, v in enumerate(pair.features))
    return f"{pair.grade} qid:{pair.query_id} {feats}"


def load_dataset(path: str | Path, feature_dim: int, title_feature_index: int | None = None) -> Dataset:
    """Read a LETOR file; groups appear in order of each qid's first line."""
    rows: dict[int, list[QueryDocPair]] = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.split("#", 1)[0].strip():
                continue
            pair = parse_letor_line(line, feature_dim, line_no)
            rows.setdefault(pair.query_id, []).append(pair)
    groups = [
        QueryGroup(
            qid,
            np.vstack([p.features for p in pairs]),
            np.array([p.grade for p in pairs], dtype=int),
        )
        for qid, pairs in rows.items()
    ]
    return Dataset(groups, feature_dim, title_feature_index)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for g in dataset.groups:
            for pair in g.docs:
                fh.write(format_letor_line(pair) + "\n")


@dataclass
class SynthConfig:
    queries: int = 200
    docs_per_query: int = 30
    feature_dim: int = 20
    relevant_fraction: float = 0.2
    title_feature_index: int = 0
    #: std of the query-independent noise added to the latent relevance score
    noise: float = 0.5
    #: std of the per-query feature offset; larger values make queries differ more in relevance
    query_spread: float = 0.5
    #: fraction of each grade bucket below the relevant cut, for grades 0, 1, 2
    low_grade_split: tuple = field(default=(0.4, 0.35, 0.25))

    def validate(self) -> None:
        for name in ("queries", "docs_per_query", "feature_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.relevant_fraction < 1:
            raise ConfigError("relevant_fraction must be in (0, 1)")
        if not 0 <= self.title_feature_index < self.feature_dim:
            raise ConfigError("title_feature_index must index a feature")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")


def generate_synthetic(config: SynthConfig, seed: int) -> Dataset:
    """Seeded synthetic LETOR-shaped data.

    Features are standard normal with a query-level offset. A hidden weight
    vector plus a mild pairwise interaction defines a latent score; noise is
    added and the noisy score is cut at dataset quantiles into grades 0-4, so
    ``relevant_fraction`` of documents grade 3 or 4. The title feature is an
    independent integer length and carries no relevance signal.
    """
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    Q, M, D = config.queries, config.docs_per_query, config.feature_dim
    w_star = rng.normal(size=D)
    w_star[config.title_feature_index] = 0.0
    w_star /= np.linalg.norm(w_star)

    offsets = rng.normal(scale=config.query_spread, size=(Q, 1, D))
    X = rng.normal(size=(Q, M, D)) + offsets
    titles = rng.integers(5, 60, size=(Q, M)).astype(float)
    X[:, :, config.title_feature_index] = titles

    signal = X @ w_star
    others = [i for i in range(D) if i != config.title_feature_index]
    if len(others) >= 2:
        signal = signal + 0.5 * X[:, :, others[0]] * X[:, :, others[1]] / np.sqrt(2.0)
    latent = signal + config.noise * rng.normal(size=(Q, M))

    flat = latent.ravel()
    order = np.argsort(flat, kind="stable")
    grades = np.empty(flat.size, dtype=int)
    n = flat.size
    n_rel = int(round(config.relevant_fraction * n))
    n_low = n - n_rel
    split = np.asarray(config.low_grade_split, dtype=float)
    cuts = np.round(np.cumsum(split / split.sum()) * n_low).astype(int)
    bounds = [0, cuts[0], cuts[1], n_low, n_low + int(round(0.75 * n_rel)), n]
    for grade in range(5):
        grades[order[bounds[grade]:bounds[grade + 1]]] = grade
    grades = grades.reshape(Q, M)

    groups = [QueryGroup(q + 1, X[q].copy(), grades[q].copy()) for q in range(Q)]
    return Dataset(groups, D, config.title_feature_index)


@dataclass
class MinMaxScaler:
    """Per-feature min-max scaling fit on training data; zero-range features map to 0."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "MinMaxScaler":
        X = np.atleast_2d(X)
        return cls(X.min(axis=0), X.max(axis=0))

    def transform(self, X: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (np.asarray(X, dtype=float) - self.lo) / safe, 0.0)

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float))
