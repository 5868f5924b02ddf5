"""Refugee record data model and the feature encodings shared by the learners.

Covariates are stored column-wise in a float matrix: numeric covariates hold
their raw value, categorical covariates hold the category index.

Encoded feature layout (all modes):

    [covariate block][location block][interaction block]

* covariate block: schema order; numeric covariates take one (optionally
  standardized) column, categoricals one column per category (no reference
  level dropped).
* location block: one-hot over ``L`` locations.
* interaction block: covariate block x location one-hot, covariate-major, so
  feature ``(i, j)`` sits at ``offset + i * L + j``.

The ``single-interaction`` mode reproduces the three-feature map
``[t, x, t*x]`` for a binary treatment and a single covariate.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

MODES = ("covariates", "covariates+location", "interactions", "single-interaction")


class EncodingError(ValueError):
    """A record does not conform to the feature map's schema."""


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: str  # "numeric" | "categorical"
    categories: tuple[str, ...] = ()
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind == "categorical":
            if len(self.categories) < 2:
                raise ValueError(f"categorical covariate {self.name!r} needs >= 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise ValueError(f"duplicate categories in {self.name!r}")
        elif self.kind == "numeric":
            if self.bounds is None or not self.bounds[0] < self.bounds[1]:
                raise ValueError(f"numeric covariate {self.name!r} needs bounds lo < hi")
        else:
            raise ValueError(f"unknown covariate kind {self.kind!r}")

    @property
    def width(self) -> int:
        return 1 if self.kind == "numeric" else len(self.categories)

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind == "categorical":
            d["categories"] = list(self.categories)
        else:
            d["bounds"] = list(self.bounds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Covariate":
        return cls(
            name=d["name"],
            kind=d["kind"],
            categories=tuple(d.get("categories", ())),
            bounds=tuple(d["bounds"]) if d.get("bounds") is not None else None,
        )


@dataclass(frozen=True)
class CovariateSchema:
    covariates: tuple[Covariate, ...]

    def __post_init__(self):
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ValueError("covariate names must be unique")

    def __len__(self) -> int:
        return len(self.covariates)

    def __iter__(self) -> Iterator[Covariate]:
        return iter(self.covariates)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.covariates]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def __getitem__(self, name: str) -> Covariate:
        return self.covariates[self.index(name)]

    def validate(self, covariates: np.ndarray) -> None:
        """Raise EncodingError if any row of ``covariates`` violates the schema."""
        covariates = np.asarray(covariates, dtype=float)
        if covariates.ndim != 2 or covariates.shape[1] != len(self):
            raise EncodingError(
                f"expected {len(self)} covariate columns, got shape {covariates.shape}"
            )
        for j, cov in enumerate(self.covariates):
            col = covariates[:, j]
            if not np.all(np.isfinite(col)):
                raise EncodingError(f"non-finite value for covariate {cov.name!r}")
            if cov.kind == "numeric":
                lo, hi = cov.bounds
                if np.any((col < lo) | (col > hi)):
                    raise EncodingError(f"covariate {cov.name!r} outside bounds [{lo}, {hi}]")
            else:
                if np.any((col < 0) | (col >= len(cov.categories)) | (col != np.round(col))):
                    raise EncodingError(
                        f"covariate {cov.name!r} has category index outside "
                        f"0..{len(cov.categories) - 1}"
                    )

    def to_dict(self) -> dict:
        return {"covariates": [c.to_dict() for c in self.covariates]}

    @classmethod
    def from_dict(cls, d: dict) -> "CovariateSchema":
        return cls(tuple(Covariate.from_dict(c) for c in d["covariates"]))


MONTHS = ("jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec")
ORIGINS = (
    "burma", "iraq", "bhutan", "somalia", "afghanistan", "drc", "iran", "eritrea",
    "ukraine", "syria", "sudan", "ethiopia", "moldova", "other",
)


def refugee_schema() -> CovariateSchema:
    """The eight-covariate refugee schema (age is the only numeric covariate)."""
    return CovariateSchema((
        Covariate("age", "numeric", bounds=(18.0, 60.0)),
        Covariate("gender", "categorical", ("male", "female")),
        Covariate("education", "categorical",
                  ("none", "little", "secondary", "advanced", "university")),
        Covariate("english", "categorical", ("yes", "no")),
        Covariate("case_restriction", "categorical", ("free", "restricted")),
        Covariate("origin", "categorical", ORIGINS),
        Covariate("arrival_year", "categorical",
                  ("2011", "2012", "2013", "2014", "2015", "2016")),
        Covariate("arrival_month", "categorical", MONTHS),
    ))


@dataclass(frozen=True)
class RefugeeRecord:
    """One refugee's covariate values, in schema order."""

    values: tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True, eq=False)
class Dataset:
    schema: CovariateSchema
    covariates: np.ndarray  # (n, k)
    locations: np.ndarray  # (n,) ints in [0, L)
    outcomes: np.ndarray  # (n,) in {0, 1}
    propensities: np.ndarray  # (n, L)

    def __post_init__(self):
        cov = np.array(self.covariates, dtype=float)
        loc = np.array(self.locations, dtype=np.int64)
        out = np.array(self.outcomes, dtype=np.int64)
        prop = np.array(self.propensities, dtype=float)
        for name, arr in (("covariates", cov), ("locations", loc), ("outcomes", out),
                          ("propensities", prop)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = cov.shape[0]
        if not (loc.shape == (n,) and out.shape == (n,) and prop.ndim == 2 and prop.shape[0] == n):
            raise ValueError("dataset columns must all have length n")
        self.schema.validate(cov)
        if not np.all((out == 0) | (out == 1)):
            raise ValueError("outcomes must be binary")
        L = prop.shape[1]
        if n and (loc.min() < 0 or loc.max() >= L):
            raise ValueError(f"locations must lie in [0, {L})")
        if not np.all(prop > 0):
            raise ValueError("propensities must be strictly positive")
        if n and np.max(np.abs(prop.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("each propensity vector must sum to 1")

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_locations(self) -> int:
        return self.propensities.shape[1]

    def __len__(self) -> int:
        return self.n

    def records(self) -> list[RefugeeRecord]:
        return [RefugeeRecord(tuple(row)) for row in self.covariates.tolist()]

    def subset(self, index: Sequence[int] | np.ndarray) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.schema, self.covariates[index], self.locations[index],
                       self.outcomes[index], self.propensities[index])

    def logged_propensity(self) -> np.ndarray:
        """p_{i,T_i} for every record."""
        return self.propensities[np.arange(self.n), self.locations]

    # -- CSV ----------------------------------------------------------------

    def csv_header(self) -> list[str]:
        return (self.schema.names + ["location", "outcome"]
                + [f"p_{t}" for t in range(self.n_locations)])

    def to_csv(self, path=None) -> str:
        """Write ``covariates..., location, outcome, p_0..p_{L-1}``; returns the text."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.csv_header())
        kinds = [c.kind for c in self.schema]
        for i in range(self.n):
            row = [_fmt(v) if kind == "numeric" else str(int(v))
                   for v, kind in zip(self.covariates[i], kinds)]
            row += [str(int(self.locations[i])), str(int(self.outcomes[i]))]
            row += [_fmt(p) for p in self.propensities[i]]
            writer.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, schema: CovariateSchema) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        k = len(schema)
        if header[:k] != schema.names or header[k:k + 2] != ["location", "outcome"]:
            raise ValueError("CSV header does not match schema")
        data = np.array(body, dtype=float).reshape(len(body), len(header))
        return cls(schema, data[:, :k], data[:, k].astype(np.int64),
                   data[:, k + 1].astype(np.int64), data[:, k + 2:])


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Encoding plan from (covariates, location) to a real feature vector.

    Use :meth:`fit` to build one; standardization parameters are frozen at
    fit time and reused for every later encoding.
    """

    schema: CovariateSchema
    n_locations: int
    mode: str
    standardize: bool = True
    means: tuple[float, ...] = ()
    scales: tuple[float, ...] = ()
    _numeric: tuple[int, ...] = field(default=(), repr=False)

    @classmethod
    def fit(cls, schema: CovariateSchema, n_locations: int, mode: str,
            covariates: np.ndarray | None = None, standardize: bool = True) -> "FeatureMap":
        if mode not in MODES:
            raise ValueError(f"unknown feature mode {mode!r}; expected one of {MODES}")
        if n_locations < 1:
            raise ValueError("n_locations must be positive")
        if mode == "single-interaction" and n_locations != 2:
            raise ValueError("single-interaction mode needs exactly two locations")
        numeric = tuple(j for j, c in enumerate(schema) if c.kind == "numeric")
        means, scales = [], []
        if standardize and numeric:
            if covariates is None:
                raise ValueError("standardization needs covariates to fit on")
            covariates = np.asarray(covariates, dtype=float)
            schema.validate(covariates)
            for j in numeric:
                col = covariates[:, j]
                mu = float(col.mean())
                # population sd (ddof=0); constant columns keep unit scale
                s = float(np.sqrt(np.mean((col - mu) ** 2)))
                means.append(mu)
                scales.append(s if s > 0 else 1.0)
        return cls(schema, n_locations, mode, standardize and bool(numeric),
                   tuple(means), tuple(scales), numeric)

    @property
    def covariate_width(self) -> int:
        return sum(c.width for c in self.schema)

    @property
    def dimension(self) -> int:
        w, L = self.covariate_width, self.n_locations
        if self.mode == "covariates":
            return w
        if self.mode == "covariates+location":
            return w + L
        if self.mode == "interactions":
            return w + L + w * L
        return 1 + 2 * w

    def feature_names(self) -> list[str]:
        cov_names = []
        for c in self.schema:
            if c.kind == "numeric":
                cov_names.append(c.name)
            else:
                cov_names.extend(f"{c.name}={cat}" for cat in c.categories)
        if self.mode == "single-interaction":
            return ["t"] + cov_names + [f"t*{n}" for n in cov_names]
        names = list(cov_names)
        if self.mode in ("covariates+location", "interactions"):
            names += [f"loc={t}" for t in range(self.n_locations)]
        if self.mode == "interactions":
            names += [f"{n}*loc={t}" for n in cov_names for t in range(self.n_locations)]
        return names

    def covariate_block(self, covariates: np.ndarray) -> np.ndarray:
        covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        self.schema.validate(covariates)
        n = covariates.shape[0]
        out = np.zeros((n, self.covariate_width))
        col = 0
        num_k = 0
        for j, cov in enumerate(self.schema):
            if cov.kind == "numeric":
                v = covariates[:, j]
                if self.standardize:
                    v = (v - self.means[num_k]) / self.scales[num_k]
                out[:, col] = v
                num_k += 1
                col += 1
            else:
                out[np.arange(n), col + covariates[:, j].astype(np.int64)] = 1.0
                col += cov.width
        return out

    def encode_many(self, covariates: np.ndarray, locations=None) -> np.ndarray:
        """Encode a batch; ``locations`` may be omitted in covariates-only mode."""
        block = self.covariate_block(covariates)
        n = block.shape[0]
        if self.mode == "covariates":
            return block
        if locations is None:
            raise EncodingError(f"mode {self.mode!r} needs a location")
        locations = np.broadcast_to(np.asarray(locations, dtype=np.int64), (n,))
        if np.any((locations < 0) | (locations >= self.n_locations)):
            raise EncodingError(f"location outside [0, {self.n_locations})")
        if self.mode == "single-interaction":
            t = locations.astype(float)[:, None]
            return np.hstack([t, block, t * block])
        onehot = np.zeros((n, self.n_locations))
        onehot[np.arange(n), locations] = 1.0
        if self.mode == "covariates+location":
            return np.hstack([block, onehot])
        inter = (block[:, :, None] * onehot[:, None, :]).reshape(n, -1)
        return np.hstack([block, onehot, inter])

    def encode_sparse(self, covariates: np.ndarray, locations=None):
        """Same layout as :meth:`encode_many`, as a scipy CSC matrix."""
        import scipy.sparse as sp

        if self.mode in ("covariates", "single-interaction", "covariates+location"):
            return sp.csc_matrix(self.encode_many(covariates, locations))
        block = self.covariate_block(covariates)
        n, w, L = block.shape[0], self.covariate_width, self.n_locations
        locations = np.broadcast_to(np.asarray(locations, dtype=np.int64), (n,))
        if np.any((locations < 0) | (locations >= L)):
            raise EncodingError(f"location outside [0, {L})")
        rows, cols = np.nonzero(block)
        vals = block[rows, cols]
        all_rows = np.concatenate([rows, np.arange(n), rows])
        all_cols = np.concatenate([cols, w + locations, w + L + cols * L + locations[rows]])
        all_vals = np.concatenate([vals, np.ones(n), vals])
        return sp.csc_matrix((all_vals, (all_rows, all_cols)), shape=(n, self.dimension))

    def decode(self, vector: np.ndarray) -> tuple[np.ndarray, int | None]:
        """Invert :meth:`encode`: returns (covariate values, location or None)."""
        vector = np.asarray(vector, dtype=float)
        values = np.zeros(len(self.schema))
        col = 1 if self.mode == "single-interaction" else 0
        num_k = 0
        for j, cov in enumerate(self.schema):
            if cov.kind == "numeric":
                v = vector[col]
                if self.standardize:
                    v = v * self.scales[num_k] + self.means[num_k]
                values[j] = v
                num_k += 1
            else:
                values[j] = float(np.argmax(vector[col:col + cov.width]))
            col += cov.width
        location = None
        if self.mode == "single-interaction":
            location = int(vector[0])
        elif self.mode in ("covariates+location", "interactions"):
            w = self.covariate_width
            location = int(np.argmax(vector[w:w + self.n_locations]))
        return values, location

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "n_locations": self.n_locations,
            "mode": self.mode,
            "standardize": self.standardize,
            "means": list(self.means),
            "scales": list(self.scales),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMap":
        schema = CovariateSchema.from_dict(d["schema"])
        numeric = tuple(j for j, c in enumerate(schema) if c.kind == "numeric")
        return cls(schema, int(d["n_locations"]), d["mode"], bool(d["standardize"]),
                   tuple(d["means"]), tuple(d["scales"]), numeric)


def encode(record: RefugeeRecord | Sequence[float], location: int | None,
           fmap: FeatureMap) -> np.ndarray:
    """Encode a single record at ``location`` into a length-``m`` vector."""
    values = record.as_array() if isinstance(record, RefugeeRecord) else np.asarray(record, float)
    return fmap.encode_many(values[None, :], None if location is None else [location])[0]


def split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random disjoint partition into sizes ceil(f*n) and n - ceil(f*n)."""
    n = dataset.n
    if n < 2:
        raise ValueError("split needs at least two records")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    k = math.ceil(round(fraction * n, 9))  # 0.3 * 10 must give 3, not 4
    if k <= 0 or k >= n:
        raise ValueError(f"fraction {fraction} leaves an empty part for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(perm[:k])), dataset.subset(np.sort(perm[k:]))
