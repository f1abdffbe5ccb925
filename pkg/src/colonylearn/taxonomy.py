"""Class taxonomies: named colonies of related classes and their complements.

A semantic prior partitions the integer class ids ``0..class_count-1`` into
named colonies ("vehicles", "animals", ...). The opposite pool of a class is
everything outside its colony; a valid prior has at least two colonies, so
the pool is never empty.

Taxonomy file format (UTF-8 text)::

    # comment lines and trailing comments are ignored
    classes: 10
    names: airplane,automobile,...   # optional, human-readable class names
    vehicles: 0,1,8,9
    animals: 2,3,4,5,6,7

Priors are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from importlib import resources

import numpy as np


class TaxonomyError(ValueError):
    """Base class for taxonomy file problems."""


class TaxonomyParseError(TaxonomyError):
    """Raised for a syntactically malformed taxonomy file."""


class TaxonomyValidationError(TaxonomyError):
    """Raised when a parsed taxonomy violates the partition invariants."""


@dataclass(frozen=True)
class Colony:
    """A named group of related classes, members strictly increasing."""

    name: str
    members: tuple[int, ...]


@dataclass(frozen=True)
class SemanticPrior:
    """An exact partition of the classes into at least two colonies."""

    class_count: int
    class_names: tuple[str, ...]
    colonies: tuple[Colony, ...]

    def __post_init__(self):
        _validate_prior(self)

    @cached_property
    def _colony_index(self) -> np.ndarray:
        idx = np.full(self.class_count, -1, dtype=np.int64)
        for gi, colony in enumerate(self.colonies):
            idx[list(colony.members)] = gi
        return idx

    @cached_property
    def _pools(self) -> tuple[np.ndarray, ...]:
        full = np.arange(self.class_count)
        return tuple(
            full[self._colony_index != gi] for gi in range(len(self.colonies))
        )

    def colony_index_of(self, y: int) -> int:
        self._check_class(y)
        return int(self._colony_index[y])

    def colony_of(self, y: int) -> Colony:
        """The unique colony containing class ``y``."""
        return self.colonies[self.colony_index_of(y)]

    def opposite_pool(self, y: int) -> tuple[int, ...]:
        """All classes outside ``y``'s colony, in ascending order."""
        return tuple(int(c) for c in self.opposite_pool_array(y))

    def opposite_pool_array(self, y: int) -> np.ndarray:
        """Ascending numpy view of the opposite pool (do not mutate)."""
        self._check_class(y)
        return self._pools[int(self._colony_index[y])]

    def _check_class(self, y: int) -> None:
        if not 0 <= int(y) < self.class_count:
            raise ValueError(
                f"class id {y} out of range [0, {self.class_count})"
            )


def _validate_prior(prior: SemanticPrior) -> None:
    c = prior.class_count
    if c < 2:
        raise TaxonomyValidationError(f"need at least 2 classes, got {c}")
    if len(prior.class_names) != c:
        raise TaxonomyValidationError(
            f"got {len(prior.class_names)} class names for {c} classes"
        )
    if len(prior.colonies) < 2:
        only = prior.colonies[0].name if prior.colonies else "<none>"
        raise TaxonomyValidationError(
            f"single colony '{only}': every class needs a non-empty opposite "
            "pool, so at least 2 colonies are required"
        )
    seen: dict[int, str] = {}
    names: set[str] = set()
    for colony in prior.colonies:
        if colony.name in names:
            raise TaxonomyValidationError(f"duplicate colony name '{colony.name}'")
        names.add(colony.name)
        if not colony.members:
            raise TaxonomyValidationError(f"colony '{colony.name}' is empty")
        if list(colony.members) != sorted(set(colony.members)):
            raise TaxonomyValidationError(
                f"colony '{colony.name}' members must be strictly increasing"
            )
        for m in colony.members:
            if not 0 <= m < c:
                raise TaxonomyValidationError(
                    f"class {m} in colony '{colony.name}' out of range [0, {c})"
                )
            if m in seen:
                raise TaxonomyValidationError(
                    f"class {m} appears in colonies '{seen[m]}' and '{colony.name}'"
                )
            seen[m] = colony.name
    missing = [m for m in range(c) if m not in seen]
    if missing:
        raise TaxonomyValidationError(
            f"class {missing[0]} is not covered by any colony"
        )


def load_prior(source: str) -> SemanticPrior:
    """Parse taxonomy file content into a validated prior.

    Raises TaxonomyParseError for malformed lines and
    TaxonomyValidationError when the colonies do not form a partition.
    """
    class_count = None
    class_names: tuple[str, ...] | None = None
    colonies: list[Colony] = []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise TaxonomyParseError(
                f"line {lineno}: expected 'key: value', got {raw.strip()!r}"
            )
        key, _, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if key == "classes":
            if class_count is not None:
                raise TaxonomyParseError(f"line {lineno}: duplicate 'classes' header")
            try:
                class_count = int(value)
            except ValueError:
                raise TaxonomyParseError(
                    f"line {lineno}: class count must be an integer, got {value!r}"
                ) from None
        elif key == "names":
            class_names = tuple(n.strip() for n in value.split(","))
        else:
            if class_count is None:
                raise TaxonomyParseError(
                    f"line {lineno}: 'classes: N' header must precede colony lines"
                )
            if not key:
                raise TaxonomyParseError(f"line {lineno}: empty colony name")
            members: list[int] = []
            if value:
                for tok in value.split(","):
                    tok = tok.strip()
                    try:
                        members.append(int(tok))
                    except ValueError:
                        raise TaxonomyParseError(
                            f"line {lineno}: bad class index {tok!r} in "
                            f"colony '{key}'"
                        ) from None
            colonies.append(Colony(name=key, members=tuple(sorted(set(members)))))
    if class_count is None:
        raise TaxonomyParseError("missing 'classes: N' header line")
    if class_names is None:
        class_names = tuple(f"class_{i}" for i in range(class_count))
    return SemanticPrior(
        class_count=class_count,
        class_names=class_names,
        colonies=tuple(colonies),
    )


def format_prior(prior: SemanticPrior) -> str:
    """Render a prior back to taxonomy-file text (semantically lossless)."""
    lines = [f"classes: {prior.class_count}"]
    lines.append("names: " + ",".join(prior.class_names))
    for colony in prior.colonies:
        lines.append(f"{colony.name}: " + ",".join(str(m) for m in colony.members))
    return "\n".join(lines) + "\n"


# Shipped priors. CIFAR-100 groupings fold the dataset's 20 official
# superclasses into coarser groups; the fold is documented per line in the
# taxonomy files themselves.
BUILTIN_TAXONOMIES = {
    "fashion-mnist": "fashion_mnist.txt",
    "cifar10": "cifar10.txt",
    "cifar100-sd-v1": "cifar100_sd_v1.txt",
    "cifar100-sd-v2": "cifar100_sd_v2.txt",
}


def builtin_taxonomy_text(name: str) -> str:
    """Raw file content of a shipped taxonomy, by key."""
    try:
        filename = BUILTIN_TAXONOMIES[name]
    except KeyError:
        raise KeyError(
            f"unknown builtin taxonomy {name!r}; "
            f"choices: {sorted(BUILTIN_TAXONOMIES)}"
        ) from None
    return (
        resources.files("colonylearn")
        .joinpath("taxonomies", filename)
        .read_text(encoding="utf-8")
    )


def builtin_prior(name: str) -> SemanticPrior:
    """Load one of the shipped priors ('fashion-mnist', 'cifar10', ...)."""
    return load_prior(builtin_taxonomy_text(name))
