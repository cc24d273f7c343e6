"""Pattern bundle loading and the immutable in-memory registry.

A pattern bundle is one directory ``<category>/<id>/`` holding a
``pattern.toml`` manifest plus ``tests/positive_*.py`` and
``tests/negative_*.py`` source files. ``load_registry`` validates bundles
strictly and aborts with a path-qualified error on the first problem;
``scan_bundles`` is the lenient reader the quality gates use so that broken
bundles can still be reported check by check.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .sources import find_hint_comment, syntax_error

MANIFEST_NAME = "pattern.toml"
TESTS_DIR = "tests"

# Corpus shipped inside the package; scan and gate default to it.
DEFAULT_CORPUS_ROOT = Path(__file__).resolve().parent / "patterns"

CATEGORIES = (
    "ai-training",
    "ai-inference",
    "scientific-numerical",
    "scientific-performance",
    "scientific-reproducibility",
)

SEVERITIES = ("critical", "high", "medium")

CATEGORY_PREFIXES = {
    "ai-training": "ml",
    "ai-inference": "pt",
    "scientific-numerical": "num",
    "scientific-performance": "perf",
    "scientific-reproducibility": "rep",
}

ID_RE = re.compile(r"^[a-z]{2,5}-[0-9]{3}$")

# Substring reserved for the prompt code delimiters; banned from questions
# and test sources so scanned prompts can never be spoofed by corpus data.
RESERVED_DELIMITER = "<code-"

_MANIFEST_SCHEMA: dict[str, type] = {
    "id": str,
    "category": str,
    "severity": str,
    "title": str,
    "description": str,
    "detection_question": str,
    "doc_refs": list,
    "positive_tests": list,
    "negative_tests": list,
}

QUESTION_MIN_CHARS = 200
QUESTION_MAX_CHARS = 4000

_YES_RE = re.compile(r"YES\s*=")
_NO_RE = re.compile(r"NO\s*=")


class RegistryError(Exception):
    """A pattern directory could not be loaded; message names the path."""


class UnknownPatternError(KeyError):
    """Lookup of a pattern id not present in the registry."""


class UnknownCategoryError(ValueError):
    """A category name outside the five valid values."""


@dataclass(frozen=True)
class TestFile:
    __test__ = False  # keep pytest from collecting this despite the name

    relative_path: str
    source: str
    kind: str  # "positive" or "negative"


@dataclass(frozen=True)
class Pattern:
    id: str
    category: str
    severity: str
    title: str
    description: str
    detection_question: str
    doc_refs: tuple[str, ...]
    positive_tests: tuple[TestFile, ...]
    negative_tests: tuple[TestFile, ...]

    @property
    def test_files(self) -> tuple[TestFile, ...]:
        return self.positive_tests + self.negative_tests


class PatternRegistry:
    """Immutable id -> Pattern map with per-category counts.

    Safe to share across concurrent scan workers: nothing mutates after
    construction.
    """

    def __init__(self, patterns: Iterable[Pattern]):
        by_id: dict[str, Pattern] = {}
        for pattern in patterns:
            if pattern.id in by_id:
                raise RegistryError(f"duplicate pattern id {pattern.id!r}")
            by_id[pattern.id] = pattern
        self._patterns: Mapping[str, Pattern] = MappingProxyType(
            dict(sorted(by_id.items()))
        )
        counts: dict[str, int] = {}
        for pattern in self._patterns.values():
            counts[pattern.category] = counts.get(pattern.category, 0) + 1
        self._category_counts: Mapping[str, int] = MappingProxyType(counts)

    @property
    def patterns(self) -> Mapping[str, Pattern]:
        return self._patterns

    @property
    def category_counts(self) -> Mapping[str, int]:
        return self._category_counts

    def __len__(self) -> int:
        return len(self._patterns)

    def __iter__(self):
        return iter(self._patterns.values())

    def __contains__(self, pattern_id: str) -> bool:
        return pattern_id in self._patterns

    def __eq__(self, other) -> bool:
        if not isinstance(other, PatternRegistry):
            return NotImplemented
        return dict(self._patterns) == dict(other._patterns)


@dataclass
class RawBundle:
    """Lenient view of one bundle directory, usable even when invalid.

    ``manifest`` is None when the file is missing or does not parse
    (``manifest_error`` then says why). ``disk_tests`` maps the relative path
    of every ``tests/positive_*.py`` / ``tests/negative_*.py`` found on disk
    to its text, or to None when the file could not be read.
    """

    directory: Path
    manifest: dict | None
    manifest_error: str | None
    disk_tests: dict[str, str | None]

    @property
    def pattern_id(self) -> str:
        if self.manifest and isinstance(self.manifest.get("id"), str):
            return self.manifest["id"]
        return self.directory.name

    def declared_tests(self, kind: str) -> list[str]:
        """Relative paths declared in the manifest for ``kind``; [] if unusable."""
        if not self.manifest:
            return []
        value = self.manifest.get(f"{kind}_tests")
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return list(value)
        return []

    @classmethod
    def from_pattern(cls, pattern: Pattern) -> "RawBundle":
        manifest = {
            "id": pattern.id,
            "category": pattern.category,
            "severity": pattern.severity,
            "title": pattern.title,
            "description": pattern.description,
            "detection_question": pattern.detection_question,
            "doc_refs": list(pattern.doc_refs),
            "positive_tests": [t.relative_path for t in pattern.positive_tests],
            "negative_tests": [t.relative_path for t in pattern.negative_tests],
        }
        disk = {t.relative_path: t.source for t in pattern.test_files}
        return cls(
            directory=Path(pattern.id),
            manifest=manifest,
            manifest_error=None,
            disk_tests=disk,
        )


def scan_bundle(directory: Path) -> RawBundle:
    """Read one bundle directory without validating it."""
    manifest_path = directory / MANIFEST_NAME
    manifest: dict | None = None
    manifest_error: str | None = None
    if not manifest_path.is_file():
        manifest_error = f"{manifest_path}: manifest missing"
    else:
        try:
            manifest = tomllib.loads(manifest_path.read_text(encoding="utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError, OSError) as exc:
            manifest_error = f"{manifest_path}: {exc}"

    disk_tests: dict[str, str | None] = {}
    tests_dir = directory / TESTS_DIR
    if tests_dir.is_dir():
        for path in sorted(tests_dir.iterdir()):
            if not path.is_file() or path.suffix != ".py":
                continue
            if not (path.name.startswith("positive_") or path.name.startswith("negative_")):
                continue
            rel = f"{TESTS_DIR}/{path.name}"
            try:
                disk_tests[rel] = path.read_text(encoding="utf-8")
            except (OSError, UnicodeDecodeError):
                disk_tests[rel] = None
    return RawBundle(
        directory=directory,
        manifest=manifest,
        manifest_error=manifest_error,
        disk_tests=disk_tests,
    )


def iter_bundle_dirs(root: Path) -> list[Path]:
    """Bundle directories under ``root``, in deterministic order.

    ``root`` is the directory whose children are category directories; a
    ``root/patterns/`` layout is also accepted so callers can point at either
    a corpus checkout or its parent.
    """
    root = Path(root)
    if not root.is_dir():
        raise RegistryError(f"{root}: not a directory")
    if not any(child.name in CATEGORIES for child in root.iterdir() if child.is_dir()):
        nested = root / "patterns"
        if nested.is_dir():
            root = nested
    dirs = []
    for category_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for bundle_dir in sorted(p for p in category_dir.iterdir() if p.is_dir()):
            dirs.append(bundle_dir)
    return dirs


def scan_bundles(root: Path) -> list[RawBundle]:
    return [scan_bundle(d) for d in iter_bundle_dirs(root)]


def _check_manifest_schema(manifest: dict, where: Path) -> None:
    for key, typ in _MANIFEST_SCHEMA.items():
        if key not in manifest:
            raise RegistryError(f"{where}: manifest missing key {key!r}")
        if not isinstance(manifest[key], typ):
            raise RegistryError(
                f"{where}: manifest key {key!r} must be {typ.__name__}, "
                f"got {type(manifest[key]).__name__}"
            )
    unknown = set(manifest) - set(_MANIFEST_SCHEMA)
    if unknown:
        raise RegistryError(f"{where}: unknown manifest keys {sorted(unknown)}")
    for key in ("doc_refs", "positive_tests", "negative_tests"):
        if not all(isinstance(v, str) for v in manifest[key]):
            raise RegistryError(f"{where}: manifest key {key!r} must be a list of strings")


def _load_tests(bundle: RawBundle, kind: str, where: Path) -> tuple[TestFile, ...]:
    declared = bundle.declared_tests(kind)
    tests = []
    for rel in declared:
        if rel not in bundle.disk_tests:
            raise RegistryError(f"{where}: declared test file {rel!r} not found on disk")
        source = bundle.disk_tests[rel]
        if source is None:
            raise RegistryError(f"{where}: test file {rel!r} is unreadable")
        tests.append(TestFile(relative_path=rel, source=source, kind=kind))
    return tuple(tests)


def _validate_pattern(bundle: RawBundle) -> Pattern:
    where = bundle.directory
    if bundle.manifest is None:
        raise RegistryError(bundle.manifest_error or f"{where}: manifest unreadable")
    manifest = bundle.manifest
    _check_manifest_schema(manifest, where)

    pattern_id = manifest["id"]
    if not ID_RE.match(pattern_id):
        raise RegistryError(f"{where}: id {pattern_id!r} does not match prefix-number form")
    category = manifest["category"]
    if category not in CATEGORIES:
        raise RegistryError(f"{where}: unknown category {category!r}")
    expected_prefix = CATEGORY_PREFIXES[category]
    if pattern_id.split("-")[0] != expected_prefix:
        raise RegistryError(
            f"{where}: id {pattern_id!r} must use prefix {expected_prefix!r} "
            f"for category {category!r}"
        )
    severity = manifest["severity"]
    if severity not in SEVERITIES:
        raise RegistryError(f"{where}: unknown severity {severity!r}")

    question = manifest["detection_question"]
    if not _YES_RE.search(question) or not _NO_RE.search(question):
        raise RegistryError(f"{where}: detection question lacks a YES=/NO= contract clause")
    if RESERVED_DELIMITER in question:
        raise RegistryError(f"{where}: detection question contains reserved {RESERVED_DELIMITER!r}")

    positives = _load_tests(bundle, "positive", where)
    negatives = _load_tests(bundle, "negative", where)
    if len(positives) < 3 or len(negatives) < 3:
        raise RegistryError(
            f"{where}: needs at least 3 positive and 3 negative tests, "
            f"has {len(positives)}/{len(negatives)}"
        )
    declared = set(manifest["positive_tests"]) | set(manifest["negative_tests"])
    undeclared = set(bundle.disk_tests) - declared
    if undeclared:
        raise RegistryError(f"{where}: test files on disk but not in manifest: {sorted(undeclared)}")

    for test in positives + negatives:
        err = syntax_error(test.source)
        if err:
            raise RegistryError(f"{where}: {test.relative_path} is not valid source ({err})")
        hint = find_hint_comment(test.source)
        if hint:
            raise RegistryError(
                f"{where}: {test.relative_path} line {hint[0]} contains hint comment {hint[1]!r}"
            )
        if RESERVED_DELIMITER in test.source:
            raise RegistryError(
                f"{where}: {test.relative_path} contains reserved {RESERVED_DELIMITER!r}"
            )

    return Pattern(
        id=pattern_id,
        category=category,
        severity=severity,
        title=manifest["title"],
        description=manifest["description"],
        detection_question=question,
        doc_refs=tuple(manifest["doc_refs"]),
        positive_tests=positives,
        negative_tests=negatives,
    )


def load_registry(root: Path) -> PatternRegistry:
    """Load and validate every bundle under ``root`` into an immutable registry.

    An empty corpus loads as a registry with zero patterns; any invalid
    bundle aborts the whole load with a path-qualified RegistryError.
    """
    patterns: dict[str, tuple[Path, Pattern]] = {}
    for directory in iter_bundle_dirs(Path(root)):
        bundle = scan_bundle(directory)
        pattern = _validate_pattern(bundle)
        if pattern.id in patterns:
            first_dir = patterns[pattern.id][0]
            raise RegistryError(
                f"duplicate pattern id {pattern.id!r} declared by both "
                f"{first_dir} and {directory}"
            )
        patterns[pattern.id] = (directory, pattern)
    return PatternRegistry(p for _, p in patterns.values())


def filter_by_categories(registry: PatternRegistry, categories: Iterable[str]) -> PatternRegistry:
    """Registry restricted to ``categories``; an empty set means all of them."""
    cats = set(categories)
    unknown = cats - set(CATEGORIES)
    if unknown:
        raise UnknownCategoryError(f"unknown categories: {sorted(unknown)}")
    if not cats:
        return registry
    return PatternRegistry(p for p in registry if p.category in cats)


def filter_by_ids(registry: PatternRegistry, pattern_ids: Iterable[str]) -> PatternRegistry:
    """Registry restricted to the given ids; unknown ids are an error."""
    wanted = set(pattern_ids)
    missing = wanted - set(registry.patterns)
    if missing:
        raise UnknownPatternError(f"unknown pattern ids: {sorted(missing)}")
    return PatternRegistry(p for p in registry if p.id in wanted)


def get_pattern(registry: PatternRegistry, pattern_id: str) -> Pattern:
    try:
        return registry.patterns[pattern_id]
    except KeyError:
        raise UnknownPatternError(f"no pattern with id {pattern_id!r}") from None


# -- serialization back to the directory format ------------------------------

def _toml_str(value: str) -> str:
    # json string escaping is a strict subset of TOML basic-string escaping
    import json

    return json.dumps(value, ensure_ascii=True)


def _toml_str_list(values: Iterable[str]) -> str:
    return "[" + ", ".join(_toml_str(v) for v in values) + "]"


def render_manifest(pattern: Pattern) -> str:
    lines = [
        f"id = {_toml_str(pattern.id)}",
        f"category = {_toml_str(pattern.category)}",
        f"severity = {_toml_str(pattern.severity)}",
        f"title = {_toml_str(pattern.title)}",
        f"description = {_toml_str(pattern.description)}",
        f"detection_question = {_toml_str(pattern.detection_question)}",
        f"doc_refs = {_toml_str_list(pattern.doc_refs)}",
        f"positive_tests = {_toml_str_list(t.relative_path for t in pattern.positive_tests)}",
        f"negative_tests = {_toml_str_list(t.relative_path for t in pattern.negative_tests)}",
    ]
    return "\n".join(lines) + "\n"


def write_bundle(pattern: Pattern, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / MANIFEST_NAME).write_text(render_manifest(pattern), encoding="utf-8")
    for test in pattern.test_files:
        dest = directory / test.relative_path
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_text(test.source, encoding="utf-8")


def write_registry(registry: PatternRegistry, root: Path) -> None:
    """Serialize a registry back to the on-disk bundle layout under ``root``."""
    root = Path(root)
    for pattern in registry:
        write_bundle(pattern, root / pattern.category / pattern.id)
