"""Category descriptor tooling: attribute-rich, color-free prompt sentences.

A descriptor is a category name plus an ordered list of appearance
attributes; rendering produces sentences like

    An airplane is a large vehicle with long wings and a streamlined body

Descriptor generation can call a remote LLM endpoint or fall back to
bundled offline fixtures; either way every result is run through the
validator, and failures are handed back for manual repair instead of being
silently accepted.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import httpx

from .errors import ParameterError

log = logging.getLogger(__name__)

# words whose spoken form disagrees with their first letter
_AN_EXCEPTIONS = {"hour", "hourglass", "honest", "honor", "honour", "heir", "heirloom"}
_A_EXCEPTIONS = {
    "unicorn", "unicycle", "uniform", "university", "user", "utensil",
    "ukulele", "eulogy", "european", "ewe", "one", "once",
}

DEFAULT_INSTRUCTION = (
    "List the defining visual appearance features of a/an {category} as a JSON "
    "array of short phrases. Features must be distinct, independent of image "
    "style or setting, and must never mention colors."
)


def _load_data_text(name: str) -> str:
    return resources.files("domainbench.data").joinpath(name).read_text(encoding="utf-8")


def default_blocklist() -> tuple[str, ...]:
    lines = (line.strip() for line in _load_data_text("color_blocklist.txt").splitlines())
    return tuple(line for line in lines if line)


def _normalize(text: str) -> str:
    return " ".join(text.casefold().split())


@dataclass
class CategoryDescriptor:
    category: str
    attributes: list[str]

    def __post_init__(self):
        if not self.attributes:
            raise ParameterError(f"descriptor for {self.category!r} needs at least one attribute")
        self.attributes = [str(a).strip() for a in self.attributes]


def article_for(word: str) -> str:
    w = word.strip().split()[0].casefold() if word.strip() else ""
    for candidate in (w, w.split("-")[0]):
        if candidate in _AN_EXCEPTIONS:
            return "An"
        if candidate in _A_EXCEPTIONS:
            return "A"
    return "An" if w[:1] in "aeiou" else "A"


def render_prompt(descriptor: CategoryDescriptor, verb: str = "is") -> str:
    """'A/An {category} has/is attr1, attr2 and attrN'."""
    if verb not in ("has", "is"):
        raise ParameterError(f"verb must be 'has' or 'is', got {verb!r}")
    attrs = descriptor.attributes
    if len(attrs) == 1:
        joined = attrs[0]
    else:
        joined = ", ".join(attrs[:-1]) + " and " + attrs[-1]
    return f"{article_for(descriptor.category)} {descriptor.category} {verb} {joined}"


def parse_prompt(sentence: str) -> tuple[CategoryDescriptor, str]:
    """Inverse of render_prompt for well-formed sentences."""
    m = re.match(r"^(A|An)\s+(.+?)\s+(has|is)\s+(.+)$", sentence.strip())
    if not m:
        raise ParameterError(f"cannot parse prompt sentence {sentence!r}")
    _, category, verb, tail = m.groups()
    parts = tail.split(", ")
    head, sep, last = parts[-1].rpartition(" and ")
    attrs = parts[:-1] + ([head, last] if sep else [last])
    return CategoryDescriptor(category=category, attributes=attrs), verb


@dataclass(frozen=True)
class Violation:
    rule: str  # "color-term" | "duplicate-attribute"
    text: str


@dataclass
class ValidationReport:
    category: str
    violations: list[Violation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def validate(descriptor: CategoryDescriptor, blocklist=None) -> ValidationReport:
    """Flag blocklisted color terms (word boundary, case-insensitive) and
    duplicate attributes (after case folding and whitespace normalization)."""
    terms = default_blocklist() if blocklist is None else tuple(blocklist)
    pattern = re.compile(r"\b(" + "|".join(re.escape(t) for t in terms) + r")\b", re.IGNORECASE)
    report = ValidationReport(category=descriptor.category)
    seen = set()
    for attr in descriptor.attributes:
        for hit in pattern.findall(attr):
            report.violations.append(Violation("color-term", hit))
        norm = _normalize(attr)
        if norm in seen:
            report.violations.append(Violation("duplicate-attribute", attr))
        seen.add(norm)
    return report


def load_descriptors(path) -> list[CategoryDescriptor]:
    """Read a category -> attribute-list JSON mapping."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ParameterError(f"{path}: expected a category -> attributes mapping")
    return [CategoryDescriptor(category=k, attributes=list(v)) for k, v in doc.items()]


def save_descriptors(descriptors, path) -> None:
    doc = {d.category: d.attributes for d in descriptors}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Generation backends


class OfflineFixtureBackend:
    """Deterministic canned attributes, from the bundled fixture file or a
    user-provided one."""

    def __init__(self, path=None):
        if path is None:
            self._table = json.loads(_load_data_text("descriptor_fixtures.json"))
        else:
            with open(path, encoding="utf-8") as fh:
                self._table = json.load(fh)

    def complete(self, category: str, instruction: str) -> list[str]:
        if category not in self._table:
            raise KeyError(f"no fixture descriptor for category {category!r}")
        return list(self._table[category])


class RemoteBackend:
    """Chat-completions-style HTTP endpoint; the reply content must be a JSON
    array of attribute strings. The credential comes from the environment."""

    def __init__(self, url: str, model: str, api_key: str, client: httpx.Client | None = None, timeout: float = 30.0):
        self.url = url
        self.model = model
        self._headers = {"Authorization": f"Bearer {api_key}"}
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, category: str, instruction: str) -> list[str]:
        payload = {"model": self.model, "messages": [{"role": "user", "content": instruction}]}
        response = self._client.post(self.url, json=payload, headers=self._headers)
        response.raise_for_status()
        content = response.json()["choices"][0]["message"]["content"]
        attrs = json.loads(content)
        if not isinstance(attrs, list) or not all(isinstance(a, str) for a in attrs):
            raise ValueError(f"endpoint reply for {category!r} is not a JSON array of strings")
        return attrs


@dataclass
class GenerationResult:
    category: str
    descriptor: CategoryDescriptor | None
    report: ValidationReport | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.report is not None and self.report.passed


def generate_descriptors(
    categories,
    instruction_template: str = DEFAULT_INSTRUCTION,
    backend=None,
    blocklist=None,
    workers: int = 4,
) -> list[GenerationResult]:
    """Generate one descriptor per category through the backend.

    Every parsed descriptor is validated; descriptors that fail come back
    with their report for manual repair. Backend failures are captured per
    category without aborting the batch. Results keep input order.
    """
    backend = backend or OfflineFixtureBackend()
    categories = list(categories)

    def one(category: str) -> GenerationResult:
        try:
            attrs = backend.complete(category, instruction_template.format(category=category))
            descriptor = CategoryDescriptor(category=category, attributes=attrs)
        except Exception as exc:  # noqa: BLE001 - isolate per-category failures
            log.warning("descriptor generation failed for %r: %s", category, exc)
            return GenerationResult(category=category, descriptor=None, report=None, error=str(exc))
        return GenerationResult(category, descriptor, validate(descriptor, blocklist))

    if workers > 1 and len(categories) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, categories))
    return [one(c) for c in categories]
