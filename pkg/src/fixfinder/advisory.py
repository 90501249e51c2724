"""Advisory loading and distillation into an :class:`AdvisoryRecord`.

Raw advisories come from the NVD CVE API (v2 JSON) or from a local JSON file.
The record adds what the later phases need: version strings, file paths and
code identifiers mentioned in the description, commit hashes referenced by
the NVD and by the advisory pages it links to, and the most frequent words
on those pages.
"""

import hashlib
import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from html.parser import HTMLParser
from pathlib import Path
from typing import NamedTuple, Protocol

from .filtering import RELEVANT_EXTENSIONS
from .textprep import preprocess

logger = logging.getLogger(__name__)

NVD_API_URL = "https://services.nvd.nist.gov/rest/json/cves/2.0"

CVE_ID_RE = re.compile(r"^CVE-\d{4}-\d{4,}$")
VERSION_RE = re.compile(r"(?<![\d.])\d+(?:\.\d+)+(?:[A-Za-z][A-Za-z0-9]*)?")
COMMIT_REF_RE = re.compile(r"/commit/([0-9A-Fa-f]{8})")
URL_RE = re.compile(r"https?://[^\s\"'<>()]+")

_TRIM = ".,;:!?()[]{}<>\"'`"
_CAMEL_RE = re.compile(r"[a-z0-9][A-Z]|[A-Z]{2,}[a-z]")
_SNAKE_RE = re.compile(r"^_*[A-Za-z0-9]+(?:_+[A-Za-z0-9]+)+_*$")
_DOT_RE = re.compile(r"^[A-Za-z_]\w+(?:\.[A-Za-z_]\w+)+$")


class AdvisoryError(Exception):
    pass


class MissingField(AdvisoryError):
    def __init__(self, name):
        super().__init__(f"advisory document is missing field {name!r}")
        self.field = name


class MalformedId(AdvisoryError):
    pass


class FetchFailure(AdvisoryError):
    pass


@dataclass
class RawAdvisory:
    cve_id: str
    description: str
    published: datetime
    reference_urls: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not CVE_ID_RE.match(self.cve_id):
            raise MalformedId(f"not a CVE identifier: {self.cve_id!r}")


@dataclass
class AdvisoryRecord:
    raw: RawAdvisory
    versions: list[str] = field(default_factory=list)
    paths: list[str] = field(default_factory=list)
    code_tokens: list[str] = field(default_factory=list)
    nvd_commit_prefixes: set[str] = field(default_factory=set)
    advisory_commit_prefixes: set[str] = field(default_factory=set)
    reference_keywords: list[str] = field(default_factory=list)
    unreachable_references: list[str] = field(default_factory=list)

    @property
    def cve_id(self) -> str:
        return self.raw.cve_id

    @property
    def description(self) -> str:
        return self.raw.description

    @property
    def published(self) -> datetime:
        return self.raw.published

    def to_dict(self) -> dict:
        return {
            "cve_id": self.raw.cve_id,
            "description": self.raw.description,
            "published": self.raw.published.isoformat(),
            "reference_urls": list(self.raw.reference_urls),
            "versions": self.versions,
            "paths": self.paths,
            "code_tokens": self.code_tokens,
            "nvd_commit_prefixes": sorted(self.nvd_commit_prefixes),
            "advisory_commit_prefixes": sorted(self.advisory_commit_prefixes),
            "reference_keywords": self.reference_keywords,
            "unreachable_references": self.unreachable_references,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)


# -- loading ---------------------------------------------------------------


def parse_timestamp(value: str) -> datetime:
    """Parse an RFC 3339 / NVD timestamp; naive values are taken as UTC."""
    text = value.strip().replace("Z", "+00:00")
    m = re.match(r"^(.*T\d{2}:\d{2}:\d{2})(\.\d+)?(.*)$", text)
    if m:
        # fromisoformat in 3.10 only takes 3 or 6 fractional digits
        frac = (m.group(2) or "")[1:7].ljust(6, "0") if m.group(2) else ""
        text = m.group(1) + ("." + frac if frac else "") + m.group(3)
    try:
        ts = datetime.fromisoformat(text)
    except ValueError as exc:
        raise AdvisoryError(f"bad timestamp {value!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _unwrap(doc: dict) -> dict:
    if "vulnerabilities" in doc:
        items = doc["vulnerabilities"]
        if not items:
            raise MissingField("vulnerabilities")
        doc = items[0]
    if "cve" in doc and isinstance(doc["cve"], dict):
        doc = doc["cve"]
    return doc


def raw_advisory_from_json(doc: dict) -> RawAdvisory:
    """Build a :class:`RawAdvisory` from an NVD v2 item or a minimal document."""
    doc = _unwrap(doc)
    for name in ("id", "published"):
        if name not in doc:
            raise MissingField(name)

    if "descriptions" in doc:
        english = [d.get("value", "") for d in doc["descriptions"] if d.get("lang", "en") == "en"]
        if not english:
            raise MissingField("descriptions")
        description = english[0]
    elif "description" in doc:
        description = doc["description"]
    else:
        raise MissingField("descriptions")

    if "references" not in doc:
        raise MissingField("references")
    urls = [r["url"] if isinstance(r, dict) else r for r in doc["references"]]

    return RawAdvisory(
        cve_id=doc["id"],
        description=description,
        published=parse_timestamp(doc["published"]),
        reference_urls=urls,
    )


def load_raw_advisory(path=None, *, cve_id=None, endpoint=NVD_API_URL, timeout=30.0) -> RawAdvisory:
    """Load an advisory from a local JSON file, or from the NVD API by id."""
    if (path is None) == (cve_id is None):
        raise ValueError("give exactly one of path or cve_id")
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise FetchFailure(f"cannot read advisory file {path}: {exc}") from exc
        return raw_advisory_from_json(doc)

    if not CVE_ID_RE.match(cve_id):
        raise MalformedId(f"not a CVE identifier: {cve_id!r}")
    import requests

    try:
        resp = requests.get(endpoint, params={"cveId": cve_id}, timeout=timeout)
        resp.raise_for_status()
        doc = resp.json()
    except (requests.RequestException, ValueError) as exc:
        raise FetchFailure(f"NVD request for {cve_id} failed: {exc}") from exc
    return raw_advisory_from_json(doc)


# -- description mining ----------------------------------------------------


def _dedup(items):
    return list(dict.fromkeys(items))


def _words(text: str):
    for tok in text.split():
        tok = tok.strip(_TRIM)
        if tok:
            yield tok


def extract_versions(description: str) -> list[str]:
    return _dedup(VERSION_RE.findall(description))


def _is_path(token: str) -> bool:
    if "://" in token or not re.search(r"[A-Za-z]", token):
        return False
    if "/" in token:
        return True
    stem, dot, ext = token.rpartition(".")
    return bool(dot and stem and ext.lower() in RELEVANT_EXTENSIONS)


def extract_paths(description: str) -> list[str]:
    return _dedup(t for t in _words(description) if _is_path(t))


def _is_code_token(token: str) -> bool:
    if "/" in token or VERSION_RE.fullmatch(token):
        return False
    return bool(_CAMEL_RE.search(token) or _SNAKE_RE.match(token) or _DOT_RE.match(token))


def extract_code_tokens(description: str) -> list[str]:
    paths = set(extract_paths(description))
    return _dedup(t for t in _words(description) if t not in paths and _is_code_token(t))


def collect_commit_prefixes(urls) -> set[str]:
    prefixes = set()
    for url in urls:
        prefixes.update(m.lower() for m in COMMIT_REF_RE.findall(url))
    return prefixes


# -- reference pages -------------------------------------------------------


class ReferenceFetcher(Protocol):
    def fetch(self, url: str) -> str:
        """Return the page text or raise FetchFailure."""


def fixture_name(url: str) -> str:
    return hashlib.sha256(url.encode("utf-8")).hexdigest()


class FixtureFetcher:
    """Serves pages from a directory holding one file per URL."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.calls = 0

    def fetch(self, url: str) -> str:
        self.calls += 1
        path = self.directory / fixture_name(url)
        try:
            return path.read_bytes().decode("utf-8", errors="replace")
        except OSError as exc:
            raise FetchFailure(f"no fixture for {url}") from exc


class HttpFetcher:
    def __init__(self, timeout=15.0):
        import requests

        self.session = requests.Session()
        self.timeout = timeout

    def fetch(self, url: str) -> str:
        import requests

        try:
            resp = self.session.get(url, timeout=self.timeout)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise FetchFailure(f"{url}: {exc}") from exc
        return resp.text


class _PageParser(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.text = []
        self.links = []
        self._skip = 0

    def handle_starttag(self, tag, attrs):
        if tag in ("script", "style"):
            self._skip += 1
        for name, value in attrs:
            if name in ("href", "src") and value:
                self.links.append(value)

    def handle_endtag(self, tag):
        if tag in ("script", "style") and self._skip:
            self._skip -= 1

    def handle_data(self, data):
        if not self._skip:
            self.text.append(data)


def parse_page(page: str) -> tuple[str, list[str]]:
    """Return the visible text of a page and every URL it mentions."""
    parser = _PageParser()
    parser.feed(page)
    parser.close()
    text = " ".join(parser.text)
    return text, parser.links + URL_RE.findall(page)


class ScrapeResult(NamedTuple):
    keywords: list[str]
    commit_prefixes: set[str]
    failed_urls: list[str]


def _safe_fetch(fetcher, url):
    try:
        return fetcher.fetch(url)
    except FetchFailure as exc:
        logger.warning("skipping reference: %s", exc)
        return None


def scrape_reference_keywords(urls, fetcher, preprocessor=preprocess, top_k=20, workers=4) -> ScrapeResult:
    """Fetch first-level reference pages and summarise them."""
    unique = sorted(set(urls))
    if not unique:
        return ScrapeResult([], set(), [])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pages = list(pool.map(lambda u: _safe_fetch(fetcher, u), unique))

    counts = Counter()
    prefixes = set()
    failed = []
    for url, page in zip(unique, pages):
        if page is None:
            failed.append(url)
            continue
        text, links = parse_page(page)
        counts.update(preprocessor(text))
        prefixes |= collect_commit_prefixes(links)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ScrapeResult([w for w, _ in ranked[:top_k]], prefixes, failed)


def build_advisory_record(raw: RawAdvisory, fetcher=None, top_k=20) -> AdvisoryRecord:
    record = AdvisoryRecord(
        raw=raw,
        versions=extract_versions(raw.description),
        paths=extract_paths(raw.description),
        code_tokens=extract_code_tokens(raw.description),
        nvd_commit_prefixes=collect_commit_prefixes(raw.reference_urls),
    )
    if fetcher is not None:
        scraped = scrape_reference_keywords(raw.reference_urls, fetcher, top_k=top_k)
        record.reference_keywords = scraped.keywords
        record.advisory_commit_prefixes = scraped.commit_prefixes
        record.unreachable_references = scraped.failed_urls
    return record
