"""Synthetic advisory corpora over generated git repositories.

Builds small but realistic repositories with ``git fast-import`` (fixed
identities and dates, so commit ids are reproducible), plants fix commits
for a set of advisories, and writes the advisory documents, reference-page
fixtures and dataset file the CLI consumes.

Each advisory carries exactly one planted signal:

* ``cve_message``   the fix message names the CVE id
* ``nvd_reference`` the NVD references link the fix commit
* ``path_tokens``   the description names the changed file and identifiers
"""

import json
import random
import subprocess
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .advisory import fixture_name

IDENT = "Dev Eloper <dev@example.org>"
SIGNALS = ("cve_message", "nvd_reference", "path_tokens")

_SYLLABLES = ("bar", "cor", "dex", "fal", "gim", "hul", "jor", "kel", "lum", "mor", "nix",
              "pel", "quor", "ras", "sil", "tov", "ulm", "vex", "wim", "yar", "zel")
_CODE_WORDS = ("buffer", "count", "index", "value", "node", "item", "entry", "result", "config",
               "context", "handler", "stream", "reader", "writer", "cache", "session", "token",
               "state", "event", "queue", "offset", "length", "format", "option", "record")
_NOISE_TEMPLATES = (
    "Refactor {w1} handling in {cls}",
    "Add unit tests for {cls}",
    "Improve {w1} {w2} performance",
    "Clean up {w1} code",
    "Update {w1} defaults",
    "Fix typo in {cls}",
    "Simplify {w1} {w2} logic",
    "Merge pull request #{n} from contributor/{w1}-{w2}",
    "{proj}-{n}: support {w1} {w2}",
    "Close #{n} and #{m}",
    "Backport fix for CVE-2016-{n4}",
    "Avoid NPE when {w1} is missing",
)
_VULNS = (
    ("XML external entity injection", "xxe", ("external", "entity", "resolver", "doctype")),
    ("path traversal", "traversal", ("traversal", "directory", "filename", "normalize")),
    ("cross-site scripting", "xss", ("script", "escape", "markup", "render")),
    ("deserialization of untrusted data", "deserialization", ("deserialize", "gadget", "classloader", "whitelist")),
    ("SQL injection", "sqli", ("query", "statement", "placeholder", "quoting")),
    ("regular expression denial of service", "redos", ("regex", "backtracking", "pattern", "catastrophic")),
    ("server-side request forgery", "ssrf", ("hostname", "forgery", "outbound", "internal")),
    ("zip slip", "zipslip", ("archive", "extract", "unzip", "destination")),
    ("HTTP header injection", "crlf", ("header", "newline", "carriage", "splitting")),
    ("open redirect", "redirect", ("redirect", "location", "whitelist", "absolute")),
)
_IMPACTS = ("read arbitrary files", "execute arbitrary code", "inject arbitrary web script",
            "cause a denial of service", "access internal services")


def _utc(days: float, base: datetime) -> int:
    return int((base + timedelta(days=days)).timestamp())


# -- fast-import -----------------------------------------------------------


@dataclass
class SynthCommit:
    """One commit for :func:`fast_import`.

    ``files`` maps paths to new contents (``None`` deletes). ``parents``
    lists marks of earlier commits; the first is the first parent.
    """

    mark: int
    message: str
    when: int
    files: dict = field(default_factory=dict)
    parents: list = field(default_factory=list)
    branch: str = "master"


def _data(text: str) -> bytes:
    raw = text.encode("utf-8")
    return b"data %d\n" % len(raw) + raw + b"\n"


def fast_import(repo_dir, commits, tags=None, bare=True) -> dict[int, str]:
    """Create a repository from ``commits``; return mark -> commit id.

    ``tags`` maps tag names to ``(mark, annotated_when_or_None)``; lightweight
    tags take the commit's date, annotated ones carry their own timestamp.
    """
    repo_dir = Path(repo_dir).resolve()
    repo_dir.mkdir(parents=True, exist_ok=True)
    init = ["git", "init", "-q", "--initial-branch=master"] + (["--bare"] if bare else []) + [str(repo_dir)]
    subprocess.run(init, check=True, capture_output=True)

    chunks = []
    for c in commits:
        chunks.append(b"commit refs/heads/%s\nmark :%d\n" % (c.branch.encode(), c.mark))
        for role in ("author", "committer"):
            chunks.append(f"{role} {IDENT} {c.when} +0000\n".encode())
        chunks.append(_data(c.message))
        for i, parent in enumerate(c.parents):
            chunks.append(b"%s :%d\n" % (b"from" if i == 0 else b"merge", parent))
        for path, content in sorted(c.files.items()):
            if content is None:
                chunks.append(f"D {path}\n".encode())
            else:
                chunks.append(f"M 100644 inline {path}\n".encode())
                chunks.append(_data(content))
        chunks.append(b"\n")
    for name, (mark, annotated_when) in sorted((tags or {}).items()):
        if annotated_when is None:
            chunks.append(f"reset refs/tags/{name}\nfrom :{mark}\n\n".encode())
        else:
            chunks.append(f"tag {name}\nfrom :{mark}\ntagger {IDENT} {annotated_when} +0000\n".encode())
            chunks.append(_data(f"release {name}"))
    marks = repo_dir / "fixfinder-marks"
    subprocess.run(
        ["git", "-C", str(repo_dir), "fast-import", "--quiet", f"--export-marks={marks}"],
        input=b"".join(chunks), check=True, capture_output=True,
    )
    out = {}
    for line in marks.read_text().splitlines():
        mark, sha = line.split()
        out[int(mark[1:])] = sha
    marks.unlink()
    if not bare:
        subprocess.run(["git", "-C", str(repo_dir), "checkout", "-q", "-f", "master"],
                       check=True, capture_output=True)
    return out


# -- corpus ----------------------------------------------------------------


@dataclass
class PlantedAdvisory:
    cve_id: str
    repo: str
    signal: str
    published: datetime
    description: str
    references: list[str]
    fix_mark: int
    fix_id: str = ""


class _Words:
    def __init__(self, rng):
        self.rng = rng
        self.used = set()

    def fresh(self, parts=2) -> str:
        attempts = 0
        while True:
            word = "".join(self.rng.choice(_SYLLABLES) for _ in range(parts))
            if word not in self.used:
                self.used.add(word)
                return word
            attempts += 1
            if attempts % 20 == 0:
                parts += 1


def _code_line(rng) -> str:
    a, b, c = rng.sample(_CODE_WORDS, 3)
    return f"        {a}{b.capitalize()} = compute{c.capitalize()}({a});"


def _class_body(pkg, cls, methods, rng) -> list[str]:
    lines = [f"package org.{pkg};", "", f"public class {cls} {{"]
    for m in methods:
        lines += [f"    public void {m}() {{"] + [_code_line(rng) for _ in range(3)] + ["    }", ""]
    return lines + ["}"]


def _edit(lines, rng, new_lines):
    pos = rng.randrange(3, max(4, len(lines) - 1))
    if rng.random() < 0.4 and len(lines) > 6:
        lines[pos] = new_lines[0]
        new_lines = new_lines[1:]
    lines[pos:pos] = new_lines


class _RepoBuilder:
    def __init__(self, name, index, rng, words, days=1000):
        self.name = name
        self.rng = rng
        self.words = words
        self.base = datetime(2016, 1, 4, tzinfo=timezone.utc) + timedelta(days=13 * index)
        self.days = days
        self.pkg = f"{name}.core"
        self.files: dict[str, list[str]] = {}
        self.jira = name[:4].upper()
        self.events = []

    def path(self, cls):
        return f"src/main/java/org/{self.name}/core/{cls}.java"

    def add_class(self, cls, methods):
        self.files[self.path(cls)] = _class_body(self.pkg, cls, methods, self.rng)
        return self.path(cls)

    def noise_message(self, pool):
        rng = self.rng
        w1, w2 = rng.sample(_CODE_WORDS, 2)
        return rng.choice(_NOISE_TEMPLATES).format(
            w1=w1, w2=w2, cls=rng.choice(pool).rsplit("/", 1)[-1][:-5], proj=self.jira,
            n=rng.randint(10, 999), m=rng.randint(10, 999), n4=rng.randint(1000, 9999))


def default_signals(n):
    """Signals for ``n`` advisories in the 7/7/6 proportion used for 20."""
    counts = [round(n * 7 / 20), round(n * 7 / 20)]
    counts.append(n - sum(counts))
    return [s for s, k in zip(SIGNALS, counts) for _ in range(k)]


def generate_corpus(out_dir, n_advisories=20, n_repos=5, seed=0, signals=None) -> list[PlantedAdvisory]:
    """Write repos/, advisories/, references/ and dataset.tsv under ``out_dir``."""
    out = Path(out_dir)
    rng = random.Random(seed)
    words = _Words(rng)
    signals = list(signals or default_signals(n_advisories))
    if len(signals) != n_advisories:
        raise ValueError("one signal per advisory")

    builders = [_RepoBuilder(words.fresh(2), i, rng, words) for i in range(n_repos)]
    planted: list[PlantedAdvisory] = []
    fixes_by_repo: dict[int, list] = {i: [] for i in range(n_repos)}

    for i, signal in enumerate(signals):
        r = i % n_repos
        b = builders[r]
        cls = words.fresh(2).capitalize() + rng.choice(("Handler", "Parser", "Resolver", "Filter", "Loader"))
        method = rng.choice(("parse", "load", "resolve", "read", "handle")) + words.fresh(2).capitalize()
        helper = words.fresh(1) + "_" + words.fresh(1)
        path = b.add_class(cls, [method, "init" + cls])
        title, short, vwords = _VULNS[i % len(_VULNS)]
        slot = len(fixes_by_repo[r])
        pub_day = 780 + 45 * slot + rng.uniform(0, 30)
        fix_day = pub_day + (rng.uniform(2, 60) if rng.random() < 0.2 else -rng.uniform(5, 150))
        published = b.base + timedelta(days=pub_day)
        cve = f"CVE-{published.year}-{20000 + 37 * i + rng.randint(0, 30)}"
        fixes_by_repo[r].append(dict(
            index=i, signal=signal, cls=cls, method=method, helper=helper, path=path, title=title,
            short=short, vwords=vwords, fix_day=fix_day, published=published, cve=cve))

    marks_by_repo = {}
    for r, b in enumerate(builders):
        pool = [b.add_class(words.fresh(2).capitalize() + rng.choice(("Service", "Util", "Manager", "Store")),
                            [rng.choice(_CODE_WORDS) + words.fresh(1).capitalize() for _ in range(3)])
                for _ in range(10)]
        docs = ["README.md", "docs/guide.md", "CHANGES.txt"]
        for d in docs:
            b.files[d] = [f"# {b.name}", "", "Documentation."]

        commits = [SynthCommit(1, "Initial import", _utc(0, b.base),
                               {p: "\n".join(v) + "\n" for p, v in b.files.items()})]
        events = []
        day = rng.uniform(3, 9)
        while day < b.days:
            events.append(("noise", day, None))
            day += rng.uniform(4, 12)
        for fx in fixes_by_repo[r]:
            events.append(("fix", fx["fix_day"], fx))
        events.sort(key=lambda e: e[1])

        tags = {}
        minor = 0
        last_tag_day = 0.0
        tag_log = []
        for kind, day, fx in events:
            mark = len(commits) + 1
            changes = {}
            if kind == "noise":
                if rng.random() < 0.12:
                    target = rng.choice(docs)
                    _edit(b.files[target], rng, [f"Note about {rng.choice(_CODE_WORDS)}."])
                    changes[target] = b.files[target]
                    msg = f"Update {target.rsplit('/', 1)[-1]}"
                else:
                    for target in rng.sample(pool, rng.randint(1, 2)):
                        _edit(b.files[target], rng, [_code_line(rng) for _ in range(rng.randint(1, 4))])
                        changes[target] = b.files[target]
                    msg = b.noise_message(pool)
            else:
                w = fx["vwords"]
                new = [
                    f"        if (!{fx['helper']}({w[0]}{w[1].capitalize()})) {{",
                    f"            throw new SecurityException(\"{w[0]} {w[1]} rejected in {fx['method']}\");",
                    "        }",
                    f"        {w[2]}{w[3].capitalize()} = sanitize{w[2].capitalize()}({w[0]});",
                ]
                _edit(b.files[fx["path"]], rng, new)
                changes[fx["path"]] = b.files[fx["path"]]
                if fx["signal"] == "cve_message":
                    msg = f"Fix {fx['title']} in {fx['cls']} ({fx['cve']})"
                elif fx["signal"] == "nvd_reference":
                    msg = f"Harden {fx['cls']} against {w[0]} {w[1]} abuse"
                else:
                    msg = "Validate input before processing"
                fx["mark"] = mark
                fx["tag_before"] = tag_log[-1] if tag_log else None
            commits.append(SynthCommit(mark, msg, _utc(day, b.base),
                                       {p: "\n".join(v) + "\n" for p, v in changes.items()}, [mark - 1]))
            if day - last_tag_day > 60:
                minor += 1
                name = f"1.{minor}.0"
                tags[f"v{name}"] = (mark, None)
                tag_log.append(name)
                last_tag_day = day
        marks_by_repo[r] = fast_import(out / "repos" / b.name, commits, tags)

    adv_dir = out / "advisories"
    ref_dir = out / "references"
    adv_dir.mkdir(parents=True, exist_ok=True)
    ref_dir.mkdir(parents=True, exist_ok=True)
    dataset_lines = []
    for r, b in enumerate(builders):
        for fx in fixes_by_repo[r]:
            fix_id = marks_by_repo[r][fx["mark"]]
            impact = rng.choice(_IMPACTS)
            versions = f" versions through {fx['tag_before']}" if fx["tag_before"] else ""
            w = fx["vwords"]
            if fx["signal"] == "path_tokens":
                short_path = "/".join(fx["path"].split("/")[-3:])
                desc = (f"The {fx['method']} method in {short_path} of {b.name.capitalize()}{versions} "
                        f"calls {fx['helper']} too late, which allows remote attackers to {impact}.")
            else:
                desc = (f"A {fx['title']} issue in the {fx['cls']} component of {b.name.capitalize()}{versions} "
                        f"allows remote attackers to {impact} through {w[0]} {w[1]} handling.")
            home = f"https://{b.name}.example.org/security/{fx['cve'].lower()}.html"
            mail = f"https://lists.example.org/{b.name}/msg{rng.randint(1000, 9999)}.html"
            refs = [home, mail]
            pages = {
                home: _page(f"{b.name} security advisory", [desc, f"Affected component: {fx['cls']}.",
                             f"Upgrade {b.name} to the latest release. {w[2]} {w[3]} {w[0]}."]),
                mail: _page("mailing list", [f"[{b.name}-dev] {fx['title']} report",
                             f"Discussion about {w[0]} and {w[1]} in {b.name}."]),
            }
            if fx["signal"] == "nvd_reference":
                commit_url = f"https://github.com/example/{b.name}/commit/{fix_id}"
                refs.append(commit_url)
                pages[commit_url] = _page("commit", [f'<a href="{commit_url}">{fix_id[:7]}</a>'])
            if fx["index"] % 4 == 3:
                refs.append(f"https://bugs.example.org/show_bug.cgi?id={rng.randint(10000, 99999)}")
            for url, html in pages.items():
                (ref_dir / fixture_name(url)).write_text(html, encoding="utf-8")
            doc = {
                "id": fx["cve"],
                "published": fx["published"].strftime("%Y-%m-%dT%H:%M:%S.000"),
                "descriptions": [{"lang": "en", "value": desc}],
                "references": [{"url": u} for u in refs],
            }
            (adv_dir / f"{fx['cve']}.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
            dataset_lines.append((fx["index"], f"{fx['cve']}\trepos/{b.name}\t{fix_id}"))
            planted.append(PlantedAdvisory(fx["cve"], b.name, fx["signal"], fx["published"], desc,
                                           refs, fx["mark"], fix_id))
    dataset_lines.sort()
    (out / "dataset.tsv").write_text("\n".join(line for _, line in dataset_lines) + "\n", encoding="utf-8")
    planted.sort(key=lambda p: signals.index(p.signal) * 1000 + int(p.cve_id.rsplit("-", 1)[1]) % 1000)
    return planted


def _page(title, paragraphs) -> str:
    body = "\n".join(f"<p>{p}</p>" for p in paragraphs)
    return (f"<html><head><title>{title}</title><script>var tracking = 1;</script></head>"
            f"<body><h1>{title}</h1>\n{body}\n<footer>home download docs</footer></body></html>\n")
