"""
pretrain_corpus.py - curate an unlabeled domain-adaptation corpus from online communities.

For every community the top floor(2% x followers) posts are fetched, authors are
replaced by keyed-hash pseudonyms before anything is written, exact duplicates
are dropped, and the corpus is reported per category (mental health vs control).
The pre-training run itself is not part of this pipeline.
"""
import hashlib
import hmac
import json
import logging
import math
import os
import re
import secrets
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from fractions import Fraction

import pandas as pd
import praw
from praw.exceptions import PRAWException
from prawcore.exceptions import PrawcoreException

from artifacts import PipelineError, write_json, write_jsonl
from config import (
    CORPUS_RETRY_DELAY,
    CORPUS_TIME_FILTER,
    CORPUS_WORKERS,
    ENV_CLIENT_ID,
    ENV_CLIENT_SECRET,
    ENV_USER_AGENT,
    QUOTA_RATE,
)
from dataset import normalize_text

logger = logging.getLogger(__name__)

CATEGORIES = ("mental_health", "control")
DOCUMENT_KINDS = ("submission", "comment")
PSEUDONYM_LENGTH = 16
MENTION_PATTERN = re.compile(r"(?<![\w/])/?u/([A-Za-z0-9_-]{3,20})")
AUTHOR_NAME_PATTERN = re.compile(r"[A-Za-z0-9_-]{3,20}")
FETCH_RETRIES = 2


class CorpusError(PipelineError):
    pass


class CommunityFetchError(CorpusError):
    """A client call failed for one community; callers may retry it."""

    def __init__(self, community, message):
        self.community = community
        super().__init__(f"r/{community}: {message}")


# ---------------------------
# Domain types
# ---------------------------
@dataclass(frozen=True)
class CommunitySpec:
    name: str
    follower_count: int
    category: str

    def __post_init__(self):
        if self.follower_count < 0:
            raise CorpusError(f"{self.name}: follower_count must be >= 0, got {self.follower_count}")
        if self.category not in CATEGORIES:
            raise CorpusError(f"{self.name}: category must be one of {', '.join(CATEGORIES)}, got {self.category!r}")


@dataclass(frozen=True)
class CorpusDocument:
    doc_id: str
    community: str
    category: str
    kind: str
    text: str
    author_token: str

    def __post_init__(self):
        if not self.text.strip():
            raise CorpusError(f"{self.doc_id}: empty text")
        if self.kind not in DOCUMENT_KINDS:
            raise CorpusError(f"{self.doc_id}: unknown document kind {self.kind!r}")

    def to_dict(self):
        return asdict(self)


def sample_quota(community, rate=QUOTA_RATE):
    """floor(rate x follower_count); 0 means the community contributes nothing."""
    # exact decimal rate, so 2% of 50 is 1 and not 0.9999...
    return math.floor(Fraction(str(rate)) * community.follower_count)


def pseudonymize(username, secret):
    """Stable within one secret, unrecoverable without it."""
    digest = hmac.new(secret, username.encode("utf-8"), hashlib.sha256).hexdigest()
    return f"anon_{digest[:PSEUDONYM_LENGTH]}"


def scrub_mentions(text, secret):
    """Replace `u/name` mentions inside a text with the mentioned user's pseudonym."""
    return MENTION_PATTERN.sub(lambda m: pseudonymize(m.group(1), secret), text)


# ---------------------------
# Clients
# ---------------------------
class CommunityClient(ABC):
    """Source of ranked posts. Raw posts are dicts with id, author and title/selftext or body."""

    @abstractmethod
    def iter_top(self, community, limit, time_filter=CORPUS_TIME_FILTER):
        """Yield up to `limit` raw posts in the platform's top order."""


class FixtureClient(CommunityClient):
    """Reads `<community>.json` (a rank-ordered list of posts) from a directory."""

    def __init__(self, directory):
        self.directory = directory
        self.calls = []

    def iter_top(self, community, limit, time_filter=CORPUS_TIME_FILTER):
        self.calls.append(community)
        path = os.path.join(self.directory, f"{community}.json")
        try:
            with open(path, "r", encoding="utf-8") as f:
                posts = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise CommunityFetchError(community, f"cannot read fixture {path}: {e}") from e
        for post in posts[:limit]:
            if post.get("fail"):
                raise CommunityFetchError(community, "fixture marks a failed page")
            yield post


class RedditClient(CommunityClient):
    """Read-only praw session; credentials from the environment."""

    def __init__(self, client_id=None, client_secret=None, user_agent=None):
        client_id = client_id or os.environ.get(ENV_CLIENT_ID)
        client_secret = client_secret or os.environ.get(ENV_CLIENT_SECRET)
        if not client_id or not client_secret:
            raise CorpusError(f"set {ENV_CLIENT_ID} and {ENV_CLIENT_SECRET} to use the live client")
        self.reddit = praw.Reddit(
            client_id=client_id,
            client_secret=client_secret,
            user_agent=user_agent or os.environ.get(ENV_USER_AGENT, "depression-severity-corpus/1.0"),
        )
        self.reddit.read_only = True

    def iter_top(self, community, limit, time_filter=CORPUS_TIME_FILTER):
        try:
            for submission in self.reddit.subreddit(community).top(time_filter=time_filter, limit=limit):
                yield {
                    "id": submission.id,
                    "author": submission.author.name if submission.author else "[deleted]",
                    "title": submission.title,
                    "selftext": submission.selftext,
                    "kind": "submission",
                }
        except (PRAWException, PrawcoreException) as e:
            raise CommunityFetchError(community, str(e)) from e


# ---------------------------
# Fetching
# ---------------------------
def _post_text(post):
    if "body" in post:
        return post.get("body") or "", "comment"
    title = post.get("title") or ""
    body = post.get("selftext") or ""
    return (f"{title}\n\n{body}" if body.strip() else title), post.get("kind", "submission")


def _document(community, post, secret):
    text, kind = _post_text(post)
    text = scrub_mentions(text.strip(), secret)
    if not text or text in ("[deleted]", "[removed]"):
        return None
    author = post.get("author") or "[deleted]"
    return CorpusDocument(
        doc_id=f"{community.name}:{post['id']}",
        community=community.name,
        category=community.category,
        kind=kind,
        text=text,
        author_token=pseudonymize(author, secret),
    )


def fetch_top(community, quota, client, secret, time_filter=CORPUS_TIME_FILTER, authors=None):
    """
    At most `quota` documents in the client's top order, already pseudonymized.
    Raw author names seen on the way are added to `authors` when a set is given.
    A failure after some posts arrived keeps the partial page with a warning;
    a failure before any post raises CommunityFetchError.
    """
    if quota <= 0:
        return []
    documents = []
    try:
        for post in client.iter_top(community.name, quota, time_filter):
            if authors is not None and post.get("author"):
                authors.add(post["author"])
            doc = _document(community, post, secret)
            if doc is not None:
                documents.append(doc)
            if len(documents) >= quota:
                break
    except CommunityFetchError as e:
        if not documents:
            raise
        logger.warning("%s; keeping %d of %d posts", e, len(documents), quota)
    except Exception as e:
        if not documents:
            raise CommunityFetchError(community.name, str(e)) from e
        logger.warning("r/%s: %s; keeping %d of %d posts", community.name, e, len(documents), quota)
    return documents


def _fetch_with_retry(community, quota, client, secret, time_filter, retries, delay, authors):
    for attempt in range(retries + 1):
        try:
            return fetch_top(community, quota, client, secret, time_filter, authors)
        except CommunityFetchError as e:
            if attempt == retries:
                raise
            logger.info("retrying r/%s after: %s", community.name, e)
            time.sleep(delay)
    return []


def fetch_all(communities, client, secret, workers=CORPUS_WORKERS, time_filter=CORPUS_TIME_FILTER,
              retries=FETCH_RETRIES, retry_delay=CORPUS_RETRY_DELAY, rate=QUOTA_RATE):
    """
    Fetch every community concurrently. Returns (documents in community order,
    per-community rows, raw author names seen).
    Communities that still fail after retries are reported, not fatal.
    """
    quotas = [sample_quota(c, rate) for c in communities]

    def task(item):
        community, quota = item
        names = set()
        try:
            docs = _fetch_with_retry(community, quota, client, secret, time_filter, retries, retry_delay, names)
            return docs, None, names
        except CommunityFetchError as e:
            logger.error("%s", e)
            return [], str(e), names

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(task, zip(communities, quotas)))

    documents = []
    rows = []
    authors = set()
    for community, quota, (docs, error, names) in zip(communities, quotas, results):
        documents.extend(docs)
        authors.update(names)
        rows.append({
            "community": community.name,
            "category": community.category,
            "follower_count": community.follower_count,
            "quota": quota,
            "fetched": len(docs),
            "status": "failed" if error else ("partial" if len(docs) < quota else "ok"),
            **({"error": error} if error else {}),
        })
    return documents, rows, authors


# ---------------------------
# Post-processing
# ---------------------------
def scrub_authors(documents, authors, secret):
    """
    Replace bare mentions of any fetched author's name (whole word, any case)
    with that author's pseudonym. `u/name` mentions are handled by scrub_mentions.
    """
    canonical = {name.lower(): name for name in sorted(authors) if AUTHOR_NAME_PATTERN.fullmatch(name)}
    if not canonical:
        return list(documents)
    alternatives = "|".join(re.escape(n) for n in sorted(canonical, key=len, reverse=True))
    pattern = re.compile(rf"(?<!\w)({alternatives})(?!\w)", re.IGNORECASE)

    def token(match):
        return pseudonymize(canonical[match.group(1).lower()], secret)

    return [replace(d, text=pattern.sub(token, d.text)) for d in documents]


def dedup_corpus(documents):
    """Exact dedup on normalized text, first occurrence wins; (documents, removed_count)."""
    seen = set()
    kept = []
    for doc in documents:
        key = normalize_text(doc.text)
        if key in seen:
            continue
        seen.add(key)
        kept.append(doc)
    return kept, len(documents) - len(kept)


def partition_report(documents):
    return {
        "mental_health_count": sum(1 for d in documents if d.category == "mental_health"),
        "control_count": sum(1 for d in documents if d.category == "control"),
        "bytes": sum(len(d.text.encode("utf-8")) for d in documents),
    }


def load_communities(path):
    """`name,follower_count,category` rows (comma or tab separated)."""
    sep = "\t" if path.lower().endswith(".tsv") else ","
    try:
        frame = pd.read_csv(path, sep=sep, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError) as e:
        raise CorpusError(f"cannot read community list {path}: {e}") from e
    frame.columns = [c.strip().lower() for c in frame.columns]
    missing = {"name", "follower_count", "category"} - set(frame.columns)
    if missing:
        raise CorpusError(f"{path}: missing column(s) {', '.join(sorted(missing))}")
    communities = []
    for index, row in frame.iterrows():
        line = index + 2
        try:
            followers = int(row["follower_count"].strip())
        except ValueError:
            raise CorpusError(f"{path}:{line}: follower_count {row['follower_count']!r} is not an integer")
        try:
            communities.append(CommunitySpec(row["name"].strip(), followers, row["category"].strip()))
        except CorpusError as e:
            raise CorpusError(f"{path}:{line}: {e}") from e
    names = [c.name for c in communities]
    if len(set(names)) != len(names):
        raise CorpusError(f"{path}: community names must be unique")
    return communities


def build_corpus(communities_file, out_dir, client, secret=None, workers=CORPUS_WORKERS,
                 time_filter=CORPUS_TIME_FILTER, rate=QUOTA_RATE, retry_delay=CORPUS_RETRY_DELAY):
    """Fetch, deduplicate and write `corpus.jsonl` + `corpus_report.json`; returns the report."""
    communities = load_communities(communities_file)
    # run-scoped key, never persisted
    secret = secret if secret is not None else secrets.token_bytes(32)
    documents, rows, authors = fetch_all(communities, client, secret, workers=workers, time_filter=time_filter,
                                         retry_delay=retry_delay, rate=rate)
    documents = scrub_authors(documents, authors, secret)
    kept, removed = dedup_corpus(documents)

    os.makedirs(out_dir, exist_ok=True)
    write_jsonl(os.path.join(out_dir, "corpus.jsonl"), [d.to_dict() for d in kept])
    report = {
        "communities": rows,
        "fetched": len(documents),
        "duplicates_removed": removed,
        "time_filter": time_filter,
        **partition_report(kept),
    }
    write_json(os.path.join(out_dir, "corpus_report.json"), report)
    logger.info("corpus: %d documents kept, %d duplicates removed", len(kept), removed)
    return report
