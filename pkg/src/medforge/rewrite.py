"""Rewrite corpus chunks into QA pairs and dialogues via an external
chat-completion service.

Each chunk spawns prompt-rendering jobs (question, then answer bound to
the question's response, or a doctor-patient dialogue). Jobs run with
bounded concurrency, retry transport failures with exponential backoff,
and append their outcome to a JSONL manifest; rerunning with the same
manifest re-issues only jobs that are not already done. The service
itself is external: we render requests and ingest responses verbatim.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Protocol, Sequence

from .chunking import Chunk
from .records import CorpusRecord, Language, Stage

logger = logging.getLogger(__name__)

API_KEY_ENV = "MEDFORGE_API_KEY"


class PromptKind(str, Enum):
    GEN_QUESTION = "gen_question"
    GEN_ANSWER = "gen_answer"
    GEN_DIALOGUE = "gen_dialogue"


QUESTION_BODY_EN = (
    "Please create a <question> that closely aligns with the provided <text>. "
    "Ensure that the <question> is formulated in English and does not explicitly "
    "reference the text. You may incorporate specific scenarios or contexts in the "
    "<question>, allowing the <text> to serve as a comprehensive and precise answer.\n"
    "<text>: {text}\n"
    "<question>:"
)

ANSWER_BODY_EN = (
    "You are Apollo, equipped with in-depth knowledge in medicine. Your task is to "
    "directly answer the user's <question> in English. In formulating your response, "
    "you must thoughtfully reference the <reference text>, ensuring that your reply "
    "does not disclose your reliance on <reference text>. Aim to provide a "
    "comprehensive and informative response, incorporating relevant insights from "
    "<reference text> to best assist the user. Please be cautious to avoid including "
    "any content that might raise ethical concerns.\n"
    "<question>: {question}\n"
    "<reference text>: {reference}\n"
    "<reply>:"
)

DIALOGUE_BODY_EN = (
    "<text> {text}</text>\n"
    "Please create some dialogues between patients and doctors in English based on "
    "the above text. The format is:\n"
    "<Patient>Patient’s question</Patient>\n"
    "<Doctor>Doctor’s answer</Doctor>\n"
    "Both patient questions and doctor responses are as complex and detailed as possible."
)

_DEFAULT_BODIES = {
    PromptKind.GEN_QUESTION: QUESTION_BODY_EN,
    PromptKind.GEN_ANSWER: ANSWER_BODY_EN,
    PromptKind.GEN_DIALOGUE: DIALOGUE_BODY_EN,
}

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


@dataclass(frozen=True)
class PromptTemplate:
    kind: PromptKind
    lang: Language
    body: str


class TemplateLibrary:
    """Per-language template store. English bodies ship as defaults;
    translations are operator-supplied files named ``<kind>.<lang>.txt``.
    Languages without an override fall back to the English body."""

    def __init__(self, overrides: dict[tuple[PromptKind, Language], str] | None = None):
        self._overrides = dict(overrides or {})

    @classmethod
    def from_directory(cls, path) -> "TemplateLibrary":
        overrides: dict[tuple[PromptKind, Language], str] = {}
        for name in sorted(os.listdir(path)):
            match = re.fullmatch(r"(gen_question|gen_answer|gen_dialogue)\.(\w+)\.txt", name)
            if not match:
                continue
            kind = PromptKind(match.group(1))
            lang = Language(match.group(2))
            with open(os.path.join(path, name), "r", encoding="utf-8") as fh:
                overrides[(kind, lang)] = fh.read()
        return cls(overrides)

    def get(self, kind: PromptKind, lang: Language) -> PromptTemplate:
        body = self._overrides.get((kind, lang), _DEFAULT_BODIES[kind])
        return PromptTemplate(kind=kind, lang=lang, body=body)


def render_prompt(template: PromptTemplate, bindings: dict[str, str]) -> str:
    """Exact placeholder substitution; byte-stable for identical inputs."""

    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name not in bindings:
            raise ValueError(f"unbound placeholder: {name}")
        return bindings[name]

    return _PLACEHOLDER_RE.sub(substitute, template.body)


class JobStatus(str, Enum):
    PENDING = "pending"
    DONE = "done"
    FAILED = "failed"


@dataclass
class RewriteJob:
    chunk_ref: tuple[str, int]
    kind: PromptKind
    lang: Language
    source: str
    rendered_prompt: str = ""
    status: JobStatus = JobStatus.PENDING
    response: Optional[str] = None
    attempts: int = 0

    @property
    def key(self) -> tuple[str, int, str]:
        return (self.chunk_ref[0], self.chunk_ref[1], self.kind.value)

    def to_json(self) -> dict:
        return {
            "parent_id": self.chunk_ref[0],
            "seq": self.chunk_ref[1],
            "kind": self.kind.value,
            "lang": self.lang.value,
            "source": self.source,
            "prompt": self.rendered_prompt,
            "status": self.status.value,
            "response": self.response,
            "attempts": self.attempts,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RewriteJob":
        return cls(
            chunk_ref=(str(obj["parent_id"]), int(obj["seq"])),
            kind=PromptKind(obj["kind"]),
            lang=Language(obj["lang"]),
            source=str(obj.get("source", "")),
            rendered_prompt=str(obj.get("prompt", "")),
            status=JobStatus(obj["status"]),
            response=obj.get("response"),
            attempts=int(obj.get("attempts", 0)),
        )


class RetryableClientError(RuntimeError):
    """Transient transport failure; the job may be retried."""


class FatalClientError(RuntimeError):
    """Definitive service rejection; retrying would not help."""


class ChatClient(Protocol):
    def complete(self, prompt: str) -> str: ...


@dataclass
class ChatClientConfig:
    endpoint: str = ""
    model: str = ""
    max_retries: int = 3
    backoff_base: float = 0.5
    max_in_flight: int = 4
    timeout: float = 60.0

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


class HttpChatClient:
    """Minimal chat-completion wire client.

    POSTs ``{"model": ..., "messages": [{"role": "user", "content":
    prompt}]}`` and returns ``choices[0].message.content``. The API key
    is read from ``MEDFORGE_API_KEY``. Non-2xx responses fail the job
    unless the server sent Retry-After, which marks them retryable.
    """

    def __init__(self, cfg: ChatClientConfig):
        import requests

        self._requests = requests
        self.cfg = cfg
        self._session = requests.Session()

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        try:
            response = self._session.post(
                self.cfg.endpoint, json=payload, headers=headers, timeout=self.cfg.timeout
            )
        except self._requests.RequestException as exc:
            raise RetryableClientError(str(exc)) from exc
        if response.status_code // 100 != 2:
            detail = f"HTTP {response.status_code}: {response.text[:200]}"
            if "Retry-After" in response.headers:
                raise RetryableClientError(detail)
            raise FatalClientError(detail)
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise FatalClientError(f"malformed completion payload: {exc}") from exc


class _Manifest:
    """Append-only JSONL job log with single-writer semantics."""

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()

    def load_done(self) -> dict[tuple[str, int, str], RewriteJob]:
        done: dict[tuple[str, int, str], RewriteJob] = {}
        if self.path is None or not os.path.exists(self.path):
            return done
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                job = RewriteJob.from_json(json.loads(line))
                if job.status is JobStatus.DONE:
                    done[job.key] = job
        return done

    def append(self, job: RewriteJob) -> None:
        if self.path is None:
            return
        line = json.dumps(job.to_json(), ensure_ascii=False) + "\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)


def _execute(
    job: RewriteJob,
    client: ChatClient,
    cfg: ChatClientConfig,
    sleep: Callable[[float], None],
) -> None:
    while True:
        job.attempts += 1
        try:
            job.response = client.complete(job.rendered_prompt)
            job.status = JobStatus.DONE
            return
        except RetryableClientError as exc:
            if job.attempts > cfg.max_retries:
                logger.warning("job %s failed after %d attempts: %s", job.key, job.attempts, exc)
                job.status = JobStatus.FAILED
                return
            sleep(cfg.backoff_base * 2 ** (job.attempts - 1))
        except FatalClientError as exc:
            logger.warning("job %s rejected: %s", job.key, exc)
            job.status = JobStatus.FAILED
            return


def run_jobs(
    chunks: Sequence[Chunk],
    kinds: Iterable[str],
    client: ChatClient,
    cfg: ChatClientConfig,
    manifest_path=None,
    templates: TemplateLibrary | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> list[RewriteJob]:
    """Run all rewrite jobs for ``chunks``; returns jobs in a stable
    chunk order regardless of completion order.

    ``kinds`` is a subset of {"qa", "dialogue"}. The "qa" pipeline asks
    for a question first and binds its response into the answer prompt.
    Jobs already marked done in the manifest are replayed, not re-asked.
    """
    kinds = set(kinds)
    unknown = kinds - {"qa", "dialogue"}
    if unknown:
        raise ValueError(f"unknown rewrite kinds: {sorted(unknown)}")
    templates = templates or TemplateLibrary()
    manifest = _Manifest(manifest_path)
    done = manifest.load_done()

    jobs: list[RewriteJob] = []

    def job_for(chunk: Chunk, kind: PromptKind, bindings: dict[str, str]) -> RewriteJob:
        template = templates.get(kind, chunk.lang)
        job = RewriteJob(
            chunk_ref=(chunk.parent_id, chunk.seq),
            kind=kind,
            lang=chunk.lang,
            source=chunk.source,
            rendered_prompt=render_prompt(template, bindings),
        )
        replay = done.get(job.key)
        if replay is not None:
            job.status = JobStatus.DONE
            job.response = replay.response
            job.attempts = replay.attempts
        return job

    def run_chunk(chunk: Chunk) -> list[RewriteJob]:
        produced: list[RewriteJob] = []
        if "qa" in kinds:
            question = job_for(chunk, PromptKind.GEN_QUESTION, {"text": chunk.text})
            if question.status is not JobStatus.DONE:
                _execute(question, client, cfg, sleep)
                manifest.append(question)
            produced.append(question)
            if question.status is JobStatus.DONE:
                answer = job_for(
                    chunk,
                    PromptKind.GEN_ANSWER,
                    {"question": question.response or "", "reference": chunk.text},
                )
                if answer.status is not JobStatus.DONE:
                    _execute(answer, client, cfg, sleep)
                    manifest.append(answer)
                produced.append(answer)
        if "dialogue" in kinds:
            dialogue = job_for(chunk, PromptKind.GEN_DIALOGUE, {"text": chunk.text})
            if dialogue.status is not JobStatus.DONE:
                _execute(dialogue, client, cfg, sleep)
                manifest.append(dialogue)
            produced.append(dialogue)
        return produced

    with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
        for chunk_jobs in pool.map(run_chunk, chunks):
            jobs.extend(chunk_jobs)
    return jobs


_DIALOGUE_TURN_RE = re.compile(
    r"<(Patient|Doctor)>\s*(.*?)\s*</\1>", re.DOTALL | re.IGNORECASE
)


def parse_dialogue(response: str) -> list[tuple[str, str]]:
    """Alternating (role, text) turns from the tag scaffold; empty when
    the response does not follow it."""
    return [(m.group(1).capitalize(), m.group(2)) for m in _DIALOGUE_TURN_RE.finditer(response)]


@dataclass
class AssemblyReport:
    records: int = 0
    skipped: list[dict] = field(default_factory=list)

    def skip(self, job: RewriteJob, reason: str) -> None:
        self.skipped.append(
            {"parent_id": job.chunk_ref[0], "seq": job.chunk_ref[1], "reason": reason}
        )


def assemble_instruction_records(
    jobs: Sequence[RewriteJob],
) -> tuple[list[CorpusRecord], AssemblyReport]:
    """Pair question/answer jobs per chunk into instruction records;
    turn dialogue jobs into pretrain records with role-marked turns.
    Chunks with any failed half are skipped and reported."""
    report = AssemblyReport()
    records: list[CorpusRecord] = []
    questions: dict[tuple[str, int], RewriteJob] = {}
    answers: dict[tuple[str, int], RewriteJob] = {}
    ordered_refs: list[tuple[str, int]] = []
    for job in jobs:
        if job.kind is PromptKind.GEN_QUESTION:
            if job.chunk_ref not in questions and job.chunk_ref not in answers:
                ordered_refs.append(job.chunk_ref)
            questions[job.chunk_ref] = job
        elif job.kind is PromptKind.GEN_ANSWER:
            if job.chunk_ref not in questions and job.chunk_ref not in answers:
                ordered_refs.append(job.chunk_ref)
            answers[job.chunk_ref] = job

    for ref in ordered_refs:
        question = questions.get(ref)
        answer = answers.get(ref)
        if question is None:
            report.skip(answer, "answer without a question job")
            continue
        if question.status is not JobStatus.DONE:
            report.skip(question, "question job failed")
            continue
        if answer is None or answer.status is not JobStatus.DONE:
            report.skip(question, "answer job missing or failed")
            continue
        question_text = (question.response or "").strip()
        answer_text = (answer.response or "").strip()
        if not question_text or not answer_text:
            report.skip(question, "empty response text")
            continue
        records.append(
            CorpusRecord(
                id=f"{ref[0]}-{ref[1]}-qa",
                lang=question.lang,
                source=question.source or "qa_rewrite",
                stage=Stage.INSTRUCTION,
                question=question_text,
                answer=answer_text,
            )
        )

    for job in jobs:
        if job.kind is not PromptKind.GEN_DIALOGUE:
            continue
        if job.status is not JobStatus.DONE:
            report.skip(job, "dialogue job failed")
            continue
        turns = parse_dialogue(job.response or "")
        if turns:
            text = "\n".join(f"{role}: {content}" for role, content in turns)
        else:
            text = (job.response or "").strip()  # unparseable: keep raw text
        if not text:
            report.skip(job, "empty dialogue response")
            continue
        records.append(
            CorpusRecord(
                id=f"{job.chunk_ref[0]}-{job.chunk_ref[1]}-dialogue",
                lang=job.lang,
                source=job.source or "dialogue_rewrite",
                stage=Stage.PRETRAIN,
                text=text,
            )
        )
    report.records = len(records)
    return records, report
