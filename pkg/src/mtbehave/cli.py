"""Command-line pipeline: extract, generate, judge, sweep, eval, report.

Every command takes a JSON run config (--config) and optional flag overrides;
flags beat the file, the file beats built-in defaults. Relative paths inside
the config resolve against the config file's directory. Each successful stage
appends an entry to manifest.json in the output directory with digests of the
files it read and wrote.

Exit codes: 0 success, 1 usage or config error, 2 data validation error,
3 backend exhaustion.
"""

from __future__ import annotations

import hashlib
import json
import sys
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import click

from . import __version__
from .backends import Backend, BackendError, Backends, BackendSpec, ResponseCache
from .casegen import (
    STATUS_DROPPED_IDENTICAL,
    STATUS_DROPPED_QUALITY,
    STATUS_ERROR,
    STATUS_KEPT,
    generate_cases,
    read_cases,
    write_cases,
)
from .corpus import CorpusError, load_corpus
from .judge import (
    FAIL_LOW_BASE_QUALITY,
    EmptyVerdictSet,
    JudgeConfig,
    judge_records,
    pass_rate,
    read_records,
    read_verdicts,
    score_records,
    sweep,
    write_records,
    write_verdicts,
)
from .report import (
    REPORT_FORMATS,
    MissingGold,
    MissingProjection,
    ZeroFlagged,
    ZeroGoldErrors,
    capability_table,
    emit_report,
    error_position_analysis,
    load_gold,
    precision_recall,
    sweep_markdown,
)
from .segmentation import MAX_PLANS_PER_PAIR, Capability, extract_editable

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3

DEFAULT_SWEEP_ALPHAS = "0.5,0.6,0.7,0.8"
DEFAULT_SWEEP_BETAS = "0.02,0.05,0.08,0.11"

_CONFIG_KEYS = {
    "corpus",
    "capability",
    "per_pair",
    "seed",
    "jobs",
    "judge",
    "cache_root",
    "output_dir",
    "backends",
    "exclude_low_base",
}


class ConfigError(Exception):
    """The run config (file or flags) cannot be used."""


@dataclass
class RunConfig:
    """A fully merged and validated run configuration."""

    pairs_path: Path
    alignments_path: Path
    annotations_path: Path
    capability: Capability
    per_pair: int = 1
    seed: int = 0
    jobs: int = 1
    judge: JudgeConfig = field(default_factory=JudgeConfig)
    output_dir: Path = Path("out")
    cache_root: Path | None = None
    backend_specs: dict[str, BackendSpec] = field(default_factory=dict)
    exclude_low_base: bool = False
    config_digest: str = ""


def _expect(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _as_int(value: object, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return value


def load_run_config(config_path, overrides: Mapping[str, object] | None = None) -> RunConfig:
    """Load the config file and apply non-None flag overrides on top."""
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    path = Path(config_path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    blob = path.read_bytes()
    try:
        data = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    _expect(isinstance(data, dict), f"{path}: config must be a JSON object")
    unknown = sorted(set(data) - _CONFIG_KEYS)
    _expect(not unknown, f"{path}: unknown config keys: {unknown}")
    base = path.parent

    corpus_section = data.get("corpus")
    _expect(
        isinstance(corpus_section, dict)
        and {"pairs", "alignments", "annotations"} <= set(corpus_section),
        f"{path}: corpus section must name pairs, alignments, and annotations files",
    )
    corpus_paths = {}
    for name in ("pairs", "alignments", "annotations"):
        file_path = base / str(corpus_section[name])
        _expect(file_path.is_file(), f"corpus {name} file not found: {file_path}")
        corpus_paths[name] = file_path

    capability_value = overrides.get("capability", data.get("capability"))
    _expect(capability_value is not None, "a capability is required (config or --capability)")
    try:
        capability = Capability(str(capability_value))
    except ValueError:
        valid = ", ".join(c.value for c in Capability)
        raise ConfigError(f"unknown capability {capability_value!r} (valid: {valid})")

    per_pair = _as_int(overrides.get("per_pair", data.get("per_pair", 1)), "per_pair")
    _expect(
        1 <= per_pair <= MAX_PLANS_PER_PAIR,
        f"per_pair must be between 1 and {MAX_PLANS_PER_PAIR}, got {per_pair}",
    )
    seed = _as_int(overrides.get("seed", data.get("seed", 0)), "seed")
    jobs = _as_int(overrides.get("jobs", data.get("jobs", 1)), "jobs")
    _expect(jobs >= 1, f"jobs must be at least 1, got {jobs}")

    judge_section = data.get("judge", {})
    _expect(isinstance(judge_section, dict), f"{path}: judge section must be an object")
    alpha = overrides.get("alpha", judge_section.get("alpha", 0.8))
    beta = overrides.get("beta", judge_section.get("beta", 0.05))
    try:
        judge_config = JudgeConfig(float(alpha), float(beta))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad judge thresholds: {exc}") from exc

    backend_specs: dict[str, BackendSpec] = {}
    backends_section = data.get("backends", {})
    _expect(isinstance(backends_section, dict), f"{path}: backends section must be an object")
    for slot, spec_data in backends_section.items():
        _expect(isinstance(spec_data, dict), f"backend {slot!r} must be an object")
        spec_data = dict(spec_data)
        spec_data.setdefault("kind", slot)
        _expect(
            spec_data["kind"] == slot,
            f"backend slot {slot!r} declares mismatched kind {spec_data['kind']!r}",
        )
        try:
            backend_specs[slot] = BackendSpec.from_dict(spec_data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"backend {slot!r}: {exc}") from exc

    output_value = overrides.get("output_dir")
    if output_value is not None:
        output_dir = Path(str(output_value))
    else:
        output_dir = base / str(data.get("output_dir", "out"))
    cache_value = overrides.get("cache_root")
    if cache_value is not None:
        cache_root = Path(str(cache_value))
    elif data.get("cache_root") is not None:
        cache_root = base / str(data["cache_root"])
    else:
        cache_root = None

    exclude_low_base = overrides.get("exclude_low_base", data.get("exclude_low_base", False))
    _expect(isinstance(exclude_low_base, bool), "exclude_low_base must be a boolean")

    return RunConfig(
        pairs_path=corpus_paths["pairs"],
        alignments_path=corpus_paths["alignments"],
        annotations_path=corpus_paths["annotations"],
        capability=capability,
        per_pair=per_pair,
        seed=seed,
        jobs=jobs,
        judge=judge_config,
        output_dir=output_dir,
        cache_root=cache_root,
        backend_specs=backend_specs,
        exclude_low_base=exclude_low_base,
        config_digest=hashlib.sha256(blob).hexdigest(),
    )


def _file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunManifest:
    """Append-only record of the stages run into one output directory."""

    path: Path
    entries: list[dict] = field(default_factory=list)

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        entries: list[dict] = []
        if path.exists():
            with open(path, encoding="utf-8") as handle:
                entries = json.load(handle)
        return cls(path, entries)

    def record_stage(
        self,
        stage: str,
        config: RunConfig,
        inputs: Iterable[Path],
        outputs: Iterable[Path],
        started_at: str,
        finished_at: str,
    ) -> None:
        self.entries.append(
            {
                "stage": stage,
                "tool_version": __version__,
                "config_digest": config.config_digest,
                "seed": config.seed,
                "inputs": {str(p): _file_digest(p) for p in inputs},
                "outputs": {str(p): _file_digest(p) for p in outputs},
                "started_at": started_at,
                "finished_at": finished_at,
            }
        )
        with open(self.path, "w", encoding="utf-8") as handle:
            json.dump(self.entries, handle, indent=2)
            handle.write("\n")


def _die(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


StageRunner = Callable[[RunConfig], tuple[list[Path], list[Path], str]]


def _run_stage(stage: str, config_path, overrides: dict, runner: StageRunner) -> None:
    try:
        config = load_run_config(config_path, overrides)
    except ConfigError as exc:
        _die(EXIT_USAGE, str(exc))
    started_at = _now()
    try:
        inputs, outputs, summary = runner(config)
    except ConfigError as exc:
        _die(EXIT_USAGE, str(exc))
    except (CorpusError, EmptyVerdictSet, MissingGold, MissingProjection, ValueError) as exc:
        _die(EXIT_DATA, str(exc))
    except BackendError as exc:
        _die(EXIT_BACKEND, str(exc))
    manifest = RunManifest.load(config.output_dir / "manifest.json")
    manifest.record_stage(stage, config, inputs, outputs, started_at, _now())
    click.echo(summary)


def _corpus_inputs(config: RunConfig) -> list[Path]:
    return [config.pairs_path, config.alignments_path, config.annotations_path]


def _build_backends(config: RunConfig, required: Sequence[str]) -> Backends:
    cache = ResponseCache(config.cache_root) if config.cache_root is not None else None
    built = {}
    for slot in required:
        spec = config.backend_specs.get(slot)
        if spec is None:
            raise ConfigError(f"config declares no {slot!r} backend")
        try:
            built[slot] = Backend(spec, cache=cache)
        except ValueError as exc:
            raise ConfigError(f"backend {slot!r}: {exc}") from exc
    return Backends(**built)


def _require_artifact(path: Path, producer: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"{path} not found; run {producer} first")
    return path


def _run_extract(config: RunConfig) -> tuple[list[Path], list[Path], str]:
    corpus = load_corpus(config.pairs_path, config.alignments_path, config.annotations_path)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    out_path = config.output_dir / "segments.jsonl"
    count = 0
    with open(out_path, "w", encoding="utf-8") as handle:
        for pair, alignment, annotation in corpus.triples():
            for segment in extract_editable(pair, alignment, annotation):
                record = {
                    "pair_id": pair.pair_id,
                    "src_span": list(segment.src_span),
                    "ref_span": list(segment.ref_span),
                    "kind": segment.kind,
                    "pos_class": segment.pos_class,
                    "ne_type": segment.ne_type,
                    "tense_eligible": segment.tense_eligible,
                }
                handle.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")
                count += 1
    summary = f"extracted {count} editable segments from {len(corpus)} pairs -> {out_path}"
    return _corpus_inputs(config), [out_path], summary


def _run_generate(config: RunConfig) -> tuple[list[Path], list[Path], str]:
    corpus = load_corpus(config.pairs_path, config.alignments_path, config.annotations_path)
    backends = _build_backends(config, ("infill", "scorer_ref_free"))
    cases = generate_cases(
        corpus,
        config.capability,
        config.per_pair,
        backends,
        config.judge,
        config.seed,
        config.jobs,
    )
    config.output_dir.mkdir(parents=True, exist_ok=True)
    out_path = config.output_dir / "cases.jsonl"
    write_cases(cases, out_path)
    if cases and all(case.error_kind == "backend" for case in cases):
        raise BackendError(
            f"all {len(cases)} infill attempts failed with backend errors "
            f"(first: {cases[0].error})"
        )
    counts = Counter(case.filter_status for case in cases)
    summary = (
        f"generated {len(cases)} cases for {config.capability.value} "
        f"(kept {counts[STATUS_KEPT]}, identical {counts[STATUS_DROPPED_IDENTICAL]}, "
        f"quality-dropped {counts[STATUS_DROPPED_QUALITY]}, errors {counts[STATUS_ERROR]}) "
        f"-> {out_path}"
    )
    return _corpus_inputs(config), [out_path], summary


def _run_judge(config: RunConfig) -> tuple[list[Path], list[Path], str]:
    corpus = load_corpus(config.pairs_path, config.alignments_path, config.annotations_path)
    cases_path = _require_artifact(config.output_dir / "cases.jsonl", "generate")
    cases = read_cases(cases_path)
    backends = _build_backends(config, ("translator", "scorer_ref_based"))
    records = score_records(
        cases, corpus, backends.translator, backends.scorer_ref_based, config.jobs
    )
    records_path = config.output_dir / "records.jsonl"
    write_records(records, records_path)
    if records and all(record.error_kind == "backend" for record in records):
        raise BackendError(
            f"all {len(records)} translation attempts failed with backend errors "
            f"(first: {records[0].error})"
        )
    verdicts = judge_records(records, config.judge)
    if not verdicts:
        raise EmptyVerdictSet("no scored records to judge")
    verdicts_path = config.output_dir / "verdicts.jsonl"
    write_verdicts(verdicts, verdicts_path)
    rated = [
        verdict
        for verdict in verdicts
        if not (config.exclude_low_base and verdict.fail_reason == FAIL_LOW_BASE_QUALITY)
    ]
    rate = pass_rate(rated)
    errored = sum(1 for record in records if record.error is not None)
    system_id = records[0].system_id if records else "?"
    summary = (
        f"judged {len(rated)} cases for {system_id}: pass rate {rate:.2f} "
        f"(alpha={config.judge.alpha:g}, beta={config.judge.beta:g}, "
        f"errored {errored}) -> {verdicts_path}"
    )
    return _corpus_inputs(config) + [cases_path], [records_path, verdicts_path], summary


def _parse_floats(text: str, name: str) -> list[float]:
    values = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            values.append(float(part))
        except ValueError:
            raise ConfigError(f"{name} must be comma-separated numbers, got {part!r}")
    if not values:
        raise ConfigError(f"{name} must list at least one value")
    return values


def _run_sweep(config: RunConfig, alphas_text: str, betas_text: str):
    alphas = _parse_floats(alphas_text, "--alphas")
    betas = _parse_floats(betas_text, "--betas")
    records_path = _require_artifact(config.output_dir / "records.jsonl", "judge")
    records = read_records(records_path)
    grid = sweep(records, alphas, betas)
    json_path = config.output_dir / "sweep.json"
    payload = {
        "alphas": alphas,
        "betas": betas,
        "cells": [
            {"alpha": alpha, "beta": beta, "pass_rate": grid[(alpha, beta)]}
            for alpha in alphas
            for beta in betas
        ],
    }
    with open(json_path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2)
        handle.write("\n")
    md_path = config.output_dir / "sweep.md"
    with open(md_path, "w", encoding="utf-8") as handle:
        handle.write(sweep_markdown(grid))
    summary = f"swept {len(grid)} threshold cells -> {json_path}"
    return [records_path], [json_path, md_path], summary


def _run_eval(config: RunConfig, gold_path: str):
    verdicts_path = _require_artifact(config.output_dir / "verdicts.jsonl", "judge")
    verdicts = read_verdicts(verdicts_path)
    gold_file = Path(gold_path)
    if not gold_file.is_file():
        raise ConfigError(f"gold file not found: {gold_file}")
    gold = load_gold(gold_file)
    result: dict[str, object] = {}
    undefined: dict[str, str] = {}
    lines = []
    try:
        precision, recall = precision_recall(verdicts, gold)
        result["precision"] = precision
        result["recall"] = recall
        lines.append(f"precision {precision:.2f}, recall {recall:.2f}")
    except (ZeroFlagged, ZeroGoldErrors) as exc:
        result["precision"] = None
        result["recall"] = None
        undefined["precision_recall"] = f"{type(exc).__name__}: {exc}"
        lines.append(f"precision/recall undefined ({type(exc).__name__}: {exc})")
    try:
        position_pct = error_position_analysis(verdicts, gold)
        result["error_position_pct"] = position_pct
        lines.append(f"errors overlapping the edited position: {position_pct:.2f}")
    except ZeroGoldErrors as exc:
        result["error_position_pct"] = None
        undefined["error_position"] = f"{type(exc).__name__}: {exc}"
        lines.append(f"error-position analysis undefined ({type(exc).__name__}: {exc})")
    result["undefined"] = undefined
    out_path = config.output_dir / "eval.json"
    with open(out_path, "w", encoding="utf-8") as handle:
        json.dump(result, handle, indent=2)
        handle.write("\n")
    summary = "\n".join(lines + [f"evaluation -> {out_path}"])
    return [verdicts_path, gold_file], [out_path], summary


def _run_report(config: RunConfig, fmt: str):
    if fmt not in REPORT_FORMATS:
        raise ConfigError(f"unknown report format {fmt!r} (use one of {REPORT_FORMATS})")
    verdicts_path = _require_artifact(config.output_dir / "verdicts.jsonl", "judge")
    cases_path = _require_artifact(config.output_dir / "cases.jsonl", "generate")
    verdicts = read_verdicts(verdicts_path)
    if not verdicts:
        raise EmptyVerdictSet("the verdicts file is empty; nothing to report")
    cases = read_cases(cases_path)
    rows = capability_table(verdicts, cases)
    extension = {"json": "json", "markdown": "md", "csv": "csv"}[fmt]
    out_path = config.output_dir / f"report.{extension}"
    emit_report(rows, fmt, out_path)
    summary = f"wrote {len(rows)} report rows -> {out_path}"
    return [verdicts_path, cases_path], [out_path], summary


def _stage_options(fn):
    options = [
        click.option("--config", "config_path", required=True, help="Run config JSON file."),
        click.option("--output-dir", "output_dir", default=None, help="Override the output directory."),
        click.option("--cache-root", "cache_root", default=None, help="Override the response cache root."),
        click.option("--seed", type=int, default=None, help="Override the master seed."),
        click.option("--jobs", type=int, default=None, help="Concurrent backend calls."),
        click.option("--capability", default=None, help="Capability to target."),
        click.option("--per-pair", "per_pair", type=int, default=None, help="Cases per pair."),
        click.option("--alpha", type=float, default=None, help="Base quality threshold."),
        click.option("--beta", type=float, default=None, help="Allowed quality difference."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@click.group()
@click.version_option(version=__version__, prog_name="mtbehave")
def main() -> None:
    """Behavioral testing harness for machine translation systems."""


@main.command()
@_stage_options
def extract(config_path, **overrides):
    """Extract the editable segments of every corpus pair."""
    _run_stage("extract", config_path, overrides, _run_extract)


@main.command()
@_stage_options
def generate(config_path, **overrides):
    """Generate, infill, and filter test cases for the configured capability."""
    _run_stage("generate", config_path, overrides, _run_generate)


@main.command()
@_stage_options
@click.option(
    "--exclude-low-base",
    "exclude_low_base",
    is_flag=True,
    default=None,
    help="Drop low-base-quality failures from the reported pass rate.",
)
def judge(config_path, **overrides):
    """Translate kept cases, score them, and judge pass or fail."""
    _run_stage("judge", config_path, overrides, _run_judge)


@main.command("sweep")
@_stage_options
@click.option("--alphas", default=DEFAULT_SWEEP_ALPHAS, show_default=True)
@click.option("--betas", default=DEFAULT_SWEEP_BETAS, show_default=True)
def sweep_cmd(config_path, alphas, betas, **overrides):
    """Re-judge existing score records over a grid of thresholds."""
    _run_stage(
        "sweep",
        config_path,
        overrides,
        lambda config: _run_sweep(config, alphas, betas),
    )


@main.command("eval")
@_stage_options
@click.option("--gold", "gold_path", required=True, help="Gold error annotations (JSONL).")
def eval_cmd(config_path, gold_path, **overrides):
    """Evaluate verdicts against gold error annotations."""
    _run_stage(
        "eval",
        config_path,
        overrides,
        lambda config: _run_eval(config, gold_path),
    )


@main.command()
@_stage_options
@click.option(
    "--format",
    "fmt",
    default="markdown",
    show_default=True,
    help="Report format: json, markdown, or csv.",
)
def report(config_path, fmt, **overrides):
    """Render the per-capability pass-rate table."""
    _run_stage(
        "report",
        config_path,
        overrides,
        lambda config: _run_report(config, fmt),
    )


if __name__ == "__main__":
    main()
