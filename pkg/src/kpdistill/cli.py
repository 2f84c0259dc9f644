"""Stage-wise command line driver.

Every command reads the YAML config, checks its upstream artifacts, and
writes outputs plus a manifest under ``<out>/manifests``.  A stage whose
config hash, input checksums and output checksums all match its manifest is
skipped.  Errors go to stderr as one JSON line; exit codes are 2 for a bad
config, 3 for a missing artifact and 1 for anything else.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from .config import PipelineConfig, dump_config, load_config
from .distillation import kd_score
from .encoders import load_params, save_params
from .evaluation import EvalReport, markdown_table, write_recall_lists
from .exceptions import ConfigurationError, KpDistillError, MissingArtifactError
from .features import WorldFeatures
from .pipeline import (Datasets, build_datasets, classification_eval, default_other_recalls,
                       distillation_fidelity, production_eval, train_assistant, train_student)
from .retrieval import index_student, load_index, retrieve_for_items, save_index, write_results
from .synthworld import SOURCES, SyntheticWorld, generate_world, read_pairs, write_pairs
from .trainer import TrainHistory

WORLD = "world.json"
SPLITS = "data/splits.json"
LABELS = {s: f"data/{s.lower()}.jsonl" for s in SOURCES}
ASSISTANT_LABELS = "data/assistant.jsonl"
ASSISTANT = "models/assistant.kpdp"
ASSISTANT_HISTORY = "models/assistant.history.jsonl"
STUDENT = "models/student.kpdp"
STUDENT_HISTORY = "models/student.history.jsonl"
INDEX = "index/keyphrases.kpdp"
EVAL_REPORT = "eval/report.json"
RETRIEVALS = "eval/retrievals.jsonl"
OTHER_RECALLS = "eval/other_recalls.jsonl"
ABLATION_REPORT = "ablation/report.json"
ABLATION_TABLE = "ablation/table.md"
REPORT = "report.md"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Resolved config plus the output directory it writes into."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = Path(cfg.out)

    def path(self, rel: str) -> Path:
        return self.root / rel

    def require(self, *rels: str) -> None:
        for rel in rels:
            if not self.path(rel).exists():
                raise MissingArtifactError(str(self.path(rel)))

    def stage(self, name: str, inputs: list[str], outputs: list[str], work: Callable[[], None]) -> dict:
        self.require(*inputs)
        in_sums = {rel: sha256_file(self.path(rel)) for rel in inputs}
        manifest_path = self.path(f"manifests/{name}.json")
        if manifest_path.exists():
            old = json.loads(manifest_path.read_text())
            fresh = (old.get("config_hash") == self.cfg.digest() and old.get("inputs") == in_sums
                     and all(self.path(r).exists() for r in outputs)
                     and old.get("outputs") == {r: sha256_file(self.path(r)) for r in outputs})
            if fresh:
                return {"stage": name, "status": "unchanged", "outputs": old["outputs"]}
        for rel in outputs:
            self.path(rel).parent.mkdir(parents=True, exist_ok=True)
        work()
        manifest = {
            "stage": name,
            "config_hash": self.cfg.digest(),
            "seed": self.cfg.seed,
            "world_seed": self.cfg.world_config().seed,
            "inputs": in_sums,
            "outputs": {rel: sha256_file(self.path(rel)) for rel in outputs},
        }
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        self.path("config.resolved.yaml").write_text(dump_config(self.cfg))
        return {"stage": name, "status": "ok", "outputs": manifest["outputs"]}

    # ------------------------------------------------------------------ loaders

    def world(self) -> SyntheticWorld:
        return SyntheticWorld.from_json(self.path(WORLD).read_text())

    def features(self, world: SyntheticWorld) -> WorldFeatures:
        return WorldFeatures(world, self.cfg.encoder.vocab_size)

    def datasets(self, sources=("CTR", "SR", "LLM")) -> Datasets:
        splits = json.loads(self.path(SPLITS).read_text())
        labels = {s: read_pairs(self.path(LABELS[s])) for s in sources}
        return Datasets(np.array(splits["train"]), np.array(splits["val"]), np.array(splits["test"]),
                        labels)

    def eval_items(self, world: SyntheticWorld) -> np.ndarray:
        n = self.cfg.evaluation.sample_size
        items = np.arange(len(world.items))
        if n is None or n >= items.size:
            return items
        rng = np.random.default_rng([self.cfg.seed, 11])
        return np.sort(rng.choice(items, size=n, replace=False))


RAW_LABELS = [LABELS["CTR"], LABELS["SR"], LABELS["LLM"]]


def cmd_gen(run: Run) -> dict:
    def work():
        world = generate_world(run.cfg.world_config())
        data = build_datasets(world, run.cfg.data_config())
        run.path(WORLD).write_text(world.to_json())
        run.path(SPLITS).write_text(json.dumps(
            {"train": data.train_items.tolist(), "val": data.val_items.tolist(),
             "test": data.test_items.tolist()}, sort_keys=True) + "\n")
        for src in ("CTR", "SR", "LLM"):
            write_pairs(run.path(LABELS[src]), data.labels[src])
        write_pairs(run.path(ASSISTANT_LABELS), data.assistant_labels)

    return run.stage("gen", [], [WORLD, SPLITS, *RAW_LABELS, ASSISTANT_LABELS], work)


def cmd_train_cross(run: Run) -> dict:
    def work():
        world = run.world()
        data = run.datasets()
        data.assistant_labels = read_pairs(run.path(ASSISTANT_LABELS))
        params, hist = train_assistant(run.features(world), data, run.cfg.encoder_config(),
                                       run.cfg.cross_train_config(), seed=run.cfg.seed)
        save_params(run.path(ASSISTANT), params)
        hist.write(run.path(ASSISTANT_HISTORY))

    return run.stage("train-cross", [WORLD, SPLITS, ASSISTANT_LABELS], [ASSISTANT, ASSISTANT_HISTORY], work)


def cmd_kd_score(run: Run) -> dict:
    def work():
        world = run.world()
        data = run.datasets()
        kd = kd_score(load_params(run.path(ASSISTANT)), data.pairs_for_kd(), run.features(world),
                      history=TrainHistory.read(run.path(ASSISTANT_HISTORY)))
        write_pairs(run.path(LABELS["KD"]), kd)

    return run.stage("kd-score", [WORLD, SPLITS, *RAW_LABELS, ASSISTANT, ASSISTANT_HISTORY],
                     [LABELS["KD"]], work)


def _student_sources(run: Run) -> tuple[str, ...]:
    return tuple(run.cfg.trainer.bi.sources or SOURCES)


def cmd_train_bi(run: Run) -> dict:
    sources = _student_sources(run)
    inputs = [WORLD, SPLITS] + [LABELS[s] for s in sources]

    def work():
        world = run.world()
        data = run.datasets(sources)
        params, hist = train_student(run.features(world), data, sources, run.cfg.encoder_config(),
                                     run.cfg.bi_train_config(), seed=run.cfg.seed)
        save_params(run.path(STUDENT), params)
        hist.write(run.path(STUDENT_HISTORY))

    return run.stage("train-bi", inputs, [STUDENT, STUDENT_HISTORY], work)


def cmd_index(run: Run) -> dict:
    def work():
        world = run.world()
        index = index_student(load_params(run.path(STUDENT)), run.features(world),
                              run.cfg.retrieval.dim_prefix)
        save_index(run.path(INDEX), index)

    return run.stage("index", [WORLD, STUDENT], [INDEX], work)


def _evaluate(run: Run, world, features, data, student, assistant, other) -> EvalReport:
    ev, rt = run.cfg.evaluation, run.cfg.retrieval
    metrics, thr = classification_eval(student, features, data, ev.grid_step)
    report = production_eval(world, student, assistant, features, run.eval_items(world), other,
                             ev.filter_threshold, rt.k, rt.dim_prefix, ev.judge_sample_size,
                             run.cfg.data.noise_rate, run.cfg.seed)
    report.precision, report.recall, report.f1 = metrics
    report.ce_corr = distillation_fidelity(student, assistant, features, data)
    report.config["cosine_threshold"] = thr
    return report


def cmd_eval(run: Run) -> dict:
    def work():
        world = run.world()
        features = run.features(world)
        data = run.datasets()
        student = load_params(run.path(STUDENT))
        assistant = load_params(run.path(ASSISTANT))
        index = load_index(run.path(INDEX))
        items = run.eval_items(world)
        write_results(run.path(RETRIEVALS),
                      retrieve_for_items(student, items, index, features, run.cfg.retrieval.k))
        other = default_other_recalls(world, items, run.cfg.evaluation.other_recall_per_item)
        write_recall_lists(run.path(OTHER_RECALLS), other)
        report = _evaluate(run, world, features, data, student, assistant, other)
        run.path(EVAL_REPORT).write_text(report.to_json() + "\n")

    return run.stage("eval", [WORLD, SPLITS, STUDENT, ASSISTANT, INDEX],
                     [EVAL_REPORT, RETRIEVALS, OTHER_RECALLS], work)


def order_rows(rows: list[tuple[str, EvalReport]]) -> list[tuple[str, EvalReport]]:
    """Descending by median keyphrase count, then judge pass rate; stable otherwise."""
    return sorted(rows, key=lambda r: (-r[1].median_kw_cnt, -r[1].judge_pass_rate))


def cmd_ablate(run: Run) -> dict:
    combos = [tuple(c) for c in run.cfg.ablation.combos]
    needed = sorted({s for c in combos for s in c}, key=SOURCES.index)
    inputs = [WORLD, SPLITS, ASSISTANT] + [LABELS[s] for s in needed]

    def work():
        world = run.world()
        features = run.features(world)
        data = run.datasets(needed)
        assistant = load_params(run.path(ASSISTANT))
        items = run.eval_items(world)
        other = default_other_recalls(world, items, run.cfg.evaluation.other_recall_per_item)
        rows = []
        for combo in combos:
            student, _ = train_student(features, data, combo, run.cfg.encoder_config(),
                                       run.cfg.bi_train_config(), seed=run.cfg.seed)
            rows.append(("+".join(combo), _evaluate(run, world, features, data, student, assistant, other)))
        rows = order_rows(rows)
        payload = {"config_hash": run.cfg.digest(),
                   "rows": [{"labels": name, **rep.to_dict()} for name, rep in rows]}
        run.path(ABLATION_REPORT).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        run.path(ABLATION_TABLE).write_text(
            markdown_table(rows, "production") + "\n" + markdown_table(rows, "kd"))

    return run.stage("ablate", inputs, [ABLATION_REPORT, ABLATION_TABLE], work)


def cmd_report(run: Run) -> dict:
    inputs = [EVAL_REPORT] + ([ABLATION_REPORT] if run.path(ABLATION_REPORT).exists() else [])

    def work():
        ev = EvalReport(**{k: (float("nan") if v is None else v)
                           for k, v in json.loads(run.path(EVAL_REPORT).read_text()).items()})
        parts = ["# Keyphrase retrieval report", "", "## Student", "",
                 markdown_table([("student", ev)], "kd"), markdown_table([("student", ev)], "production")]
        if ABLATION_REPORT in inputs:
            parts += ["## Label-source ablation", "", run.path(ABLATION_TABLE).read_text()]
        run.path(REPORT).write_text("\n".join(parts))

    return run.stage("report", inputs, [REPORT], work)


COMMANDS = {
    "gen": cmd_gen,
    "train-cross": cmd_train_cross,
    "kd-score": cmd_kd_score,
    "train-bi": cmd_train_bi,
    "index": cmd_index,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="override the output directory")
    parser = argparse.ArgumentParser(prog="kpdistill", parents=[common],
                                     description="Distil keyphrase relevance into a bi-encoder.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _fail(err: Exception, code: int) -> int:
    payload = {"error": type(err).__name__, "message": str(err), "exit_code": code}
    if isinstance(err, ConfigurationError) and err.field:
        payload["field"] = err.field
    if isinstance(err, MissingArtifactError):
        payload["path"] = err.path
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(getattr(args, "config", None), seed=getattr(args, "seed", None),
                          out=getattr(args, "out", None))
        result = COMMANDS[args.command](Run(cfg))
    except ConfigurationError as err:
        return _fail(err, 2)
    except MissingArtifactError as err:
        return _fail(err, 3)
    except KpDistillError as err:
        return _fail(err, 1)
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
