"""Config-driven experiment runner.

Subcommands mirror the pipeline stages, each resumable from the artifacts
of the previous one inside the output directory:

    synth    corpus.txt, splits.json, trials.txt
    train    model_<system>.npz per pooling system
    extract  embeddings_<system>.txt (evaluation utterances)
    score    scores_<system>.txt (cosine, one line per trial)
    eval     results.json rows for the single systems
    fuse     fused score files plus their results.json rows
    probe    probe_reports.txt / probe_reports.json
    report   delimited tables and PNG figures under report/
    run      all of the above in order

Every stage draws its randomness from a named sub-seed of the master
seed. The training sub-seeds carry no system name, so all pooling
variants share minibatch order and (where shapes agree) initial weights;
identical (config, seed) runs produce byte-identical artifacts.

Usage: ``poolbench <subcommand> --config cfg.json [--out DIR]
[--seed N] [--systems max,std]``. Omitting ``--config`` uses the built-in
default benchmark configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import encoder as enc
from . import figures, probe, scoring, synthdata
from .pooling import PoolingConfig
from .scoring import DcfParams

FUSION_SIGN = "⊕"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


def derive_seed(master: int, *parts) -> int:
    """Named 64-bit sub-seed of the master seed."""
    text = str(int(master)) + "".join(f"|{p}" for p in parts)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big")


DEFAULT_CONFIG = {
    "seed": 0,
    "output_dir": "results",
    "synth": {
        "num_speakers": 50,
        "input_dim": 16,
        "frames_per_utt": 40,
        "utts_per_speaker": 20,
        "speaker_scale": 1.0,
        "noise_scale": 1.0,
        "nuisance_types": 4,
        "rate_classes": [0.9, 1.0, 1.1],
        "lexicon_size": 25,
        "bursts_per_utt": 3,
        "num_clusters": 8,
        "cluster_scale": 1.0,
        "gender_shape": 0.35,
        "nuisance_offset_scale": 0.5,
        "nuisance_noise_boost": 0.15,
        "burst_len": 1,
        "burst_amplitude": 8.0,
    },
    "eval_speakers": 20,
    "encoder": {
        "frame_hidden": [32],
        "embed_dim": 40,
        "arcface_scale": 30.0,
        "arcface_margin": 0.2,
        "epochs": 25,
        "lr": 0.02,
        "batch_size": 25,
    },
    "pooling_eps": 1e-6,
    "systems": ["max", "mean", "std", "skew", "kurto", "mean-std", "mean-std-skew"],
    "trials": {"num_target": 500, "num_nontarget": 2000},
    "dcf": {"c_miss": 1.0, "c_fa": 1.0, "p_target": 0.01},
    "probe": {
        "hidden_width": 500,
        "epochs": 40,
        "lr": 0.1,
        "batch_size": 32,
        "train_frac": 0.8,
        "tasks": list(probe.TASK_NAMES),
    },
    "fusion": [["mean-std", "mean-std-skew"]],
}


def _deep_update(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if key in out and isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _deep_update(out[key], value)
        else:
            out[key] = value
    return out


@dataclasses.dataclass
class ExperimentConfig:
    """Validated experiment description (see DEFAULT_CONFIG for the schema)."""

    raw: dict

    def __post_init__(self):
        d = self.raw
        names = list(d["systems"])
        if len(set(names)) != len(names):
            raise ValueError("system names must be unique")
        if not names:
            raise ValueError("need at least one system")
        for name in names:
            PoolingConfig.from_name(name, eps=d["pooling_eps"])  # validates
        for recipe in d["fusion"]:
            if len(recipe) < 2:
                raise ValueError(f"fusion recipe {recipe} needs at least two systems")
            for ref in recipe:
                if ref not in names:
                    raise ValueError(f"fusion recipe references unknown system {ref!r}")
        if not 0 < d["eval_speakers"] < d["synth"]["num_speakers"]:
            raise ValueError("eval_speakers must leave at least one training speaker")
        for task in d["probe"]["tasks"]:
            if task not in probe.TASK_NAMES:
                raise ValueError(f"unknown probe task {task!r}")
        DcfParams(**d["dcf"])  # validates

    @classmethod
    def from_dict(cls, overrides: dict) -> "ExperimentConfig":
        return cls(_deep_update(DEFAULT_CONFIG, overrides))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def output_dir(self) -> str:
        return self.raw["output_dir"]

    @property
    def systems(self) -> list:
        return list(self.raw["systems"])

    @property
    def fusion(self) -> list:
        return [list(r) for r in self.raw["fusion"]]

    def synth_spec(self) -> synthdata.SynthSpec:
        synth = dict(self.raw["synth"])
        synth["rate_classes"] = tuple(synth["rate_classes"])
        return synthdata.SynthSpec(seed=derive_seed(self.seed, "synth"), **synth)

    def pooling_config(self, system: str) -> PoolingConfig:
        return PoolingConfig.from_name(system, eps=self.raw["pooling_eps"])

    def encoder_config(self, system: str, num_classes: int) -> enc.EncoderConfig:
        e = self.raw["encoder"]
        return enc.EncoderConfig(
            input_dim=self.raw["synth"]["input_dim"],
            frame_hidden=tuple(e["frame_hidden"]),
            pooling=self.pooling_config(system),
            embed_dim=e["embed_dim"],
            num_classes=num_classes,
            arcface_scale=e["arcface_scale"],
            arcface_margin=e["arcface_margin"],
            seed=derive_seed(self.seed, "train"),
        )

    def dcf_params(self) -> DcfParams:
        return DcfParams(**self.raw["dcf"])

    def probe_config(self) -> probe.ProbeConfig:
        p = self.raw["probe"]
        return probe.ProbeConfig(
            hidden_width=p["hidden_width"],
            epochs=p["epochs"],
            lr=p["lr"],
            batch_size=p["batch_size"],
            seed=derive_seed(self.seed, "probe"),
        )


def fusion_name(recipe) -> str:
    return FUSION_SIGN.join(f"({name})" for name in recipe)


def _slug(name: str) -> str:
    return name.replace(FUSION_SIGN, "+").replace("(", "").replace(")", "")


class Workspace:
    """File layout inside one output directory."""

    def __init__(self, out_dir):
        self.root = Path(out_dir)

    def path(self, name: str) -> Path:
        return self.root / name

    def corpus(self) -> Path:
        return self.path("corpus.txt")

    def splits(self) -> Path:
        return self.path("splits.json")

    def trials(self) -> Path:
        return self.path("trials.txt")

    def model(self, system: str) -> Path:
        return self.path(f"model_{_slug(system)}.npz")

    def embeddings(self, system: str) -> Path:
        return self.path(f"embeddings_{_slug(system)}.txt")

    def scores(self, system: str) -> Path:
        return self.path(f"scores_{_slug(system)}.txt")

    def results(self) -> Path:
        return self.path("results.json")

    def probe_txt(self) -> Path:
        return self.path("probe_reports.txt")

    def probe_json(self) -> Path:
        return self.path("probe_reports.json")

    def report_dir(self) -> Path:
        return self.path("report")

    def require(self, *paths) -> None:
        missing = [str(p) for p in paths if not Path(p).exists()]
        if missing:
            raise FileNotFoundError("missing artifacts: " + ", ".join(missing))


def _load_splits(ws: Workspace):
    with open(ws.splits()) as fh:
        d = json.load(fh)
    return list(d["train_speakers"]), list(d["eval_speakers"])


def _eval_utts(cfg: ExperimentConfig, ws: Workspace):
    ws.require(ws.corpus(), ws.splits())
    utts = synthdata.load_corpus(ws.corpus())
    _, eval_speakers = _load_splits(ws)
    keep = set(eval_speakers)
    return [u for u in utts if u.speaker in keep]


def stage_synth(cfg: ExperimentConfig, ws: Workspace) -> None:
    ws.root.mkdir(parents=True, exist_ok=True)
    spec = cfg.synth_spec()
    utts = synthdata.generate(spec)
    synthdata.save_corpus(ws.corpus(), utts)
    rng = np.random.default_rng(derive_seed(cfg.seed, "split"))
    eval_speakers = sorted(
        int(s) for s in rng.choice(spec.num_speakers, cfg.raw["eval_speakers"], replace=False)
    )
    train_speakers = sorted(set(range(spec.num_speakers)) - set(eval_speakers))
    with open(ws.splits(), "w") as fh:
        json.dump({"train_speakers": train_speakers, "eval_speakers": eval_speakers}, fh)
        fh.write("\n")
    eval_utts = [u for u in utts if u.speaker in set(eval_speakers)]
    trials = synthdata.build_trials(
        eval_utts,
        cfg.raw["trials"]["num_target"],
        cfg.raw["trials"]["num_nontarget"],
        seed=derive_seed(cfg.seed, "trials"),
    )
    scoring.save_trials(ws.trials(), trials)


def _training_batches(cfg: ExperimentConfig, ws: Workspace):
    utts = synthdata.load_corpus(ws.corpus())
    train_speakers, _ = _load_splits(ws)
    label_of = {s: i for i, s in enumerate(train_speakers)}
    train_utts = [u for u in utts if u.speaker in label_of]
    rng = np.random.default_rng(derive_seed(cfg.seed, "batches"))
    order = rng.permutation(len(train_utts))
    size = cfg.raw["encoder"]["batch_size"]
    batches = []
    for start in range(0, len(train_utts), size):
        chunk = [train_utts[int(i)] for i in order[start : start + size]]
        batches.append(
            enc.TrainBatch(
                sequences=[u.frames for u in chunk],
                labels=np.array([label_of[u.speaker] for u in chunk]),
            )
        )
    return batches, len(train_speakers)


def stage_train(cfg: ExperimentConfig, ws: Workspace, systems) -> None:
    ws.require(ws.corpus(), ws.splits())
    batches, num_classes = _training_batches(cfg, ws)
    e = cfg.raw["encoder"]
    for system in systems:
        model = enc.train(
            cfg.encoder_config(system, num_classes), batches, e["epochs"], e["lr"]
        )
        enc.save_model(ws.model(system), model)


def stage_extract(cfg: ExperimentConfig, ws: Workspace, systems) -> None:
    utts = _eval_utts(cfg, ws)
    for system in systems:
        ws.require(ws.model(system))
        model = enc.load_model(ws.model(system))
        embs = enc.extract_all(model, [u.frames for u in utts])
        scoring.save_embeddings(ws.embeddings(system), {u.uid: e for u, e in zip(utts, embs)})


def stage_score(cfg: ExperimentConfig, ws: Workspace, systems) -> None:
    ws.require(ws.trials())
    trials = scoring.load_trials(ws.trials())
    for system in systems:
        ws.require(ws.embeddings(system))
        embs = scoring.load_embeddings(ws.embeddings(system))
        values = [
            scoring.cosine_score(embs[t.enroll_id], embs[t.test_id]) for t in trials
        ]
        scoring.save_scores(ws.scores(system), scoring.ScoreSet(trials, values, system))


def _eval_rows(cfg: ExperimentConfig, sets) -> list:
    params = cfg.dcf_params()
    return [
        {
            "system": s.name,
            "kind": kind,
            "eer": scoring.eer(s),
            "min_dcf": scoring.min_dcf(s, params),
        }
        for s, kind in sets
    ]


def stage_eval(cfg: ExperimentConfig, ws: Workspace, systems) -> None:
    sets = []
    for system in systems:
        ws.require(ws.scores(system))
        sets.append((scoring.load_scores(ws.scores(system), system), "single"))
    rows = _eval_rows(cfg, sets)
    with open(ws.results(), "w") as fh:
        json.dump(rows, fh, indent=1)
        fh.write("\n")


def stage_fuse(cfg: ExperimentConfig, ws: Workspace, systems) -> None:
    ws.require(ws.results())
    with open(ws.results()) as fh:
        rows = [r for r in json.load(fh) if r["kind"] == "single"]
    chosen = set(systems)
    fused_sets = []
    for recipe in cfg.fusion:
        if not all(name in chosen for name in recipe):
            continue
        parts = [scoring.load_scores(ws.scores(name), name) for name in recipe]
        fused = scoring.fuse(parts)
        scoring.save_scores(ws.scores(fused.name), fused)
        fused_sets.append((fused, "fusion"))
    rows.extend(_eval_rows(cfg, fused_sets))
    with open(ws.results(), "w") as fh:
        json.dump(rows, fh, indent=1)
        fh.write("\n")


def stage_probe(cfg: ExperimentConfig, ws: Workspace, systems) -> None:
    # probes use the whole corpus: they measure information content, not
    # generalization, and the 80/20 split needs the sample size
    ws.require(ws.corpus())
    utts = synthdata.load_corpus(ws.corpus())
    models = []
    for system in systems:
        ws.require(ws.model(system))
        models.append((system, enc.load_model(ws.model(system))))
    spec = cfg.synth_spec()
    cluster_map = {i: p.cluster for i, p in enumerate(synthdata.speaker_profiles(spec))}
    reports = probe.run_matrix(
        utts,
        models,
        cfg.raw["probe"]["tasks"],
        cfg.probe_config(),
        cluster_map=cluster_map,
        lexicon_size=spec.lexicon_size,
        train_frac=cfg.raw["probe"]["train_frac"],
        seed=derive_seed(cfg.seed, "probe-jobs"),
    )
    probe.save_reports(ws.probe_txt(), reports)
    probe.save_reports_json(ws.probe_json(), reports)


def _expected_systems(cfg: ExperimentConfig, systems) -> list:
    chosen = set(systems)
    names = list(systems)
    for recipe in cfg.fusion:
        if all(name in chosen for name in recipe):
            names.append(fusion_name(recipe))
    return names


def format_results_table(rows) -> str:
    """EER in percent (3 significant digits), minDCF with 4 decimals."""
    lines = ["system\tEER(%)\tminDCF"]
    for r in rows:
        lines.append(f"{r['system']}\t{100.0 * r['eer']:.3g}\t{r['min_dcf']:.4f}")
    return "\n".join(lines) + "\n"


def format_probe_matrix(reports) -> str:
    tasks, systems = [], []
    for r in reports:
        if r.task not in tasks:
            tasks.append(r.task)
        if r.pooling not in systems:
            systems.append(r.pooling)
    acc = {(r.task, r.pooling): r.accuracy for r in reports}
    lines = ["task\t" + "\t".join(systems)]
    for task in tasks:
        cells = [f"{acc[(task, s)]:.3f}" if (task, s) in acc else "-" for s in systems]
        lines.append(task + "\t" + "\t".join(cells))
    return "\n".join(lines) + "\n"


def stage_report(cfg: ExperimentConfig, ws: Workspace, systems) -> str:
    ws.require(ws.results(), ws.probe_json())
    with open(ws.results()) as fh:
        rows = json.load(fh)
    seen = [r["system"] for r in rows]
    if len(set(seen)) != len(seen):
        raise ValueError("results list a system more than once")
    missing = [name for name in _expected_systems(cfg, systems) if name not in seen]
    if missing:
        raise FileNotFoundError(
            "results.json lacks rows for: " + ", ".join(missing)
        )
    reports = probe.load_reports_json(ws.probe_json())

    rdir = ws.report_dir()
    rdir.mkdir(parents=True, exist_ok=True)
    table = format_results_table(rows)
    matrix = format_probe_matrix(reports)
    (rdir / "results_table.txt").write_text(table)
    (rdir / "probe_matrix.txt").write_text(matrix)
    figures.save_results_figure(rows, rdir / "eer_dcf.png")
    figures.save_probe_grid(reports, rdir / "probe_grid.png")
    return (
        "== verification ==\n" + table + "\n== probe accuracy ==\n" + matrix
        + f"\nfigures: {rdir / 'eer_dcf.png'}, {rdir / 'probe_grid.png'}\n"
    )


_STAGES = ("synth", "train", "extract", "score", "eval", "fuse", "probe", "report")


def run_experiment(cfg: ExperimentConfig, out_dir=None, systems=None) -> None:
    """Execute every stage in order; stage failures carry the stage name
    and leave earlier artifacts in place."""
    ws = Workspace(out_dir or cfg.output_dir)
    systems = list(systems or cfg.systems)
    for stage in _STAGES:
        fn = globals()[f"stage_{stage}"]
        try:
            result = fn(cfg, ws) if stage == "synth" else fn(cfg, ws, systems)
        except Exception as e:
            raise StageError(stage, e) from e
        if stage == "report":
            print(result, end="")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poolbench",
        description="Compare statistical temporal pooling operators end to end.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("synth", "generate the synthetic corpus, speaker splits and trial list"),
        ("train", "train one encoder per pooling system"),
        ("extract", "extract embeddings for the evaluation utterances"),
        ("score", "score the trial list with cosine similarity"),
        ("eval", "compute EER and minDCF for each single system"),
        ("fuse", "fuse configured system scores and evaluate the fusions"),
        ("probe", "train probing classifiers on the embeddings"),
        ("report", "render result tables and figures from the artifacts"),
        ("run", "run the whole pipeline"),
    ]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON experiment config (default: built-in)")
        p.add_argument("--out", help="output directory (default: from config)")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--systems", help="comma-separated subset of systems")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        overrides = {}
        if args.config:
            with open(args.config) as fh:
                overrides = json.load(fh)
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = ExperimentConfig.from_dict(overrides)
        systems = cfg.systems
        if args.systems:
            wanted = [s.strip() for s in args.systems.split(",") if s.strip()]
            unknown = [s for s in wanted if s not in systems]
            if unknown:
                raise ValueError(f"--systems names not in config: {', '.join(unknown)}")
            systems = wanted
        ws = Workspace(args.out or cfg.output_dir)
        if args.command == "run":
            run_experiment(cfg, ws.root, systems)
        else:
            fn = globals()[f"stage_{args.command}"]
            try:
                if args.command == "synth":
                    result = fn(cfg, ws)
                else:
                    result = fn(cfg, ws, systems)
            except Exception as e:
                raise StageError(args.command, e) from e
            if args.command == "report":
                print(result, end="")
    except StageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
