"""Command-line entry points.

Exit codes: 2 for configuration problems, 3 for bad data, 1 for anything
unexpected. Every artifact-producing command drops a JSON snapshot of its
resolved parameters next to the output so runs can be reproduced exactly.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from .corpus import DEFAULT_MARGIN_FRAC, DEFAULT_STATE_FRAC, load_manifest, temporal_split
from .errors import ConfigError, DataError

DATA_ENVVAR = "CATE_DATA_DIR"


def _fail(code: int, kind: str, exc: Exception) -> None:
    click.echo(f"{kind}: {exc}", err=True)
    sys.exit(code)


def handles_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as e:
            _fail(2, "config error", e)
        except DataError as e:
            _fail(3, "data error", e)

    return wrapper


def _snapshot(path: Path, params: dict) -> None:
    """Reproducibility sidecar: resolved parameters, stable bytes, no clock."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(params, indent=2, sort_keys=True, default=str) + "\n")


def _load_questions(questions_path: str, data_dir: str):
    from .questions import QuestionSetReader

    corpus = load_manifest(Path(data_dir) / "manifest.json")
    reader = QuestionSetReader(questions_path, corpus)
    return corpus, [reader.materialize(r) for r in reader.records]


@click.group()
@click.version_option(package_name="cate", prog_name="cate")
def cli():
    """Tools for connecting actions to their visual effects."""


# ---------------------------------------------------------------------------


@cli.command()
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--n-per-class", default=8, show_default=True, type=int)
@click.option("--n-frames", default=32, show_default=True, type=int)
@click.option("--size", default=64, show_default=True, type=int, help="Canvas height and width.")
@click.option("--seed", default=0, show_default=True, type=int)
@handles_errors
def synth(out_dir: Path, n_per_class: int, n_frames: int, size: int, seed: int):
    """Generate a synthetic episode corpus with ground truth."""
    from .synthworld import CorpusSpec, generate_corpus

    spec = CorpusSpec(
        n_per_class=n_per_class, n_frames=n_frames, canvas=(size, size), rng_seed=seed
    )
    manifest = generate_corpus(out_dir, spec)
    _snapshot(
        out_dir / "synth.config.json",
        {
            "command": "synth",
            "n_per_class": n_per_class,
            "n_frames": n_frames,
            "size": size,
            "seed": seed,
        },
    )
    corpus = load_manifest(manifest)
    click.echo(f"wrote {len(corpus)} clips to {out_dir}")


@cli.command("build-questions")
@click.option("--data", "data_dir", required=True, envvar=DATA_ENVVAR, type=click.Path(exists=True))
@click.option("--split", default="test", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--mode", default="cross", show_default=True, type=click.Choice(["cross", "same"]))
@click.option("--per-triplet", default=1, show_default=True, type=int)
@click.option("--counterfactual-ratio", default=0.5, show_default=True, type=float)
@click.option("--whitelist", "whitelist_path", default=None, type=click.Path(exists=True))
@click.option("--no-counterfactuals", is_flag=True, help="Force an empty augmentation whitelist.")
@click.option("--state-frac", default=DEFAULT_STATE_FRAC, show_default=True, type=float)
@click.option("--margin", "margin_frac", default=DEFAULT_MARGIN_FRAC, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@handles_errors
def build_questions(
    data_dir,
    split,
    out_path: Path,
    mode,
    per_triplet,
    counterfactual_ratio,
    whitelist_path,
    no_counterfactuals,
    state_frac,
    margin_frac,
    seed,
):
    """Build a question set (JSONL) from one split of a corpus."""
    from .questions import AugmentationWhitelist, build_question_set, write_question_set
    from .synthworld import DEFAULT_WHITELIST

    if no_counterfactuals:
        whitelist = AugmentationWhitelist({})
    elif whitelist_path is not None:
        whitelist = AugmentationWhitelist.load(whitelist_path)
    else:
        whitelist = AugmentationWhitelist({k: list(v) for k, v in DEFAULT_WHITELIST.items()})

    corpus = load_manifest(Path(data_dir) / "manifest.json")
    questions = build_question_set(
        corpus,
        split,
        mode=mode,
        whitelist=whitelist,
        counterfactual_ratio=counterfactual_ratio,
        rng_seed=seed,
        n_per_triplet=per_triplet,
        state_frac=state_frac,
        margin_frac=margin_frac,
    )
    n = write_question_set(questions, out_path)
    if n == 0:
        raise DataError(f"no questions could be built from split {split!r}")
    _snapshot(
        Path(str(out_path) + ".config.json"),
        {
            "command": "build-questions",
            "data": str(data_dir),
            "split": split,
            "mode": mode,
            "per_triplet": per_triplet,
            "counterfactual_ratio": counterfactual_ratio,
            "whitelist": whitelist.kinds_by_class,
            "state_frac": state_frac,
            "margin_frac": margin_frac,
            "seed": seed,
        },
    )
    click.echo(f"wrote {n} questions to {out_path}")


# ---------------------------------------------------------------------------


@cli.command()
@click.option("--data", "data_dir", required=True, envvar=DATA_ENVVAR, type=click.Path(exists=True))
@click.option("--task", default="selection", show_default=True,
              type=click.Choice(["selection", "ssl-action", "eaa"]))
@click.option("--questions", "questions_path", default=None, type=click.Path(exists=True),
              help="Required for task=selection.")
@click.option("--split", default="train", show_default=True, help="Clip split for ssl-action/eaa.")
@click.option("--model", "model_kind", default="analogical", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--d", default=32, show_default=True, type=int)
@click.option("--epochs", default=8, show_default=True, type=int)
@click.option("--lr", default=1e-3, show_default=True, type=float)
@click.option("--batch-size", default=32, show_default=True, type=int)
@click.option("--temperature", default=0.1, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--k", "eaa_k", default=8, show_default=True, type=int, help="Effect frames (eaa).")
@click.option("--action-len-frac", default=0.25, show_default=True, type=float)
@click.option("--metrics-log", default=None, type=click.Path(path_type=Path))
@handles_errors
def train(
    data_dir,
    task,
    questions_path,
    split,
    model_kind,
    out_path: Path,
    d,
    epochs,
    lr,
    batch_size,
    temperature,
    seed,
    eaa_k,
    action_len_frac,
    metrics_log,
):
    """Train a selector or one of the self-supervised pretext models."""
    from .training import (
        MetricsLogger,
        save_eaa_checkpoint,
        save_ssl_checkpoint,
        train_eaa,
        train_ssl_action_encoder,
    )

    logger = MetricsLogger(metrics_log) if metrics_log else None
    params = {
        "command": "train",
        "task": task,
        "data": str(data_dir),
        "model": model_kind,
        "d": d,
        "epochs": epochs,
        "lr": lr,
        "batch_size": batch_size,
        "temperature": temperature,
        "seed": seed,
    }

    if task == "selection":
        if questions_path is None:
            raise ConfigError("task=selection requires --questions")
        from .selectors import make_selector

        _, questions = _load_questions(questions_path, data_dir)
        selector = make_selector(
            model_kind,
            d=d,
            epochs=epochs,
            lr=lr,
            batch_size=batch_size,
            temperature=temperature,
            seed=seed,
        )
        selector.fit(questions)
        selector.save(out_path)
        if logger is not None:
            for i, loss in enumerate(selector.history_):
                logger.log(step=i, phase=model_kind, loss=loss)
        params["questions"] = str(questions_path)
        params["n_questions"] = len(questions)
        click.echo(f"trained {model_kind} on {len(questions)} questions -> {out_path}")
    else:
        corpus = load_manifest(Path(data_dir) / "manifest.json")
        clips = [corpus.load_clip(e.clip_id) for e in corpus.by_split(split)]
        params["split"] = split
        if task == "ssl-action":
            action_enc, state_enc, history = train_ssl_action_encoder(
                clips,
                d=d,
                epochs=epochs,
                lr=lr,
                temperature=temperature,
                batch_size=batch_size,
                seed=seed,
                logger=logger,
            )
            save_ssl_checkpoint(out_path, action_enc, state_enc)
            click.echo(f"trained ssl-action on {len(clips)} clips -> {out_path}")
        else:
            regressor, frame_enc, action_enc, history = train_eaa(
                clips,
                d=d,
                K=eaa_k,
                action_len_frac=action_len_frac,
                epochs=epochs,
                lr=lr,
                batch_size=batch_size,
                seed=seed,
                logger=logger,
            )
            save_eaa_checkpoint(out_path, regressor, frame_enc, action_enc, eaa_k, action_len_frac)
            params["K"] = eaa_k
            params["action_len_frac"] = action_len_frac
            click.echo(f"trained eaa on {len(clips)} clips -> {out_path}")

    if logger is not None:
        logger.close()
    _snapshot(Path(str(out_path) + ".config.json"), params)


@cli.command("eval")
@click.option("--data", "data_dir", required=True, envvar=DATA_ENVVAR, type=click.Path(exists=True))
@click.option("--questions", "questions_path", required=True, type=click.Path(exists=True))
@click.option("--ckpt", "ckpt_path", default=None, type=click.Path(exists=True))
@click.option("--model", "model_kind", default=None,
              help="Train-free model to evaluate instead of a checkpoint (naive).")
@click.option("--d", default=32, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--records", "records_path", default=None, type=click.Path(path_type=Path))
@click.option("--plot", "plot_path", default=None, type=click.Path(path_type=Path))
@handles_errors
def eval_cmd(data_dir, questions_path, ckpt_path, model_kind, d, seed, out_path, records_path, plot_path):
    """Evaluate a selector on a question set; abstentions count as wrong."""
    from .evalharness import (
        abstain_rate,
        accuracy,
        classwise_report,
        evaluate_selector,
        plot_classwise_accuracy,
        write_answer_records,
        write_results,
    )
    from .selectors import load_selector, make_selector

    if (ckpt_path is None) == (model_kind is None):
        raise ConfigError("pass exactly one of --ckpt or --model")
    _, questions = _load_questions(questions_path, data_dir)
    if ckpt_path is not None:
        selector = load_selector(ckpt_path)
        model_desc = {"checkpoint": str(ckpt_path), "model": selector.model_kind}
    else:
        if model_kind != "naive":
            raise ConfigError("only the naive selector can run without a checkpoint")
        selector = make_selector("naive", d=d, seed=seed).fit(questions)
        model_desc = {"model": "naive", "d": d}

    records = evaluate_selector(selector, questions)
    report = classwise_report(records)
    config = {
        "command": "eval",
        "questions": str(questions_path),
        "data": str(data_dir),
        **model_desc,
    }
    write_results(out_path, report, config, seed)
    if records_path is not None:
        write_answer_records(records_path, records)
    if plot_path is not None:
        plot_classwise_accuracy(report, plot_path)
    click.echo(
        f"accuracy {accuracy(records):.4f} over {len(records)} questions "
        f"(abstained {abstain_rate(records):.4f}) -> {out_path}"
    )


@cli.command()
@click.option("--data", "data_dir", required=True, envvar=DATA_ENVVAR, type=click.Path(exists=True))
@click.option("--split", default="test", show_default=True)
@click.option("--ckpt", "ckpt_path", default=None, type=click.Path(exists=True),
              help="Selector checkpoint; falls back to a fresh seeded encoder.")
@click.option("--d", default=32, show_default=True, type=int)
@click.option("--k", "ks", multiple=True, type=int, default=(1, 5), show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@handles_errors
def retrieve(data_dir, split, ckpt_path, d, ks, seed, out_path):
    """Nearest-neighbour retrieval of same-class clips in embedding space."""
    import torch

    from .encoders import BackboneConfig, build_backbone
    from .evalharness import RetrievalIndex, retrieval_topk_accuracy

    corpus = load_manifest(Path(data_dir) / "manifest.json")
    entries = corpus.by_split(split)
    if not entries:
        raise DataError(f"split {split!r} is empty")
    triplets = []
    for e in entries:
        clip = corpus.load_clip(e.clip_id)
        triplets.append(temporal_split(clip))

    if ckpt_path is not None:
        from .selectors import load_selector

        selector = load_selector(ckpt_path)
        with torch.no_grad():
            if selector.model_kind == "analogical":
                # embed the state change itself
                s = selector.state_encoder_.encode_batch(
                    [t.initial_state for t in triplets] + [t.final_state for t in triplets]
                )
                n = len(triplets)
                mat = selector.heads_["scc"](s[:n], s[n:]).double().numpy()
            else:
                mat = (
                    selector.action_encoder_.encode_batch([t.action for t in triplets])
                    .double()
                    .numpy()
                )
        encoder_desc = {"checkpoint": str(ckpt_path), "model": selector.model_kind}
    else:
        backbone = build_backbone(
            BackboneConfig(kind="tiny3dconv", d=d, n_sampled_frames=8), rng_seed=seed
        )
        with torch.no_grad():
            mat = backbone.encode_batch([t.action for t in triplets]).double().numpy()
        encoder_desc = {"encoder": "tiny3dconv", "d": d}

    ids = [t.source_clip_id for t in triplets]
    labels = [t.class_label for t in triplets]
    index = RetrievalIndex(mat, ids, labels)
    topk = {str(k): retrieval_topk_accuracy(index, mat, ids, labels, k) for k in ks}
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(topk, indent=2, sort_keys=True) + "\n")
    config = {
        "command": "retrieve",
        "data": str(data_dir),
        "split": split,
        "seed": seed,
        "n_queries": len(ids),
        **encoder_desc,
    }
    _snapshot(Path(str(out_path) + ".config.json"), config)
    click.echo(
        "retrieval "
        + " ".join(f"top-{k}={topk[str(k)]:.4f}" for k in ks)
        + f" over {len(ids)} queries -> {out_path}"
    )


@cli.command("aqa-probe")
@click.option("--data", "data_dir", required=True, envvar=DATA_ENVVAR, type=click.Path(exists=True))
@click.option("--split", default="test", show_default=True)
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--seed", default=0, show_default=True, type=int)
@handles_errors
def aqa_probe(data_dir, split, ckpt_path, out_path, seed):
    """Probe an effect-affinity model: rank agreement with temporal order."""
    import torch

    from .evalharness import spearman, write_results
    from .training import eaa_make_sample, eaa_predictions, load_eaa_checkpoint

    regressor, frame_enc, action_enc, ck_config = load_eaa_checkpoint(ckpt_path)
    corpus = load_manifest(Path(data_dir) / "manifest.json")
    entries = corpus.by_split(split)
    if not entries:
        raise DataError(f"split {split!r} is empty")

    per_sample = []
    all_preds: list[float] = []
    all_labels: list[float] = []
    with torch.no_grad():
        for e in entries:
            clip = corpus.load_clip(e.clip_id)
            try:
                sample = eaa_make_sample(clip, ck_config["action_len_frac"], ck_config["K"])
            except DataError:
                continue
            preds = eaa_predictions(sample, regressor, frame_enc, action_enc).numpy().tolist()
            rho = spearman(preds, sample.labels.labels)
            per_sample.append({"clip_id": e.clip_id, "spearman": rho})
            all_preds.extend(preds)
            all_labels.extend(sample.labels.labels)
    if not per_sample:
        raise DataError("no clip in the split is long enough to probe")

    metrics = {
        "n_samples": len(per_sample),
        "mean_spearman": float(np.mean([r["spearman"] for r in per_sample])),
        "pooled_spearman": spearman(all_preds, all_labels),
        "mse": float(np.mean((np.asarray(all_preds) - np.asarray(all_labels)) ** 2)),
        "per_sample": per_sample,
    }
    config = {
        "command": "aqa-probe",
        "data": str(data_dir),
        "split": split,
        "checkpoint": str(ckpt_path),
        "K": ck_config["K"],
        "action_len_frac": ck_config["action_len_frac"],
    }
    write_results(out_path, metrics, config, seed)
    click.echo(
        f"mean spearman {metrics['mean_spearman']:.4f} over {len(per_sample)} clips -> {out_path}"
    )


@cli.command()
@click.option("--data", "data_dir", required=True, envvar=DATA_ENVVAR, type=click.Path(exists=True))
@click.option("--questions", "questions_path", required=True, type=click.Path(exists=True))
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--limit", default=20, show_default=True, type=int)
@handles_errors
def viz(data_dir, questions_path, ckpt_path, out_dir: Path, limit):
    """Render joint-attention overlays for the first N questions."""
    from .attnviz import (
        joint_attention,
        mass_inside_box,
        provenance_union_box,
        render_overlays,
        save_attention_npz,
        union_box,
    )
    from .selectors import load_selector
    from .synthworld import load_ground_truth

    selector = load_selector(ckpt_path)
    corpus, questions = _load_questions(questions_path, data_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = []
    for q in questions[: max(1, limit)]:
        maps = joint_attention(selector, q)
        save_attention_npz(maps, out_dir / f"{q.question_id}.attn.npz")
        render_overlays(maps, q, out_dir)
        row = {"question_id": q.question_id, "degenerate": maps.degenerate}
        try:
            states_entry = corpus.get(q.states_clip_id)
            gt = load_ground_truth(corpus.root, q.states_clip_id, states_entry.file_path)
            h, w = q.initial_state.frame_shape
            box_i = union_box(gt, range(*q.initial_range))
            box_f = union_box(gt, range(*q.final_range))
            row["mass_initial"] = mass_inside_box(maps.initial, box_i)
            row["mass_final"] = mass_inside_box(maps.final, box_f)
            prov = q.provenance[maps.option_index]
            opt_entry = corpus.get(prov.source_clip_id)
            opt_gt = load_ground_truth(corpus.root, prov.source_clip_id, opt_entry.file_path)
            box_o = provenance_union_box(opt_gt, prov.frame_range, prov.counterfactual_kind, w)
            row["mass_action"] = mass_inside_box(maps.action, box_o)
        except DataError:
            pass  # corpora without ground truth still get the overlays
        summary.append(row)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _snapshot(
        out_dir / "viz.config.json",
        {
            "command": "viz",
            "data": str(data_dir),
            "questions": str(questions_path),
            "checkpoint": str(ckpt_path),
            "limit": limit,
        },
    )
    click.echo(f"wrote attention maps for {len(summary)} questions to {out_dir}")


@cli.command("quiz-serve")
@click.option("--data", "data_dir", required=True, envvar=DATA_ENVVAR, type=click.Path(exists=True))
@click.option("--questions", "questions_path", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--log", "log_path", default="quiz_events.jsonl", show_default=True,
              type=click.Path(path_type=Path))
@click.option("--media-dir", default="quiz_media", show_default=True,
              type=click.Path(path_type=Path))
@click.option("--static", "static_dir", default=None, type=click.Path(exists=True),
              help="Directory with a built web UI to serve at /.")
@handles_errors
def quiz_serve(data_dir, questions_path, host, port, log_path, media_dir, static_dir):
    """Serve the human quiz API (and optionally a web UI)."""
    import uvicorn

    from .quizservice import QuizStore, create_app

    _, questions = _load_questions(questions_path, data_dir)
    store = QuizStore(questions, log_path=log_path, media_dir=media_dir)
    app = create_app(store, static_dir=static_dir)
    click.echo(f"serving {len(questions)} questions on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


main = cli

if __name__ == "__main__":
    main()
