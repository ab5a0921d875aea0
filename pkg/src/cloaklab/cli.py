"""Experiment orchestration: staged pipeline with hashed manifests.

Stages write their outputs plus a manifest.json recording the full config,
input hashes, and output hashes. Downstream stages verify the hashes they
consume, so a tampered or stale artifact fails loudly. Exit codes: 0 ok,
1 validation problem, 2 numerical failure.

    cloaklab gen-data   -> workdir/data/<artist>/<split>/NNN.imf
    cloaklab train-ae   -> workdir/model/ae.nnw
    cloaklab cloak      -> workdir/cloaked/<artist>/NNN.imf
    cloaklab purify     -> workdir/purified/<artist>/NNN.imf
    cloaklab eval --experiment {gap,mimic,genre,texture,smooth}
    cloaklab report     -> workdir/reports/report.json
"""
from __future__ import annotations

import copy
import functools
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import __version__
from .autoencoder import Autoencoder, load_weights, reconstruct, save_weights, train
from .datagen import corpus_digest, genre_corpora, standard_bench
from .errors import NumericalError, ValidationError
from .evaluate import (
    artifact_energy,
    fine_band_energy,
    gap_report,
    genre_accuracy,
    mimic_breakdown,
    texture_retention,
    train_genre_classifier,
)
from .image import Image, gaussian_blur, load_image, save_image
from .nn import Rng, derive_seed
from .optimize import OptConfig, cloak, purify
from .perceptual import PerceptualMetric
from .style import StyleParams, default_styles, load_styles, select_target_style

DEFAULT_CONFIG = {
    "master_seed": 0,
    "jobs": 1,
    "styles_file": None,
    "bench": {"images_per_artist": 40, "train_per_artist": 30},
    "train": {"epochs": 40, "lr": 0.002, "batch": 8, "latent_channels": 8},
    "cloak": {
        "budget": 0.07,
        "steps": 400,
        "lr": 0.01,
        "penalty_alpha": 10.0,
        "alpha_growth": 1.5,
        "artists": ["hist_romantic", "hist_realist", "indie_textured", "indie_smooth"],
        "limit": 30,
    },
    "purify": {
        "budget": 0.07,
        "steps": 400,
        "lr": 0.01,
        "penalty_alpha": 10.0,
        "alpha_growth": 1.5,
    },
    "genre": {"n_train": 40, "n_holdout": 20, "epochs": 25, "lr": 0.004, "blur_sigma": 1.5},
}


def _merge(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ValidationError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(f"config key {path + key!r} must be a table")
            out[key] = _merge(base[key], value, path + key + ".")
        else:
            out[key] = value
    return out


@dataclass
class Context:
    config: dict
    workdir: Path

    @property
    def master_seed(self) -> int:
        return int(self.config["master_seed"])

    @property
    def jobs(self) -> int:
        return max(1, int(self.config["jobs"]))

    def styles(self) -> dict[str, StyleParams]:
        path = self.config.get("styles_file")
        return load_styles(path) if path else default_styles()

    def opt_config(self, section: str, index: int, budget=None, steps=None) -> OptConfig:
        c = self.config[section]
        return OptConfig(
            budget=float(budget if budget is not None else c["budget"]),
            steps=int(steps if steps is not None else c["steps"]),
            lr=float(c["lr"]),
            penalty_alpha=float(c["penalty_alpha"]),
            alpha_growth=float(c["alpha_growth"]),
            seed=self.master_seed ^ index,
        )


def load_config(path, seed=None, jobs=None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as e:
            raise ValidationError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ValidationError(f"malformed config {path}: {e}") from e
        cfg = _merge(cfg, doc)
    if seed is not None:
        cfg["master_seed"] = int(seed)
    if jobs is not None:
        cfg["jobs"] = int(jobs)
    return cfg


# ---------------------------------------------------------------------------
# Manifests


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def write_manifest(stage_dir: Path, stage: str, ctx: Context, inputs: dict, outputs: dict, meta: dict):
    payload = {
        "stage": stage,
        "version": f"cloaklab {__version__}",
        "config": ctx.config,
        "inputs": inputs,
        "outputs": outputs,
        "meta": meta,
    }
    (stage_dir / "manifest.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_manifest(ctx: Context, stage: str) -> dict:
    stage_dir = ctx.workdir / _STAGE_DIRS[stage]
    path = stage_dir / "manifest.json"
    if not path.is_file():
        raise ValidationError(
            f"missing {stage} outputs under {stage_dir}; run `cloaklab {stage}` first"
        )
    manifest = json.loads(path.read_text())
    for rel, digest in manifest["outputs"].items():
        target = ctx.workdir / rel
        if not target.is_file():
            raise ValidationError(f"{stage} output {rel} is missing; rerun `cloaklab {stage}`")
        actual = file_sha256(target)
        if actual != digest:
            raise ValidationError(
                f"hash mismatch for {rel}: manifest says {digest[:12]}.., file is "
                f"{actual[:12]}.. (tampered or stale; rerun `cloaklab {stage}`)"
            )
    return manifest

_STAGE_DIRS = {
    "gen-data": "data",
    "train-ae": "model",
    "cloak": "cloaked",
    "purify": "purified",
}


# ---------------------------------------------------------------------------
# CLI plumbing


def cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(1)
        except NumericalError as e:
            click.echo(f"numerical failure: {e}", err=True)
            sys.exit(2)

    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file.")
@click.option("--workdir", type=click.Path(), default="work", help="Pipeline working directory.")
@click.option("--seed", type=int, default=None, help="Master seed (overrides config).")
@click.option("--jobs", type=int, default=None, help="Worker processes for per-image stages.")
@click.pass_context
@cli_errors
def main(ctx, config_path, workdir, seed, jobs):
    """Reproducible cloak/purify experiment pipeline."""
    cfg = load_config(config_path, seed=seed, jobs=jobs)
    ctx.obj = Context(config=cfg, workdir=Path(workdir))


def _bench(ctx: Context):
    b = ctx.config["bench"]
    return standard_bench(
        ctx.master_seed,
        images_per_artist=int(b["images_per_artist"]),
        train_per_artist=int(b["train_per_artist"]),
    )


@main.command("gen-data")
@click.pass_obj
@cli_errors
def cli_gen_data(ctx: Context):
    """Generate the standard synthetic bench as IMF files."""
    bench = _bench(ctx)
    data_dir = ctx.workdir / "data"
    outputs = {}
    artists_meta = []
    for artist in bench.artists:
        for split, images in (("train", artist.train), ("holdout", artist.holdout)):
            d = data_dir / artist.spec.name / split
            d.mkdir(parents=True, exist_ok=True)
            for i, img in enumerate(images):
                rel = f"data/{artist.spec.name}/{split}/{i:03d}.imf"
                save_image(img, ctx.workdir / rel, fmt="imf")
                outputs[rel] = file_sha256(ctx.workdir / rel)
        artists_meta.append(
            {
                "name": artist.spec.name,
                "style": artist.spec.style.to_dict(),
                "content_seed": artist.spec.content_seed,
                "in_pretraining": artist.spec.in_pretraining,
                "smooth_category": artist.spec.smooth_category,
                "corpus_digest": corpus_digest(artist.images),
                "n_train": len(artist.train),
                "n_holdout": len(artist.holdout),
            }
        )
    write_manifest(data_dir, "gen-data", ctx, {}, outputs, {"artists": artists_meta})
    click.echo(f"gen-data: wrote {len(outputs)} images under {data_dir}")


def _artist_images(ctx: Context, manifest: dict, name: str, split: str) -> list[Image]:
    meta = {a["name"]: a for a in manifest["meta"]["artists"]}
    if name not in meta:
        raise ValidationError(f"artist {name!r} not present in the data manifest")
    n = meta[name]["n_train"] if split == "train" else meta[name]["n_holdout"]
    return [
        load_image(ctx.workdir / f"data/{name}/{split}/{i:03d}.imf") for i in range(n)
    ]


def _artist_style(manifest: dict, name: str) -> StyleParams:
    meta = {a["name"]: a for a in manifest["meta"]["artists"]}
    return StyleParams.from_dict(meta[name]["style"])


@main.command("train-ae")
@click.pass_obj
@cli_errors
def cli_train_ae(ctx: Context):
    """Train the autoencoder on the in-pretraining train splits."""
    data_manifest = load_manifest(ctx, "gen-data")
    corpus = []
    for a in data_manifest["meta"]["artists"]:
        if a["in_pretraining"]:
            corpus.extend(_artist_images(ctx, data_manifest, a["name"], "train"))
    tc = ctx.config["train"]
    model = Autoencoder.create(
        int(tc["latent_channels"]), seed=derive_seed(ctx.master_seed, 0xAE)
    )
    model, history = train(
        model,
        corpus,
        epochs=int(tc["epochs"]),
        lr=float(tc["lr"]),
        batch=int(tc["batch"]),
        rng=Rng(derive_seed(ctx.master_seed, 0x7A)),
    )
    model_dir = ctx.workdir / "model"
    model_dir.mkdir(parents=True, exist_ok=True)
    save_weights(model, model_dir / "ae.nnw")
    holdout = []
    for a in data_manifest["meta"]["artists"]:
        if a["in_pretraining"]:
            holdout.extend(_artist_images(ctx, data_manifest, a["name"], "holdout"))
    mses = []
    for img in holdout:
        r = reconstruct(model, img)
        d = img.pixels.astype(np.float64) - r.pixels.astype(np.float64)
        mses.append(float(np.mean(d * d)))
    outputs = {"model/ae.nnw": file_sha256(model_dir / "ae.nnw")}
    inputs = {"data": file_sha256(ctx.workdir / "data" / "manifest.json")}
    meta = {
        "loss_history": history,
        "final_loss": history[-1] if history else None,
        "holdout_mse": float(np.mean(mses)),
    }
    write_manifest(model_dir, "train-ae", ctx, inputs, outputs, meta)
    click.echo(
        f"train-ae: final loss {meta['final_loss']:.5f}, holdout MSE {meta['holdout_mse']:.5f}"
    )


def _load_model_and_metric(ctx: Context):
    load_manifest(ctx, "train-ae")
    model = load_weights(ctx.workdir / "model" / "ae.nnw")
    return model, PerceptualMetric.from_autoencoder(model)


def _cloak_one(payload):
    img, style, model, metric, cfg = payload
    result = cloak(img, style, model, metric, cfg)
    return result


def _purify_one(payload):
    img, model, metric, cfg = payload
    return purify(img, model, metric, cfg)


def _map_indexed(fn, payloads, jobs: int):
    if jobs <= 1 or len(payloads) < 2:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, payloads))


def _parse_artists(arg, default):
    if arg is None:
        return list(default)
    return [a.strip() for a in str(arg).split(",") if a.strip()]


@main.command("cloak")
@click.option("--artists", default=None, help="Comma-separated artist names (default: config).")
@click.option("--limit", type=int, default=None, help="Images per artist (default: config).")
@click.option("--budget", type=float, default=None, help="Perceptual budget override.")
@click.option("--steps", type=int, default=None, help="Step-count override.")
@click.pass_obj
@cli_errors
def cli_cloak(ctx: Context, artists, limit, budget, steps):
    """Cloak train-split images toward each artist's selected target style."""
    data_manifest = load_manifest(ctx, "gen-data")
    model, metric = _load_model_and_metric(ctx)
    pool_styles = ctx.styles()
    names = _parse_artists(artists, ctx.config["cloak"]["artists"])
    limit = int(limit if limit is not None else ctx.config["cloak"]["limit"])
    out_dir = ctx.workdir / "cloaked"
    outputs, entries = {}, []
    index = 0
    for name in names:
        images = _artist_images(ctx, data_manifest, name, "train")[:limit]
        style = _artist_style(data_manifest, name)
        target = select_target_style(style, list(pool_styles.values()), metric, images[0])
        target_name = next(k for k, v in pool_styles.items() if v == target)
        payloads = []
        for img in images:
            payloads.append(
                (img, target, model, metric, ctx.opt_config("cloak", index, budget=budget, steps=steps))
            )
            index += 1
        results = _map_indexed(_cloak_one, payloads, ctx.jobs)
        (out_dir / name).mkdir(parents=True, exist_ok=True)
        for i, (img, res) in enumerate(zip(images, results)):
            rel = f"cloaked/{name}/{i:03d}.imf"
            save_image(res.output, ctx.workdir / rel, fmt="imf")
            outputs[rel] = file_sha256(ctx.workdir / rel)
            entries.append(
                {
                    "artist": name,
                    "index": i,
                    "source": f"data/{name}/train/{i:03d}.imf",
                    "target_style": target_name,
                    "final_pd": res.final_pd,
                    "final_primary_loss": res.final_primary_loss,
                    "constraint_satisfied": res.constraint_satisfied,
                }
            )
    inputs = {
        "data": file_sha256(ctx.workdir / "data" / "manifest.json"),
        "model": file_sha256(ctx.workdir / "model" / "manifest.json"),
    }
    write_manifest(out_dir, "cloak", ctx, inputs, outputs, {"entries": entries})
    ok = sum(1 for e in entries if e["constraint_satisfied"])
    click.echo(f"cloak: {len(entries)} images, {ok} within budget")


@main.command("purify")
@click.option("--source", type=click.Choice(["cloaked", "clean"]), default="cloaked")
@click.option("--artists", default=None, help="Comma-separated artist names.")
@click.option("--limit", type=int, default=None)
@click.option("--budget", type=float, default=None)
@click.option("--steps", type=int, default=None)
@click.pass_obj
@cli_errors
def cli_purify(ctx: Context, source, artists, limit, budget, steps):
    """Purify cloaked (or clean) images against the trained autoencoder."""
    data_manifest = load_manifest(ctx, "gen-data")
    model, metric = _load_model_and_metric(ctx)
    out_dir = ctx.workdir / "purified"
    outputs, entries = {}, []
    index = 0
    if source == "cloaked":
        cloak_manifest = load_manifest(ctx, "cloak")
        work = {}
        for e in cloak_manifest["meta"]["entries"]:
            work.setdefault(e["artist"], []).append(e)
        names = _parse_artists(artists, list(work.keys()))
        for name in names:
            if name not in work:
                raise ValidationError(f"no cloaked images for artist {name!r}")
    else:
        names = _parse_artists(artists, ctx.config["cloak"]["artists"])
    lim = int(limit) if limit is not None else None
    for name in names:
        if source == "cloaked":
            items = work[name][:lim] if lim else work[name]
            images = [load_image(ctx.workdir / f"cloaked/{name}/{e['index']:03d}.imf") for e in items]
            sources = [f"cloaked/{name}/{e['index']:03d}.imf" for e in items]
            originals = [e["source"] for e in items]
        else:
            imgs_all = _artist_images(ctx, data_manifest, name, "train")
            images = imgs_all[:lim] if lim else imgs_all
            sources = [f"data/{name}/train/{i:03d}.imf" for i in range(len(images))]
            originals = list(sources)
        payloads = []
        for img in images:
            payloads.append(
                (img, model, metric, ctx.opt_config("purify", index, budget=budget, steps=steps))
            )
            index += 1
        results = _map_indexed(_purify_one, payloads, ctx.jobs)
        (out_dir / name).mkdir(parents=True, exist_ok=True)
        for i, (img, res) in enumerate(zip(images, results)):
            rel = f"purified/{name}/{i:03d}.imf"
            save_image(res.output, ctx.workdir / rel, fmt="imf")
            outputs[rel] = file_sha256(ctx.workdir / rel)
            entries.append(
                {
                    "artist": name,
                    "index": i,
                    "source": sources[i],
                    "original": originals[i],
                    "purify_source": source,
                    "final_pd": res.final_pd,
                    "final_primary_loss": res.final_primary_loss,
                    "constraint_satisfied": res.constraint_satisfied,
                }
            )
    inputs = {
        "data": file_sha256(ctx.workdir / "data" / "manifest.json"),
        "model": file_sha256(ctx.workdir / "model" / "manifest.json"),
    }
    if source == "cloaked":
        inputs["cloaked"] = file_sha256(ctx.workdir / "cloaked" / "manifest.json")
    write_manifest(out_dir, "purify", ctx, inputs, outputs, {"entries": entries, "source": source})
    ok = sum(1 for e in entries if e["constraint_satisfied"])
    click.echo(f"purify: {len(entries)} images from {source}, {ok} within budget")


# ---------------------------------------------------------------------------
# Evaluation experiments


def _write_eval(ctx: Context, name: str, summary: dict, csv_rows: list, inputs: dict):
    reports = ctx.workdir / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    json_rel = f"reports/eval_{name}.json"
    csv_rel = f"reports/eval_{name}.csv"
    (ctx.workdir / json_rel).write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    lines = [",".join(str(v) for v in row) for row in csv_rows]
    (ctx.workdir / csv_rel).write_text("\n".join(lines) + "\n")
    manifest_rel = f"reports/eval_{name}.manifest.json"
    payload = {
        "stage": f"eval-{name}",
        "version": f"cloaklab {__version__}",
        "config": ctx.config,
        "inputs": inputs,
        "outputs": {
            json_rel: file_sha256(ctx.workdir / json_rel),
            csv_rel: file_sha256(ctx.workdir / csv_rel),
        },
    }
    (ctx.workdir / manifest_rel).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    click.echo(f"eval {name}: wrote {json_rel}")


def _eval_gap(ctx: Context):
    data_manifest = load_manifest(ctx, "gen-data")
    cloak_manifest = load_manifest(ctx, "cloak")
    model, _ = _load_model_and_metric(ctx)
    clean, treated = [], []
    for e in cloak_manifest["meta"]["entries"]:
        clean.append(load_image(ctx.workdir / e["source"]))
        treated.append(load_image(ctx.workdir / f"cloaked/{e['artist']}/{e['index']:03d}.imf"))
    report = gap_report(model, clean, treated)
    summary = {
        "experiment": "gap",
        "config": ctx.config,
        "n_clean": report.summary()["n_clean"],
        "n_treated": report.summary()["n_treated"],
        "mean_clean": report.mean_clean,
        "mean_treated": report.mean_treated,
        "cohens_d": report.cohens_d,
    }
    inputs = {
        "data": file_sha256(ctx.workdir / "data" / "manifest.json"),
        "cloaked": file_sha256(ctx.workdir / "cloaked" / "manifest.json"),
        "model": file_sha256(ctx.workdir / "model" / "manifest.json"),
    }
    _write_eval(ctx, "gap", summary, report.csv_rows(), inputs)


def _purified_by_artist(ctx: Context, manifest: dict):
    """Per artist: (clean original, purified) image pairs."""
    by_artist = {}
    for e in manifest["meta"]["entries"]:
        img = load_image(ctx.workdir / f"purified/{e['artist']}/{e['index']:03d}.imf")
        orig = load_image(ctx.workdir / e["original"])
        by_artist.setdefault(e["artist"], []).append((orig, img))
    return by_artist


def _eval_mimic(ctx: Context):
    data_manifest = load_manifest(ctx, "gen-data")
    purify_manifest = load_manifest(ctx, "purify")
    model, _ = _load_model_and_metric(ctx)
    by_artist = _purified_by_artist(ctx, purify_manifest)
    meta = {a["name"]: a for a in data_manifest["meta"]["artists"]}
    rows = [("artist", "in_pretraining", "mimic_clean", "mimic_purified", "degradation")]
    per_artist = {}
    for name, pairs in by_artist.items():
        holdout = _artist_images(ctx, data_manifest, name, "holdout")
        originals = [p[0] for p in pairs]
        purified = [p[1] for p in pairs]
        d_clean = mimic_breakdown(model, originals, holdout)
        d_pur = mimic_breakdown(model, purified, holdout)
        degr = d_pur["total"] - d_clean["total"]
        per_artist[name] = {
            "in_pretraining": meta[name]["in_pretraining"],
            "mimic_clean": d_clean,
            "mimic_purified": d_pur,
            "degradation": degr,
        }
        rows.append(
            (name, meta[name]["in_pretraining"], repr(d_clean["total"]), repr(d_pur["total"]), repr(degr))
        )
    pre = [v["degradation"] for v in per_artist.values() if v["in_pretraining"]]
    non = [v["degradation"] for v in per_artist.values() if not v["in_pretraining"]]
    summary = {
        "experiment": "mimic",
        "config": ctx.config,
        "artists": per_artist,
        "direction_non_historical_worse": bool(non and pre and min(non) > max(pre)),
    }
    inputs = {
        "data": file_sha256(ctx.workdir / "data" / "manifest.json"),
        "purified": file_sha256(ctx.workdir / "purified" / "manifest.json"),
        "model": file_sha256(ctx.workdir / "model" / "manifest.json"),
    }
    _write_eval(ctx, "mimic", summary, rows, inputs)


def _eval_texture(ctx: Context):
    data_manifest = load_manifest(ctx, "gen-data")
    purify_manifest = load_manifest(ctx, "purify")
    if purify_manifest["meta"]["source"] != "clean":
        raise ValidationError(
            "eval texture expects purified clean images; run `cloaklab purify --source clean`"
        )
    model, _ = _load_model_and_metric(ctx)
    by_artist = _purified_by_artist(ctx, purify_manifest)
    rows = [("artist", "index", "texture_retention")]
    per_artist = {}
    for name, pairs in by_artist.items():
        rets = [texture_retention(o, p) for o, p in pairs]
        holdout = _artist_images(ctx, data_manifest, name, "holdout")
        score_clean = mimic_breakdown(model, [p[0] for p in pairs], holdout)["total"]
        score_pur = mimic_breakdown(model, [p[1] for p in pairs], holdout)["total"]
        for i, r in enumerate(rets):
            rows.append((name, i, repr(r)))
        per_artist[name] = {
            "median_retention": float(np.median(rets)),
            "mimic_clean": score_clean,
            "mimic_purified": score_pur,
        }
    summary = {"experiment": "texture", "config": ctx.config, "artists": per_artist}
    inputs = {
        "data": file_sha256(ctx.workdir / "data" / "manifest.json"),
        "purified": file_sha256(ctx.workdir / "purified" / "manifest.json"),
    }
    _write_eval(ctx, "texture", summary, rows, inputs)


def _eval_smooth(ctx: Context):
    data_manifest = load_manifest(ctx, "gen-data")
    purify_manifest = load_manifest(ctx, "purify")
    if purify_manifest["meta"]["source"] != "cloaked":
        raise ValidationError(
            "eval smooth expects the cloak->purify pipeline; run `cloaklab purify --source cloaked`"
        )
    load_manifest(ctx, "cloak")
    model, _ = _load_model_and_metric(ctx)
    by_artist = _purified_by_artist(ctx, purify_manifest)
    meta = {a["name"]: a for a in data_manifest["meta"]["artists"]}
    rows = [("artist", "category", "artifact_ratio")]
    per_artist = {}
    for name, pairs in by_artist.items():
        corpus = _artist_images(ctx, data_manifest, name, "train") + _artist_images(
            ctx, data_manifest, name, "holdout"
        )
        baseline = float(np.mean([fine_band_energy(im) for im in corpus]))
        mean_artifact = float(np.mean([artifact_energy(o, p) for o, p in pairs]))
        ratio = mean_artifact / (baseline + 1e-10)
        category = meta[name]["smooth_category"]
        per_artist[name] = {"category": category, "artifact_ratio": ratio}
        rows.append((name, category, repr(ratio)))
    smooth = [v["artifact_ratio"] for v in per_artist.values() if v["category"] == "smooth"]
    textured = [v["artifact_ratio"] for v in per_artist.values() if v["category"] == "textured"]
    summary = {
        "experiment": "smooth",
        "config": ctx.config,
        "artists": per_artist,
        "direction_smooth_worse": bool(smooth and textured and min(smooth) > max(textured)),
    }
    inputs = {
        "data": file_sha256(ctx.workdir / "data" / "manifest.json"),
        "purified": file_sha256(ctx.workdir / "purified" / "manifest.json"),
    }
    _write_eval(ctx, "smooth", summary, rows, inputs)


def _eval_genre(ctx: Context):
    model, _ = _load_model_and_metric(ctx)
    gc = ctx.config["genre"]
    train_corpora, holdout_corpora = genre_corpora(
        ctx.master_seed, int(gc["n_train"]), int(gc["n_holdout"]), ctx.styles()
    )
    clf = train_genre_classifier(
        train_corpora,
        epochs=int(gc["epochs"]),
        lr=float(gc["lr"]),
        rng=Rng(derive_seed(ctx.master_seed, 0x6E0)),
    )
    images, labels = [], []
    for name, imgs in holdout_corpora.items():
        images.extend(imgs)
        labels.extend([name] * len(imgs))
    acc_clean = genre_accuracy(clf, images, labels)
    sigma = float(gc["blur_sigma"])
    blurred = [gaussian_blur(im, sigma) for im in images]
    acc_blur = genre_accuracy(clf, blurred, labels)
    retentions = [texture_retention(o, b) for o, b in zip(images, blurred)]
    rows = [("image_id", "genre", "pred_clean", "pred_blurred", "texture_retention")]
    for i, (img, blur, lab) in enumerate(zip(images, blurred, labels)):
        rows.append(
            (f"{lab}_{i:03d}", lab, clf.predict(img), clf.predict(blur), repr(retentions[i]))
        )
    summary = {
        "experiment": "genre",
        "config": ctx.config,
        "accuracy_clean": acc_clean,
        "accuracy_blurred": acc_blur,
        "blur_sigma": sigma,
        "median_texture_retention": float(np.median(retentions)),
        "n_holdout": len(images),
    }
    inputs = {"model": file_sha256(ctx.workdir / "model" / "manifest.json")}
    _write_eval(ctx, "genre", summary, rows, inputs)


@main.command("eval")
@click.option(
    "--experiment",
    type=click.Choice(["gap", "mimic", "genre", "texture", "smooth"]),
    required=True,
)
@click.pass_obj
@cli_errors
def cli_eval(ctx: Context, experiment):
    """Run one measurement experiment and write CSV + JSON reports."""
    {
        "gap": _eval_gap,
        "mimic": _eval_mimic,
        "genre": _eval_genre,
        "texture": _eval_texture,
        "smooth": _eval_smooth,
    }[experiment](ctx)


@main.command("report")
@click.pass_obj
@cli_errors
def cli_report(ctx: Context):
    """Aggregate stage manifests and eval summaries into one report."""
    reports = ctx.workdir / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    stages = {}
    for stage, d in _STAGE_DIRS.items():
        path = ctx.workdir / d / "manifest.json"
        if path.is_file():
            stages[stage] = file_sha256(path)
    evals = {}
    for path in sorted(reports.glob("eval_*.json")):
        evals[path.stem] = json.loads(path.read_text())
    if not stages and not evals:
        raise ValidationError("nothing to report; run some pipeline stages first")
    payload = {
        "version": f"cloaklab {__version__}",
        "config": ctx.config,
        "stages": stages,
        "evals": evals,
    }
    out = reports / "report.json"
    out.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    click.echo(f"report: {out} sha256={file_sha256(out)}")


if __name__ == "__main__":
    main()
