"""Command-line entry points."""

from __future__ import annotations

import json
import math
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import analytics, data, editing, persistence
from .model import D2AEModel, ModelConfig
from .objective import TrainConfig, train


@click.group()
def cli():
    """Identity distilling-and-dispelling autoencoder toolkit."""


@cli.command("gen-data")
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--n-id", type=int, default=16, show_default=True)
@click.option("--per-id", type=int, default=50, show_default=True)
@click.option("--size", type=int, default=32, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def gen_data(seed, n_id, per_id, size, out):
    """Generate the synthetic glyph-face dataset."""
    ds = data.generate(seed, n_id, per_id, size)
    data.save_dataset(ds, out)
    click.echo(f"wrote {len(ds)} samples ({n_id} identities) to {out}")


def _load_dataset(path) -> data.Dataset:
    p = Path(path)
    if (p / "manifest.json").exists():
        return data.load_dataset(p)
    return data.ingest_directory(p)


def _regen_if_synthetic(ds: data.Dataset) -> data.Dataset:
    # PNG storage quantizes to 8 bits; regenerate exact pixels when possible
    m = ds.manifest
    if m.seed >= 0 and m.samples_per_id > 0:
        return data.generate(m.seed, m.n_id, m.samples_per_id, m.size)
    return ds


@cli.command("train")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON file with TrainConfig and/or ModelConfig overrides.")
@click.option("--out-ckpt", type=click.Path(), required=True)
@click.option("--exact-pixels/--no-exact-pixels", default=True,
              help="Regenerate synthetic data instead of using 8-bit PNGs.")
def train_cmd(data_dir, config_path, out_ckpt, exact_pixels):
    """Train on a dataset directory and write a checkpoint."""
    ds = _load_dataset(data_dir)
    if exact_pixels:
        ds = _regen_if_synthetic(ds)
    overrides = json.loads(Path(config_path).read_text()) if config_path else {}
    tcfg = TrainConfig(**overrides.get("train", {}))
    mcfg_kw = {"n_id": int(ds.identities.max()) + 1,
               "input_size": ds.manifest.size}
    mcfg_kw.update(overrides.get("model", {}))
    mcfg = ModelConfig(**mcfg_kw)
    model = D2AEModel(mcfg, seed=tcfg.seed)
    x, y, _ = ds.subset("train")
    log_path = str(Path(out_ckpt).with_suffix(".log.jsonl"))
    records = train(model, (x, y), tcfg, log_path=log_path)
    persistence.save(model, None, out_ckpt, meta={
        "train_config": tcfg.to_dict(),
        "epochs_run": len(records),
        "final": records[-1] if records else {},
        "dataset": ds.manifest.to_dict() | {"splits": None},
    })
    click.echo(f"wrote checkpoint {out_ckpt} (final total loss "
               f"{records[-1]['total']:.4f})")


def _analytics_report(model, ds, include_verification=True, include_probes=True):
    report = {}
    test_imgs, _, _ = ds.subset("test")
    if include_verification:
        report["verification"] = analytics.verification_report(model, ds).to_dict()
    if include_probes and ds.has_factors:
        suite = analytics.probe_suite(model, ds)
        report["attribute_probes"] = suite["accuracy"]
        report["attribute_t_minus_p"] = suite["t_minus_p"]
    # channel statistics are label-free, so use every sample
    fa_t, fa_p = analytics.extract_features(model, ds.images)
    try:
        report["gaussianity"] = {"f_t": analytics.channel_gaussianity(fa_t),
                                 "f_p": analytics.channel_gaussianity(fa_p)}
        corr = analytics.channel_correlation(fa_t, fa_p)
        report["correlation"] = {
            "frac_below_0.3": corr["frac_below_0.3"],
            "abs_hist": corr["abs_hist"].tolist(),
            "degenerate_channels": corr["degenerate_channels"],
        }
    except ValueError:  # too few samples for stable channel statistics
        report["gaussianity"] = None
        report["correlation"] = None
    report["reconstruction_psnr"] = analytics.reconstruction_psnr(model, test_imgs)
    report["mean_yp_entropy"] = analytics.mean_prediction_entropy(model, test_imgs)
    return report


@cli.command("eval")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), help="Write the JSON report here.")
def eval_cmd(ckpt, data_dir, out):
    """Verification, attribute probes, Gaussianity, and correlation report."""
    model, _, _ = persistence.load(ckpt)
    ds = _regen_if_synthetic(_load_dataset(data_dir))
    report = _analytics_report(model, ds)
    text = json.dumps(report, indent=1)
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


@cli.command("stats")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
def stats_cmd(ckpt, data_dir):
    """Channel analytics only (Gaussianity + correlation)."""
    model, _, _ = persistence.load(ckpt)
    ds = _regen_if_synthetic(_load_dataset(data_dir))
    report = _analytics_report(model, ds, include_verification=False,
                               include_probes=False)
    click.echo(json.dumps(report, indent=1))


@cli.command("probe")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True,
              help="Checkpoint copy with probes attached.")
def probe_cmd(ckpt, data_dir, out):
    """Train attribute probes and attach per-branch directions for editing."""
    model, _, meta = persistence.load(ckpt)
    ds = _regen_if_synthetic(_load_dataset(data_dir))
    if not ds.has_factors:
        raise click.ClickException("dataset has no attribute factors")
    suite = analytics.probe_suite(model, ds)
    # keep the better per-branch probe per attribute; editing never uses "C"
    probes = {}
    for attr in data.ATTRIBUTES:
        t = suite["probes"].get((attr, "T"))
        p = suite["probes"].get((attr, "P"))
        best = max((pr for pr in (t, p) if pr is not None),
                   key=lambda pr: pr.accuracy, default=None)
        if best is None:
            click.echo(f"skipping {attr}: test split too small to probe")
            continue
        probes[attr] = best
    if not probes:
        raise click.ClickException("no attribute was probeable on this dataset")
    persistence.save(model, probes, out, meta=meta)
    acc = {a: round(pr.accuracy, 4) for a, pr in probes.items()}
    click.echo(f"wrote {out} with probes {acc}")


def _read_image(path, size):
    from PIL import Image
    img = Image.open(path).convert("RGB").resize((size, size), Image.BILINEAR)
    return (np.asarray(img, dtype=np.float32) / 255.0).transpose(2, 0, 1)


@cli.command("edit")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--attr", "attrs", multiple=True, metavar="NAME=ALPHA")
@click.option("--identity-image", type=click.Path(exists=True))
@click.option("--beta", type=float, default=None)
@click.option("--out", type=click.Path(), default="edited.png", show_default=True)
def edit_cmd(ckpt, image_path, attrs, identity_image, beta, out):
    """Apply attribute edits / identity interpolation to an image."""
    model, probes, _ = persistence.load(ckpt)
    if attrs and not probes:
        raise click.ClickException("checkpoint has no probes; run `d2ae probe` first")
    edits = []
    for spec in attrs:
        try:
            name, alpha = spec.split("=", 1)
            edits.append((name, float(alpha)))
        except ValueError:
            raise click.UsageError(f"bad --attr spec {spec!r}, want NAME=ALPHA")
    identity = None
    if identity_image is not None:
        if beta is None:
            raise click.UsageError("--identity-image requires --beta")
        fp_b = model.encode(_read_image(identity_image, model.config.input_size))
        identity = (fp_b.f_t, beta)
    req = editing.EditRequest(
        attribute_edits=edits, identity_target=identity,
        source_image=_read_image(image_path, model.config.input_size))
    img, provenance = editing.render_edit(model, probes, req)
    from PIL import Image
    arr = np.clip(img * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0)).save(out)
    click.echo(json.dumps({"out": str(out), "provenance": provenance}))


@cli.command("serve")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--probes", "probes_ckpt", type=click.Path(exists=True),
              help="Take probes from this checkpoint instead.")
@click.option("--data", "data_dir", type=click.Path(exists=True),
              help="Dataset directory backing the gallery endpoint.")
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve_cmd(ckpt, probes_ckpt, data_dir, port, host):
    """Run the HTTP inference/editing service."""
    import uvicorn

    from .service import build_app

    if probes_ckpt:
        model, probes, meta = persistence.load(ckpt)
        _, extra_probes, _ = persistence.load(probes_ckpt)
        persist_tmp = Path(ckpt).with_suffix(".with_probes.ckpt")
        persistence.save(model, extra_probes, persist_tmp, meta=meta)
        ckpt = persist_tmp
    ds = _regen_if_synthetic(_load_dataset(data_dir)) if data_dir else None
    port = int(os.environ.get("D2AE_PORT", port))
    uvicorn.run(build_app(ckpt, dataset=ds), host=host, port=port)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        return 1
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 2
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
