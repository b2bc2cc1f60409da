"""Command-line entry point: ``muxdetect <command> [--config PATH] [--seed S] [--out DIR]``.

Every command writes JSON and CSV tables (each carrying the config hash),
PNG figures rendered from those tables, and a ``<command>.meta.json``
reproducibility record. Existing outputs are never replaced without
``--force``. Exit status is 0 on success, 1 on a user error (bad config,
bad input, missing file) and 2 on an internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
import traceback
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from muxdetect import __version__
from muxdetect.config import ExperimentConfig, build_synthetic, canonical_json, load_config
from muxdetect.errors import ConfigError, MuxDetectError

log = logging.getLogger("muxdetect")

COMMANDS = (
    "gen-data", "train", "finetune", "eval", "sweep-degrade", "sweep-misalign",
    "attack", "crosstalk", "energy", "export-figures",
)
SPLITS = ("train", "test", "finetune")


class UsageError(MuxDetectError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, torch.Tensor):
        return _jsonable(obj.detach().cpu().tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, Path):
        return str(obj)
    return obj


class Outputs:
    """Single owner of everything a command writes under the output directory."""

    def __init__(self, cfg: ExperimentConfig, command: str, force: bool):
        self.cfg = cfg
        self.command = command
        self.force = force
        self.root = cfg.out_dir
        self.written: list[str] = []
        record = self.root / f"{command}.meta.json"
        if record.exists() and not force:
            raise UsageError(f"{record} exists; re-run with --force to overwrite")
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.root / name
        if p.exists() and not self.force:
            raise UsageError(f"{p} exists; re-run with --force to overwrite")
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(name)
        return p

    def json(self, name: str, payload: dict) -> Path:
        p = self.path(name)
        body = {"config_hash": self.cfg.hash, **_jsonable(payload)}
        p.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return p

    def csv(self, name: str, rows: Sequence[dict]) -> Path:
        p = self.path(name)
        fields = ["config_hash"]
        for r in rows:
            fields += [k for k in r if k not in fields]
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\r\n")
            w.writeheader()
            for r in rows:
                w.writerow({"config_hash": self.cfg.hash, **{k: _csv_cell(v) for k, v in r.items()}})
        return p

    def png_meta(self) -> dict:
        return {"Description": f"config_hash={self.cfg.hash}", "Software": f"muxdetect {__version__}"}

    def finish(self, argv: Sequence[str], seeds: dict) -> None:
        record = {
            "command": self.command,
            "argv": list(argv),
            "config_hash": self.cfg.hash,
            "config": self.cfg.raw,
            "seeds": seeds,
            "versions": {
                "muxdetect": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "torch": torch.__version__,
            },
            "outputs": self.written,
        }
        (self.root / f"{self.command}.meta.json").write_text(
            json.dumps(_jsonable(record), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return canonical_json(_jsonable(v))
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---- data and model plumbing ------------------------------------------------


def load_split(cfg: ExperimentConfig, split: str, data_dir: Optional[str]):
    from muxdetect.data import ingest, synth_dataset

    manifest = cfg.data.get(f"{split}_manifest")
    if data_dir is not None:
        manifest = Path(data_dir) / split / "manifest.json"
    if manifest:
        return ingest(manifest)
    return synth_dataset(build_synthetic(cfg.data[split]))


def build_model(cfg: ExperimentConfig):
    from muxdetect.decoder import DiffractiveStack
    from muxdetect.encoder import Encoder
    from muxdetect.model import HybridModel

    lay = cfg.layout
    st = cfg.stack
    band, pad = bool(st.get("band_limit", True)), int(st.get("pad_factor", 2))
    if st.get("distances") is None:
        return HybridModel.build(lay, cfg.K, seed=cfg.seed, encoder_config=cfg.encoder, band_limit=band, pad_factor=pad)
    stack = DiffractiveStack(cfg.K, [float(d) for d in st["distances"]], lay.slm_rows, lay.slm_cols, lay.slm_pitch,
                             band_limit=band, pad_factor=pad)
    return HybridModel(lay, Encoder(cfg.encoder, seed=cfg.seed), stack)


def model_from(cfg: ExperimentConfig, checkpoint: Optional[str], required: bool = False):
    from muxdetect.checkpoint import load_checkpoint

    if checkpoint:
        if not Path(checkpoint).exists():
            raise UsageError(f"checkpoint {checkpoint} not found")
        return load_checkpoint(checkpoint)
    if required:
        raise UsageError("this command needs --checkpoint")
    log.warning("no checkpoint given; using an untrained model built from the config")
    return build_model(cfg), {}


# ---- commands ---------------------------------------------------------------


def cmd_gen_data(cfg, out, args):
    from muxdetect.data import gen_synthetic

    summary = {}
    for split in SPLITS:
        syn = build_synthetic(cfg.data[split])
        target = cfg.out_dir / "data" / split
        if (target / "manifest.json").exists() and not args.force:
            raise UsageError(f"{target} already holds a dataset; use --force")
        manifest = gen_synthetic(syn, target, extra={"config_hash": cfg.hash})
        summary[split] = {"path": str(target / "manifest.json"), "videos": len(manifest["entries"]), "generator": syn.to_dict()}
        out.written.append(f"data/{split}/manifest.json")
    out.json("datasets.json", summary)
    return {split: cfg.data[split].get("seed") for split in SPLITS}


def _history_rows(history) -> list[dict]:
    d = history.to_dict()
    n = max((len(v) for v in d.values() if isinstance(v, list)), default=0)
    return [{k: (v[i] if isinstance(v, list) and i < len(v) else None) for k, v in d.items() if isinstance(v, list)}
            for i in range(n)]


def cmd_train(cfg, out, args):
    from muxdetect.checkpoint import save_checkpoint
    from muxdetect.trainer import train

    ds = load_split(cfg, "train", args.data)
    trained, history = train(build_model(cfg), ds, cfg.train)
    save_checkpoint(trained, out.path("model.ckpt"), extra={"config_hash": cfg.hash, "steps": history.steps})
    out.json("history.json", history.to_dict())
    out.csv("history.csv", _history_rows(history))
    return {"train": cfg.train.seed}


def cmd_finetune(cfg, out, args):
    from muxdetect.checkpoint import save_checkpoint
    from muxdetect.trainer import fine_tune

    model, extra = model_from(cfg, args.checkpoint, required=True)
    full = cfg.harness.get("full_steps") or extra.get("steps")
    if not full:
        raise UsageError("fine-tuning needs harness.full_steps or a checkpoint that records its step count")
    ds = load_split(cfg, "finetune", args.data)
    tuned, history = fine_tune(model, ds, cfg.train, int(full))
    save_checkpoint(tuned, out.path("model_finetuned.ckpt"), extra={"config_hash": cfg.hash, "base": str(args.checkpoint)})
    out.json("finetune_history.json", history.to_dict())
    return {"train": cfg.train.seed}


def _distribution_rows(dist: dict) -> tuple[list[dict], list[dict]]:
    edges = dist["edges"]
    hist = [{"bin_lo": float(edges[i]), "bin_hi": float(edges[i + 1]),
             "count_real": int(dist["counts_real"][i]), "count_fake": int(dist["counts_fake"][i])}
            for i in range(len(edges) - 1)]
    cdf = [{"x": float(x), "cdf_real": float(r), "cdf_fake": float(f)}
           for x, r, f in zip(dist["cdf_x"], dist["cdf_real"], dist["cdf_fake"])]
    return hist, cdf


def _distribution_from_rows(hist: list[dict], cdf: list[dict]) -> dict:
    edges = [float(hist[0]["bin_lo"])] + [float(r["bin_hi"]) for r in hist]
    return {
        "edges": np.array(edges),
        "counts_real": np.array([int(r["count_real"]) for r in hist]),
        "counts_fake": np.array([int(r["count_fake"]) for r in hist]),
        "cdf_x": np.array([float(r["x"]) for r in cdf]),
        "cdf_real": np.array([float(r["cdf_real"]) for r in cdf]),
        "cdf_fake": np.array([float(r["cdf_fake"]) for r in cdf]),
    }


def cmd_eval(cfg, out, args):
    from muxdetect.metrics import auroc, export_distributions
    from muxdetect.errors import UndefinedMetricError
    from muxdetect import plotting
    from muxdetect.trainer import evaluate

    model, _ = model_from(cfg, args.checkpoint)
    ds = load_split(cfg, "test", args.data)
    seed = int(cfg.harness["eval_seed"])
    res = evaluate(model, ds, seed=seed)
    rep = res.report(cfg.layout.L)
    real, fake = res.scores[res.labels == 0], res.scores[res.labels == 1]
    try:
        auc = auroc(res.scores, res.labels)
    except UndefinedMetricError:
        auc = None
    dist = export_distributions(real, fake, bins=int(cfg.harness["bins"]))
    hist, cdf = _distribution_rows(dist)
    out.json("metrics.json", {"report": rep.to_dict(), "auroc": auc, "n_videos": len(ds)})
    out.csv("channels.csv", [c.to_dict() for c in rep.channels])
    out.csv("scores.csv", [{"video": ds.ids[j], "channel": int(res.channels[j]), "label": int(res.labels[j]),
                            "score": float(res.scores[j]), "decision": int(res.decisions[j])} for j in range(len(ds))])
    out.csv("score_histogram.csv", hist)
    out.csv("score_cdf.csv", cdf)
    ks = rep.overall.ks if rep.overall else None
    plotting.plot_distributions(dist, out.path("score_distributions.png"), ks=ks, metadata=out.png_meta())
    plotting.plot_channel_metrics(rep.to_dict(), out.path("channel_metrics.png"), metadata=out.png_meta())
    return {"eval": seed}


def cmd_sweep_degrade(cfg, out, args):
    from muxdetect import plotting
    from muxdetect.harness.sweeps import degradation_sweep

    model, _ = model_from(cfg, args.checkpoint)
    ds = load_split(cfg, "test", args.data)
    h = cfg.harness
    sweeps = {"gaussian_noise": h["noise_sigmas"], "gaussian_blur": h["blur_sigmas"], "jpeg": h["jpeg_qualities"]}
    labels = {"gaussian_noise": "noise sigma", "gaussian_blur": "blur sigma (px)", "jpeg": "JPEG quality"}
    for kind, mags in sweeps.items():
        rows = degradation_sweep(model, ds, kind, mags, seed=cfg.seed, eval_seed=int(h["eval_seed"]))
        out.csv(f"degrade_{kind}.csv", rows)
        plotting.plot_sweep(rows, "magnitude", out.path(f"degrade_{kind}.png"), xlabel=labels[kind], metadata=out.png_meta())
    return {"perturb": cfg.seed, "eval": int(h["eval_seed"])}


def cmd_sweep_misalign(cfg, out, args):
    from muxdetect import plotting
    from muxdetect.harness.sweeps import misalignment_sweep

    model, _ = model_from(cfg, args.checkpoint)
    ds = load_split(cfg, "test", args.data)
    h = cfg.harness
    lateral = [(float(d), 0.0) for d in h["lateral_grid_um"]]
    rows = misalignment_sweep(model, ds, lateral, h["axial_grid_um"], eval_seed=int(h["eval_seed"]))
    out.csv("misalign.csv", rows)
    flat = [r for r in rows if r["dz_um"] == float(h["axial_grid_um"][0])]
    plotting.plot_sweep(flat, "dx_um", out.path("misalign_lateral.png"), xlabel="lateral shift (um)", metadata=out.png_meta())
    on_axis = [r for r in rows if r["dx_um"] == 0.0]
    if on_axis:
        plotting.plot_sweep(on_axis, "dz_um", out.path("misalign_axial.png"), xlabel="axial shift (um)", metadata=out.png_meta())
    return {"eval": int(h["eval_seed"])}


def cmd_attack(cfg, out, args):
    from muxdetect import plotting
    from muxdetect.checkpoint import load_checkpoint
    from muxdetect.harness.attacks import DigitalDetector, attack_eval, craft_attacks, evaluate_logits, fit_classifier
    from muxdetect.trainer import evaluate

    h = cfg.harness
    train_ds = load_split(cfg, "train", args.data)
    test_ds = load_split(cfg, "test", args.data)
    eps = [float(e) / 255.0 for e in h["epsilons_255"]]
    N = cfg.layout.N
    eval_seed = int(h["eval_seed"])
    victims = {}
    models = {}
    if args.checkpoint:
        models["hybrid"] = model_from(cfg, args.checkpoint, required=True)[0]
    for name, path in (h.get("victim_checkpoints") or {}).items():
        models[name] = load_checkpoint(path)[0]
    for name, m in models.items():
        victims[name] = lambda ds, p, m=m: evaluate(m, ds, seed=eval_seed, perturb=p)
    digital = fit_classifier(DigitalDetector(cfg.encoder, seed=cfg.seed), train_ds, N,
                             epochs=int(h["digital_epochs"]), seed=cfg.seed)
    victims["digital"] = lambda ds, p: evaluate_logits(digital, ds, N, seed=eval_seed, perturb=p)
    attacks = craft_attacks(train_ds, [e for e in eps if e > 0], n_attackers=int(h["n_attackers"]), N=N,
                            fraction=float(h["subset_fraction"]), surrogate_epochs=int(h["surrogate_epochs"]),
                            epochs=int(h["attack_epochs"]), seed=cfg.seed)
    bounds = []
    for e, results in attacks.items():
        for m, r in enumerate(results, start=1):
            linf = float(np.abs(r.delta).max())
            bounds.append({"epsilon": e, "attacker": m, "linf": linf, "within_bound": linf <= e,
                           "surrogate_loss_before": r.surrogate_loss_before, "surrogate_loss_after": r.surrogate_loss_after})
    rows = attack_eval(victims, attacks, test_ds, eps)
    out.csv("attack.csv", rows)
    out.csv("attack_deltas.csv", bounds)
    for name in victims:
        sub = [r for r in rows if r["model"] == name]
        plotting.plot_sweep(sub, "epsilon_255", out.path(f"attack_{name}.png"), xlabel="epsilon x 255",
                            title=name, metadata=out.png_meta())
    return {"attack": cfg.seed, "eval": eval_seed}


def cmd_crosstalk(cfg, out, args):
    from muxdetect import plotting
    from muxdetect.muxlayout import crosstalk_matrix

    if args.checkpoint:
        model, _ = model_from(cfg, args.checkpoint, required=True)
        layout, stack = model.layout, model.stack
    else:
        model = build_model(cfg)
        layout, stack = model.layout, model.stack
    M = crosstalk_matrix(layout, stack).numpy()
    diag = np.diag(M)
    off = M - np.diag(diag)
    summary = {
        "L": layout.L,
        "diagonal_dominant": bool(np.all(diag > off.sum(axis=1))),
        "max_row_sum": float(M.sum(axis=1).max()),
        "max_off_diagonal": float(off.max()),
        "min_diagonal": float(diag.min()),
        "matrix": M,
    }
    out.json("crosstalk.json", summary)
    out.csv("crosstalk.csv", [{"lit_tile": u, **{f"pair_{v}": float(M[u, v]) for v in range(layout.L)}} for u in range(layout.L)])
    plotting.plot_crosstalk(M, out.path("crosstalk.png"), metadata=out.png_meta())
    return {}


def cmd_energy(cfg, out, args):
    from muxdetect.harness.energy import energy_report

    layout = stack = None
    measured = None
    if args.checkpoint:
        model, _ = model_from(cfg, args.checkpoint, required=True)
        layout, stack = model.layout, model.stack
        if cfg.use_measured_flops:
            measured = model.encoder.flops_per_frame()
    rep = energy_report(cfg.energy, layout, stack, flops_per_frame_measured=measured)
    out.json("energy.json", rep.to_dict())
    out.csv("energy.csv", rep.rows())
    for row in rep.rows():
        if row["unit"] == "mJ":
            print(f"{row['quantity']}: {row['low']:.4g}-{row['high']:.4g} mJ")
    return {}


def cmd_export_figures(cfg, out, args):
    """Re-render every figure from the tables already present in the output directory."""
    from muxdetect import plotting

    root = cfg.out_dir
    made = 0
    if (root / "score_histogram.csv").exists() and (root / "score_cdf.csv").exists():
        dist = _distribution_from_rows(read_csv(root / "score_histogram.csv"), read_csv(root / "score_cdf.csv"))
        ks = None
        if (root / "metrics.json").exists():
            overall = json.loads((root / "metrics.json").read_text())["report"]["overall"]
            ks = overall["ks"] if overall else None
        plotting.plot_distributions(dist, out.path("figures/score_distributions.png"), ks=ks, metadata=out.png_meta())
        made += 1
    for p in sorted(root.glob("degrade_*.csv")):
        rows = [_numeric(r) for r in read_csv(p)]
        plotting.plot_sweep(rows, "magnitude", out.path(f"figures/{p.stem}.png"), metadata=out.png_meta())
        made += 1
    if (root / "misalign.csv").exists():
        rows = [_numeric(r) for r in read_csv(root / "misalign.csv")]
        dz0 = min(r["dz_um"] for r in rows)
        plotting.plot_sweep([r for r in rows if r["dz_um"] == dz0], "dx_um", out.path("figures/misalign_lateral.png"),
                            metadata=out.png_meta())
        made += 1
    if (root / "crosstalk.json").exists():
        M = np.array(json.loads((root / "crosstalk.json").read_text())["matrix"])
        plotting.plot_crosstalk(M, out.path("figures/crosstalk.png"), metadata=out.png_meta())
        made += 1
    if (root / "attack.csv").exists():
        rows = [_numeric(r) for r in read_csv(root / "attack.csv")]
        for name in sorted({r["model"] for r in rows}):
            plotting.plot_sweep([r for r in rows if r["model"] == name], "epsilon_255",
                                out.path(f"figures/attack_{name}.png"), title=name, metadata=out.png_meta())
            made += 1
    if made == 0:
        raise UsageError(f"no result tables found under {root}")
    return {}


def _numeric(row: dict) -> dict:
    out = {}
    for k, v in row.items():
        if v == "":
            out[k] = None
            continue
        try:
            out[k] = float(v)
        except ValueError:
            out[k] = v
    return out


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "sweep-degrade": cmd_sweep_degrade,
    "sweep-misalign": cmd_sweep_misalign,
    "attack": cmd_attack,
    "crosstalk": cmd_crosstalk,
    "energy": cmd_energy,
    "export-figures": cmd_export_figures,
}


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="muxdetect", description="Multiplexed hybrid optical-digital video detector experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--threads", type=int, help="torch intra-op threads")
    p.add_argument("--checkpoint", help="model checkpoint to load")
    p.add_argument("--data", help="directory written by gen-data (uses <dir>/<split>/manifest.json)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = make_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be >= 1")
            torch.set_num_threads(args.threads)
        if args.seed is not None and args.seed < 0:
            raise UsageError("--seed must be non-negative")
        cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
        out = Outputs(cfg, args.command, args.force)
        seeds = HANDLERS[args.command](cfg, out, args)
        out.finish(argv, {"master": cfg.seed, **(seeds or {})})
    except (MuxDetectError, ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"muxdetect: error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
