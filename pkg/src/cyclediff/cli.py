"""Command-line pipeline: data generation, training, translation, cycle
validation, the two-party protocol, patch processing, and metrics.

Exit codes: 0 success, 2 configuration error, 3 numeric/training failure,
4 protocol or file-format error.  Every run writes a JSON manifest next to
its outputs recording the resolved configuration and content hashes of all
inputs, so reruns are byte-reproducible.

Heavy imports happen inside the command functions so that `--threads`
can cap the BLAS pool before numpy loads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

_OUT_ENV = "CYCLEDIFF_OUT"


def _out_path(p: str | Path) -> Path:
    p = Path(p)
    base = os.environ.get(_OUT_ENV)
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def _hash_input(path: Path) -> str:
    if path.is_dir():
        h = hashlib.sha256()
        for f in sorted(path.iterdir()):
            if f.is_file():
                h.update(f.name.encode())
                h.update(hashlib.sha256(f.read_bytes()).digest())
        return h.hexdigest()
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(command: str, args: argparse.Namespace, inputs: list[Path], dest: Path):
    cfg = {k: str(v) if isinstance(v, Path) else v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": command,
        "config": cfg,
        "inputs": {str(p): _hash_input(Path(p)) for p in inputs if Path(p).exists()},
    }
    with open(dest, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def _manifest_dest(out: Path) -> Path:
    if out.suffix:
        return out.with_name(out.name + ".manifest.json")
    return out / "run_manifest.json"


def _parse_noise(spec: str):
    """Parse e.g. "gaussian:5,speckle:5" (sigmas on the 8-bit 0-255 scale)."""
    from .errors import ConfigError

    gaussian = speckle = 0.0
    if spec:
        for part in spec.split(","):
            name, _, val = part.partition(":")
            if name == "gaussian":
                gaussian = float(val) / 255.0
            elif name == "speckle":
                speckle = float(val) / 255.0
            else:
                raise ConfigError(f"unknown noise component {name!r}")
    return gaussian, speckle


def _parse_dims(spec: str) -> tuple[int, int]:
    h, _, w = spec.lower().partition("x")
    return int(h), int(w or h)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from . import synth_data

    if args.kind == "doc":
        gaussian, speckle = _parse_noise(args.noise)
        h, w = _parse_dims(args.size)
        clean_dir = _out_path(args.out_clean)
        noisy_dir = _out_path(args.out_noisy)
        clean_dir.mkdir(parents=True, exist_ok=True)
        noisy_dir.mkdir(parents=True, exist_ok=True)
        for i in range(args.count):
            clean = synth_data.render_strokes(args.seed + i, h, w, args.density)
            noisy = synth_data.degrade(
                clean,
                synth_data.DegradeConfig(
                    gaussian_sigma=gaussian, speckle_sigma=speckle, seed=args.seed + i
                ),
            )
            synth_data.save_patch(clean, clean_dir / f"doc_{i:05d}.pgm")
            synth_data.save_patch(noisy, noisy_dir / f"doc_{i:05d}.pgm")
        _write_manifest("gen-data", args, [], _manifest_dest(clean_dir))
        print(f"wrote {args.count} clean/noisy pairs to {clean_dir} and {noisy_dir}")
        return 0
    ps = synth_data.make_dataset(args.kind, args.n, args.seed)
    out = _out_path(args.output)
    synth_data.save_pointset_csv(ps, out)
    _write_manifest("gen-data", args, [], _manifest_dest(out))
    print(f"wrote {len(ps)} points ({args.kind}) to {out}")
    return 0


def _load_training_data(path: Path):
    import numpy as np

    from . import synth_data

    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".pgm", ".png"))
        return np.stack([synth_data.load_patch(p).pixels for p in files])
    return synth_data.load_pointset_csv(path).points


def cmd_train(args) -> int:
    import csv as _csv

    from . import diffusion
    from .net import ArchConfig

    data_path = Path(args.data)
    data = _load_training_data(data_path)
    dim = int(data[0].size)
    arch = ArchConfig(
        input_dim=dim,
        hidden=tuple(int(h) for h in args.hidden.split(",")),
        time_embed_dim=args.time_embed,
    )
    schedule = diffusion.make_schedule(args.T, args.schedule)
    cfg = diffusion.TrainConfig(
        steps=args.steps, batch_size=args.batch, lr=args.lr, seed=args.seed
    )
    result = diffusion.train(
        data, arch, cfg, schedule, domain_tag=args.domain_tag, data_shape=data.shape[1:]
    )
    out = _out_path(args.output)
    diffusion.save_checkpoint(result.model, out)
    if args.loss_csv:
        with open(_out_path(args.loss_csv), "w", newline="") as fh:
            wr = _csv.writer(fh)
            wr.writerow(["step", "loss"])
            for step, loss in result.curve:
                wr.writerow([step, repr(loss)])
    _write_manifest("train", args, [data_path], _manifest_dest(out))
    print(
        f"trained {args.domain_tag!r} for {args.steps} steps: held-out loss "
        f"{result.holdout_initial:.4f} -> {result.holdout_final:.4f}; checkpoint {out}"
    )
    return 0


def cmd_translate(args) -> int:
    import numpy as np

    from . import diffusion, patches, synth_data, pipeline

    src = diffusion.load_checkpoint(args.source_ckpt)
    tgt = diffusion.load_checkpoint(args.target_ckpt)
    pair = pipeline.DomainPair(src, tgt)
    in_path = Path(args.input)
    out = _out_path(args.output)

    if in_path.suffix.lower() == ".csv":
        ps = synth_data.load_pointset_csv(in_path)
        result = pipeline.translate(ps.points, pair, args.n_steps)
        import csv as _csv

        with open(out, "w", newline="") as fh:
            wr = _csv.writer(fh)
            wr.writerow(["x", "y", "label"])
            for row, lab in zip(result, ps.labels):
                wr.writerow([repr(float(row[0])), repr(float(row[1])), int(lab)])
        if args.cycle:
            rep = pipeline.cycle_check(ps.points, pair, args.n_steps)
            rep.to_csv(_out_path(args.cycle))
    else:
        files = (
            sorted(p for p in in_path.iterdir() if p.suffix.lower() in (".pgm", ".png"))
            if in_path.is_dir()
            else [in_path]
        )
        out.mkdir(parents=True, exist_ok=True)
        ph, pw = src.data_shape
        stride = args.stride or max(ph // 2, 1)
        for f in files:
            img = synth_data.load_patch(f).pixels
            if img.shape == tuple(src.data_shape):
                res = pipeline.translate(img[None], pair, args.n_steps)[0]
            else:
                grid = patches.slide_window(img, (ph, pw), stride)
                batch = np.stack(grid.patches)
                translated = pipeline.translate(batch, pair, args.n_steps)
                res = patches.stitch(grid.with_patches(list(translated)))
            synth_data.save_patch(
                synth_data.GrayPatch(np.clip(res, 0.0, 1.0)), out / f.name
            )
    _write_manifest(
        "translate", args, [Path(args.source_ckpt), Path(args.target_ckpt), in_path], _manifest_dest(out)
    )
    print(f"translated {in_path} -> {out}")
    return 0


def _scatter(points, labels, title: str, path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(points[:, 0], points[:, 1], c=labels, cmap="tab10", s=4, linewidths=0)
    ax.set_title(title)
    ax.set_aspect("equal")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def cmd_cycle(args) -> int:
    from . import diffusion, synth_data, pipeline

    ps = synth_data.load_pointset_csv(args.data)
    if args.stub_eps0:
        schedule = diffusion.make_schedule(args.T, "linear-beta")
        src = diffusion.zero_model(schedule, (2,), "stub-source")
        tgt = diffusion.zero_model(schedule, (2,), "stub-target")
    else:
        src = diffusion.load_checkpoint(args.source_ckpt)
        tgt = diffusion.load_checkpoint(args.target_ckpt)
    pair = pipeline.DomainPair(src, tgt)
    outdir = _out_path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)

    stages = pipeline.cycle_stages(ps.points, pair, args.n_steps)
    rep = pipeline.cycle_report_from_stages(ps.points, stages, pair, args.n_steps)
    rep.to_csv(outdir / "cycle_report.csv")
    for name, pts in [
        ("source", ps.points),
        ("latent", stages.latent),
        ("target", stages.target),
        ("reconstructed", stages.source_back),
    ]:
        _scatter(pts, ps.labels, name, outdir / f"{name}.png")
    inputs = [Path(args.data)]
    if not args.stub_eps0:
        inputs += [Path(args.source_ckpt), Path(args.target_ckpt)]
    _write_manifest("cycle", args, inputs, _manifest_dest(outdir))
    print(
        f"cycle {rep.source_domain}->{rep.target_domain}: mean latent L2 "
        f"{rep.mean_latent_l2:.6f}, mean source L2 {rep.mean_source_l2:.6f}"
    )
    return 0


def cmd_party(args) -> int:
    from . import pipeline
    from .pipeline import PartyRole

    role = PartyRole(args.role)
    if args.party_op == "encode":
        out = _out_path(args.output)
        pipeline.party_encode(
            role, args.data, args.ckpt, out, n_steps=args.n_steps, audit_log_path=args.audit
        )
        _write_manifest("party-encode", args, [Path(args.data), Path(args.ckpt)], _manifest_dest(out))
        print(f"encoded {args.data} -> {out}")
    else:
        out = _out_path(args.output)
        pipeline.party_decode(role, args.latent, args.ckpt, out, audit_log_path=args.audit)
        _write_manifest("party-decode", args, [Path(args.latent), Path(args.ckpt)], _manifest_dest(out))
        print(f"decoded {args.latent} -> {out}")
    return 0


def cmd_metrics(args) -> int:
    from . import metrics, synth_data

    ref_path, test_path = Path(args.ref), Path(args.test)
    if ref_path.is_dir() != test_path.is_dir():
        raise ValueError("--ref and --test must both be files or both directories")
    if ref_path.is_dir():
        ref_files = sorted(p for p in ref_path.iterdir() if p.suffix.lower() in (".pgm", ".png"))
        test_files = sorted(p for p in test_path.iterdir() if p.suffix.lower() in (".pgm", ".png"))
        if len(ref_files) != len(test_files):
            raise ValueError(
                f"directory pair counts differ: {len(ref_files)} vs {len(test_files)}"
            )
        pairs = list(zip(ref_files, test_files))
    else:
        pairs = [(ref_path, test_path)]
    rows = []
    for rf, tf in pairs:
        ref = synth_data.load_patch(rf)
        test = synth_data.load_patch(tf)
        rows.append(
            (tf.name, metrics.MetricReport(psnr_db=metrics.psnr(ref, test), ssim=metrics.ssim(ref, test)))
        )
    out = _out_path(args.output)
    metrics.save_metrics_csv(rows, out)
    _write_manifest("metrics", args, [ref_path, test_path], _manifest_dest(out))
    mean_psnr = sum(r.psnr_db for _, r in rows) / len(rows)
    mean_ssim = sum(r.ssim for _, r in rows) / len(rows)
    print(f"{len(rows)} pairs: mean PSNR {mean_psnr:.2f} dB, mean SSIM {mean_ssim:.4f}")
    print("OCR accuracy: n/a (external OCR tooling is out of scope)")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cyclediff", description=__doc__)
    p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate 2D point sets or document patch pairs")
    g.add_argument("--kind", required=True, help="tm|cb|cr|cs|pr|ps|doc")
    g.add_argument("--n", type=int, default=4096)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", default="data.csv")
    g.add_argument("--count", type=int, default=100, help="doc: number of patch pairs")
    g.add_argument("--size", default="64x64", help="doc: patch dims HxW")
    g.add_argument("--density", type=float, default=0.1, help="doc: target ink fraction")
    g.add_argument("--noise", default="gaussian:5,speckle:5", help="doc: 8-bit sigmas")
    g.add_argument("--out-clean", default="clean")
    g.add_argument("--out-noisy", default="noisy")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one domain's diffusion model")
    t.add_argument("--data", required=True, help="PointSet CSV or patch directory")
    t.add_argument("--domain-tag", required=True)
    t.add_argument("--T", type=int, default=1000)
    t.add_argument("--schedule", default="linear-beta", choices=["linear-beta", "cosine"])
    t.add_argument("--hidden", default="128,128,128")
    t.add_argument("--time-embed", type=int, default=64)
    t.add_argument("--steps", type=int, default=20000)
    t.add_argument("--batch", type=int, default=128)
    t.add_argument("--lr", type=float, default=2e-4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("-o", "--output", required=True, help="checkpoint path")
    t.add_argument("--loss-csv", default=None)
    t.set_defaults(func=cmd_train)

    tr = sub.add_parser("translate", help="translate samples source -> target")
    tr.add_argument("--source-ckpt", required=True)
    tr.add_argument("--target-ckpt", required=True)
    tr.add_argument("--input", required=True, help="CSV, image file, or image directory")
    tr.add_argument("--n-steps", type=int, default=200)
    tr.add_argument("--stride", type=int, default=None, help="slide-window stride for large images")
    tr.add_argument("--cycle", default=None, help="also write a cycle report CSV here")
    tr.add_argument("-o", "--output", required=True)
    tr.set_defaults(func=cmd_translate)

    c = sub.add_parser("cycle", help="cycle-consistency report and scatter plots")
    c.add_argument("--source-ckpt")
    c.add_argument("--target-ckpt")
    c.add_argument("--data", required=True)
    c.add_argument("--n-steps", type=int, default=200)
    c.add_argument("--stub-eps0", action="store_true", help="use zero-noise stub models")
    c.add_argument("--T", type=int, default=1000, help="schedule T for stub models")
    c.add_argument("-o", "--output", required=True, help="output directory")
    c.set_defaults(func=cmd_cycle)

    pa = sub.add_parser("party", help="two-party latent exchange")
    pasub = pa.add_subparsers(dest="party_op", required=True)
    pe = pasub.add_parser("encode")
    pe.add_argument("--role", required=True, help="must be encoder-a")
    pe.add_argument("--data", required=True)
    pe.add_argument("--ckpt", required=True)
    pe.add_argument("--n-steps", type=int, default=200)
    pe.add_argument("--audit", default=None)
    pe.add_argument("-o", "--output", required=True)
    pe.set_defaults(func=cmd_party)
    pd = pasub.add_parser("decode")
    pd.add_argument("--role", required=True, help="must be decoder-b")
    pd.add_argument("--latent", required=True)
    pd.add_argument("--ckpt", required=True)
    pd.add_argument("--audit", default=None)
    pd.add_argument("-o", "--output", required=True)
    pd.set_defaults(func=cmd_party)

    m = sub.add_parser("metrics", help="PSNR/SSIM between reference and test images")
    m.add_argument("--ref", required=True)
    m.add_argument("--test", required=True)
    m.add_argument("-o", "--output", required=True)
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from .errors import (
        ConfigError,
        NumericError,
        ProtocolError,
        TrainingDivergedError,
    )

    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, TrainingDivergedError) as exc:
        print(f"numeric/training error: {exc}", file=sys.stderr)
        return 3
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
