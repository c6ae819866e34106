"""Command line entry point.

Results go to stdout, progress and diagnostics to stderr, and every error
path exits nonzero. Subcommands cover the full pipeline: dataset synthesis,
joint training, embedding extraction, comparison, conversion, spectral
distortion, frontend feature extraction, and the gradient audit.
"""

import argparse
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgmod
from . import frontend, gradcheck, vc
from .errors import VoxkitError
from .metrics import cosine, mcd
from .pooling import read_embeddings, write_embeddings


def _log(msg):
    print(msg, file=sys.stderr)


def _load_run_config(args):
    cfg = cfgmod.load_config(args.config) if args.config else cfgmod.default_config()
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
        cfg.validate()
    return cfg


def _load_mel(path, n_mels=None):
    """Accepts either a mel cache or a 16 kHz WAV (featurized on the fly)."""
    if str(path).endswith(".wav"):
        return frontend.melspec(frontend.load_wav(path),
                                n_bands=n_mels or frontend.N_BANDS).data
    return frontend.load_mel_cache(path)


def _restore_model(cfg, ckpt_path):
    params, model = vc.build_converter(cfg.training_config(), cfg.frontend.n_mels)
    ckpt.load_checkpoint(ckpt_path, params, config_hash=cfg.hash(),
                         variant=cfg.encoder.variant)
    return params, model


def cmd_gradcheck(args):
    components = args.components.split(",") if args.components else None
    rows = gradcheck.run_suite(n_seeds=args.seeds, components=components)
    if components and len(rows) != len(components):
        found = {name for name, _, _, _ in rows}
        raise VoxkitError(
            f"unknown component(s): {sorted(set(components) - found)}")
    failed = 0
    for name, worst, tol, ok in rows:
        print(f"{name:28s} worst={worst:.3e} tol={tol:.0e} {'PASS' if ok else 'FAIL'}")
        failed += 0 if ok else 1
    if failed:
        _log(f"{failed} component(s) failed the gradient audit")
    return 1 if failed else 0


def cmd_gen_data(args):
    ds = vc.gen_toy_dataset(args.speakers, args.utterances, seed=args.seed,
                            n_bands=args.bands, min_frames=args.min_frames,
                            max_frames=args.max_frames)
    vc.save_dataset(ds, args.out)
    print(f"wrote {len(ds.utterances)} utterances from {args.speakers} speakers "
          f"to {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_run_config(args)
    ds = vc.load_dataset(args.data)
    if ds.n_bands != cfg.frontend.n_mels:
        raise VoxkitError(
            f"dataset has {ds.n_bands} mel bands but config says {cfg.frontend.n_mels}")
    tcfg = cfg.training_config()
    _log(f"training variant={tcfg.variant} steps={tcfg.steps} seed={tcfg.seed}")
    params, model, losses = vc.train_joint(ds, tcfg)
    ckpt.save_checkpoint(args.out, params, tcfg.variant, cfg.hash())
    loss_path = args.out + ".loss.csv"
    with open(loss_path, "w", encoding="ascii") as fh:
        fh.write(vc.loss_curve_csv(losses))
    if losses:
        print(f"initial_loss {losses[0][1]:.6f}")
        print(f"final_loss {losses[-1][1]:.6f}")
    print(f"checkpoint {args.out}")
    print(f"loss_log {loss_path}")
    return 0


def cmd_features(args):
    mel = frontend.melspec(frontend.load_wav(args.wav), n_bands=args.bands)
    frontend.save_mel_cache(args.out, mel)
    print(f"{mel.data.shape[0]} frames x {mel.data.shape[1]} bands -> {args.out}")
    return 0


def cmd_embed(args):
    cfg = _load_run_config(args)
    _, model = _restore_model(cfg, args.ckpt)
    records = []
    for path in args.inputs:
        utt_id = os.path.splitext(os.path.basename(path))[0]
        records.append((utt_id, model.encoder.embed(_load_mel(path, cfg.frontend.n_mels))))
    if args.out:
        write_embeddings(args.out, records)
        print(f"wrote {len(records)} embeddings to {args.out}")
    else:
        from .pooling import format_embedding_record
        for utt_id, emb in records:
            print(format_embedding_record(utt_id, emb))
    return 0


def _single_embedding(path):
    records = read_embeddings(path)
    if len(records) != 1:
        raise VoxkitError(
            f"{path} holds {len(records)} embeddings; pick one per file for compare")
    return records[0][1]


def cmd_compare(args):
    value = cosine(_single_embedding(args.a), _single_embedding(args.b))
    print(f"{value:.6f}")
    return 0


def cmd_convert(args):
    cfg = _load_run_config(args)
    _, model = _restore_model(cfg, args.ckpt)
    out = model.convert(_load_mel(args.src, cfg.frontend.n_mels),
                        _load_mel(args.tgt, cfg.frontend.n_mels))
    frontend.save_mel_cache(args.out, out)
    print(f"{out.shape[0]} frames x {out.shape[1]} bands -> {args.out}")
    return 0


def cmd_mcd(args):
    result = mcd(_load_mel(args.a), _load_mel(args.b))
    print(f"{result.mean_db:.4f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="voxkit",
        description="differentiable speaker encoder and toy voice conversion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference audit of every module")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--components", help="comma-separated subset to check")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("gen-data", help="synthesize a toy multi-speaker dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int, default=8)
    p.add_argument("--utterances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bands", type=int, default=256)
    p.add_argument("--min-frames", type=int, default=64)
    p.add_argument("--max-frames", type=int, default=256)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="jointly train converter and speaker encoder")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint manifest path")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("features", help="WAV -> log-mel cache")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bands", type=int, default=256)
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("embed", help="mel caches or WAVs -> embedding records")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("compare", help="cosine between two stored embeddings")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("convert", help="one-shot conversion: source content, target voice")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("mcd", help="mel cepstral distortion between two mel files")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(fn=cmd_mcd)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (VoxkitError, OSError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
