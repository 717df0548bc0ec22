#!/usr/bin/env python3
"""Export image embeddings and prompt embeddings into a grouprobe bundle.

Usage:
    python export.py --model vit-l-14 --data /datasets/waterbirds \\
        --meta waterbirds_meta.csv --class-prompts class.json \\
        --attr-prompts attr.json --out bundles/waterbirds_vitl14 --batch 64

--model takes an alias (vit-l-14, vit-b-32, vit-b-16), any Hugging Face CLIP
checkpoint id, or "stub-<d>" for the deterministic offline encoder used in
tests and smoke runs.
"""

import argparse
import logging
import sys

from grouprobe_exporter import ExportSpec, run_export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--model", required=True, help="encoder: alias, HF id, or stub-<d>")
    parser.add_argument("--data", required=True, help="dataset root for relative image paths")
    parser.add_argument("--meta", required=True, help="metadata CSV: id,path,y,s_true,split")
    parser.add_argument("--class-prompts", required=True, help="JSON templates per class")
    parser.add_argument("--attr-prompts", required=True, help="JSON templates per attribute")
    parser.add_argument("--out", required=True, help="output bundle directory")
    parser.add_argument("--batch", type=int, default=64, help="inference batch size")
    parser.add_argument("--device", default=None, help="torch device hint (cpu/cuda)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    spec = ExportSpec(
        model=args.model,
        data_root=args.data,
        meta_csv=args.meta,
        class_prompts=args.class_prompts,
        attr_prompts=args.attr_prompts,
        out_dir=args.out,
        batch_size=args.batch,
        device=args.device,
    )
    try:
        run_export(spec)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
