#!/usr/bin/env python3
"""Download the two desk-scale checkpoints into the local HF cache.

Honors HF_ENDPOINT (mirrors) and HF_HUB_OFFLINE (cache-only). Run
convert_hf.py afterwards to produce orion model containers.
"""
import argparse

from huggingface_hub import snapshot_download

MODELS = ["gpt2", "EleutherAI/pythia-410m"]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("models", nargs="*", default=MODELS, help="checkpoint ids")
    args = ap.parse_args()
    for model_id in args.models or MODELS:
        path = snapshot_download(model_id)
        print(f"{model_id}: {path}")


if __name__ == "__main__":
    main()
