#!/usr/bin/env python3
"""Convert a GPT-2 or GPT-NeoX (Pythia) checkpoint into an orion model
container: a directory with

  weights.safetensors  flat f32 tensors under canonical names
  manifest.json        canonical name -> weights-file entry name
  config.json          the runtime ModelConfig
  vocab.json           byte-level BPE token -> id map (dense ids)
  merges.txt           BPE merge list, rank = line order

Canonical matrices are [in, out]; the converter undoes each family's storage
quirks (GPT-2 Conv1D is already [in, out], NeoX Linear is [out, in] and fuses
Q/K/V interleaved per head).

Usage: python3 tools/convert_hf.py --model gpt2 --out models/gpt2
"""
import argparse
import json
from pathlib import Path

import torch
from safetensors.torch import save_file
from transformers import AutoModelForCausalLM, AutoTokenizer

CONTAINER_VERSION = "orion-container-1"


def byte_encoder() -> dict:
    """GPT-2's byte -> printable-unicode table."""
    bs = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("\xa1"), ord("\xac") + 1))
        + list(range(ord("\xae"), ord("\xff") + 1))
    )
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return {b: chr(c) for b, c in zip(bs, cs)}


def ln(out, prefix, weight, bias):
    out[f"{prefix}.scale"] = weight
    out[f"{prefix}.bias"] = bias


def convert_gpt2(model):
    cfg = model.config
    sd = model.state_dict()
    d = cfg.n_embd
    out = {
        "embed.W_E": sd["transformer.wte.weight"],
        "embed.W_P": sd["transformer.wpe.weight"],
    }
    for l in range(cfg.n_layer):
        p = f"transformer.h.{l}."
        b = f"block.{l}."
        ln(out, b + "ln1", sd[p + "ln_1.weight"], sd[p + "ln_1.bias"])
        ln(out, b + "ln2", sd[p + "ln_2.weight"], sd[p + "ln_2.bias"])
        wq, wk, wv = sd[p + "attn.c_attn.weight"].split(d, dim=1)
        bq, bk, bv = sd[p + "attn.c_attn.bias"].split(d)
        out[b + "attn.W_Q"], out[b + "attn.b_Q"] = wq, bq
        out[b + "attn.W_K"], out[b + "attn.b_K"] = wk, bk
        out[b + "attn.W_V"], out[b + "attn.b_V"] = wv, bv
        out[b + "attn.W_O"] = sd[p + "attn.c_proj.weight"]
        out[b + "attn.b_O"] = sd[p + "attn.c_proj.bias"]
        out[b + "mlp.W_in"] = sd[p + "mlp.c_fc.weight"]
        out[b + "mlp.b_in"] = sd[p + "mlp.c_fc.bias"]
        out[b + "mlp.W_out"] = sd[p + "mlp.c_proj.weight"]
        out[b + "mlp.b_out"] = sd[p + "mlp.c_proj.bias"]
    ln(out, "final_ln", sd["transformer.ln_f.weight"], sd["transformer.ln_f.bias"])
    out["unembed.W_U"] = sd["transformer.wte.weight"].t()
    runtime_config = {
        "model_id": "gpt2",
        "n_layers": cfg.n_layer,
        "n_heads": cfg.n_head,
        "d_model": d,
        "d_mlp": 4 * d,
        "vocab_size": cfg.vocab_size,
        "max_seq_len": cfg.n_positions,
        "attn_variant": "serial",
        "ln_eps": cfg.layer_norm_epsilon,
        "rotary": None,
    }
    return out, runtime_config


def rotary_parameters(cfg, head_dim):
    """Rotary fraction and base across transformers versions (rotary_pct /
    rotary_emb_base vs the newer rope_parameters dict)."""
    rope = getattr(cfg, "rope_parameters", None) or {}
    pct = rope.get("partial_rotary_factor", getattr(cfg, "rotary_pct", None))
    base = rope.get("rope_theta", getattr(cfg, "rotary_emb_base", None))
    if pct is None or base is None:
        raise SystemExit("cannot determine rotary parameters from config")
    return {"rot_dims": int(pct * head_dim), "base": float(base)}


def convert_neox(model, model_id):
    cfg = model.config
    sd = model.state_dict()
    d = cfg.hidden_size
    heads = cfg.num_attention_heads
    head_dim = d // heads
    out = {"embed.W_E": sd["gpt_neox.embed_in.weight"]}
    for l in range(cfg.num_hidden_layers):
        p = f"gpt_neox.layers.{l}."
        b = f"block.{l}."
        ln(out, b + "ln1", sd[p + "input_layernorm.weight"], sd[p + "input_layernorm.bias"])
        ln(
            out,
            b + "ln2",
            sd[p + "post_attention_layernorm.weight"],
            sd[p + "post_attention_layernorm.bias"],
        )
        # Fused QKV interleaves per head: [heads, (q|k|v), head_dim, d].
        w = sd[p + "attention.query_key_value.weight"].view(heads, 3, head_dim, d)
        bias = sd[p + "attention.query_key_value.bias"].view(heads, 3, head_dim)
        for j, name in enumerate("QKV"):
            out[b + f"attn.W_{name}"] = w[:, j].reshape(d, d).t()
            out[b + f"attn.b_{name}"] = bias[:, j].reshape(d)
        out[b + "attn.W_O"] = sd[p + "attention.dense.weight"].t()
        out[b + "attn.b_O"] = sd[p + "attention.dense.bias"]
        out[b + "mlp.W_in"] = sd[p + "mlp.dense_h_to_4h.weight"].t()
        out[b + "mlp.b_in"] = sd[p + "mlp.dense_h_to_4h.bias"]
        out[b + "mlp.W_out"] = sd[p + "mlp.dense_4h_to_h.weight"].t()
        out[b + "mlp.b_out"] = sd[p + "mlp.dense_4h_to_h.bias"]
    ln(out, "final_ln", sd["gpt_neox.final_layer_norm.weight"], sd["gpt_neox.final_layer_norm.bias"])
    out["unembed.W_U"] = sd["embed_out.weight"].t()
    runtime_config = {
        "model_id": model_id.split("/")[-1],
        "n_layers": cfg.num_hidden_layers,
        "n_heads": heads,
        "d_model": d,
        "d_mlp": cfg.intermediate_size,
        "vocab_size": cfg.vocab_size,
        "max_seq_len": cfg.max_position_embeddings,
        "attn_variant": "parallel",
        "ln_eps": cfg.layer_norm_eps,
        "rotary": rotary_parameters(cfg, head_dim),
    }
    return out, runtime_config


def tokenizer_files(tok):
    """vocab.json / merges.txt from the backend tokenizer. Added tokens
    (NeoX whitespace runs, special markers) are byte-mapped and appended so
    ids stay dense."""
    tj = json.loads(tok.backend_tokenizer.to_str())
    vocab = dict(tj["model"]["vocab"])
    merges = tj["model"]["merges"]
    merge_lines = [m if isinstance(m, str) else " ".join(m) for m in merges]
    be = byte_encoder()
    for added in tj.get("added_tokens", []):
        mapped = "".join(be[byte] for byte in added["content"].encode("utf-8"))
        vocab.setdefault(mapped, added["id"])
    ids = sorted(vocab.values())
    if ids != list(range(len(ids))):
        raise SystemExit("tokenizer ids are not dense after merging added tokens")
    vocab_json = json.dumps(vocab, ensure_ascii=False, indent=0)
    merges_txt = "#version: 0.2\n" + "\n".join(merge_lines) + "\n"
    return vocab_json, merges_txt


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", required=True, help="checkpoint id, e.g. gpt2 or EleutherAI/pythia-410m")
    ap.add_argument("--out", required=True, type=Path, help="container directory to create")
    args = ap.parse_args()

    model = AutoModelForCausalLM.from_pretrained(args.model, dtype=torch.float32)
    model.eval()
    if model.config.model_type == "gpt2":
        named, runtime_config = convert_gpt2(model)
    elif model.config.model_type == "gpt_neox":
        named, runtime_config = convert_neox(model, args.model)
    else:
        raise SystemExit(f"unsupported architecture {model.config.model_type}")

    args.out.mkdir(parents=True, exist_ok=True)
    tensors = {k: v.to(torch.float32).contiguous() for k, v in named.items()}
    save_file(tensors, args.out / "weights.safetensors")
    manifest = {
        "version": CONTAINER_VERSION,
        "source": args.model,
        "tensors": {name: name for name in sorted(tensors)},
    }
    (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (args.out / "config.json").write_text(json.dumps(runtime_config, indent=2) + "\n")

    tok = AutoTokenizer.from_pretrained(args.model)
    vocab_json, merges_txt = tokenizer_files(tok)
    (args.out / "vocab.json").write_text(vocab_json)
    (args.out / "merges.txt").write_text(merges_txt)
    print(f"wrote container {args.out} ({len(tensors)} tensors)")


if __name__ == "__main__":
    main()
