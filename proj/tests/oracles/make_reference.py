"""Regenerates tests/fixtures/reference from Hugging Face GPT-2 code.

The engine and tokenizer are checked against these files, so they come from
an implementation that shares no code with the library: a small randomly
initialized GPT2LMHeadModel over the toy vocabulary, and GPT2Tokenizer.

    python3 tests/oracles/make_reference.py
"""

import json
import random
import struct
from pathlib import Path

import numpy as np
import torch
from transformers import GPT2Config, GPT2LMHeadModel, GPT2Tokenizer

ROOT = Path(__file__).resolve().parents[1] / "fixtures"
TOY = ROOT / "toy"
OUT = ROOT / "reference"


def write_archive(path, tensors):
    header = {}
    payload = bytearray()
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype="<f4")
        begin = len(payload)
        payload += data.tobytes()
        header[name] = {"dtype": "F32", "shape": list(data.shape), "data_offsets": [begin, len(payload)]}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path.write_bytes(struct.pack("<Q", len(blob)) + blob + bytes(payload))


PROMPTS = [
    "The year after 2000 is",
    "I have music class every Monday",
    "The sky is blue and the sun is yellow",
    "We went to the park on Sunday",
    "My dog was born in 2025",
    "She painted the wall purple",
    "It's 12:30, isn't it?",
    "  spaced   out  text ",
    "Weekend plans: grocery shopping, lunch, and a game.",
    "they'll say we've been here",
    "numbers 1234567 and 42",
    "The door is orange\nThe car is green",
    "abc",
    "x",
    "The year before 2039 is",
    "Our team won the first game of the year",
]

ALPHABET = (
    list("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789")
    + list(" \t\n\r  .,;:!?'\"-_()[]{}<>@#$%^&*+=/\\|~`")
    + ["'s", "'t", "'re", "'ve", "'m", "'ll", "'d"]
    + list("éüñçßøåÆΩπλдЖ")
    + list("中文字日本")
    + [" 2000", " Monday", " the", " year"]
)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    vocab = json.loads((TOY / "vocab.json").read_text())
    tokenizer = GPT2Tokenizer(str(TOY / "vocab.json"), str(TOY / "merges.txt"))

    rng = random.Random(1234)
    cases = []
    for _ in range(400):
        text = "".join(rng.choice(ALPHABET) for _ in range(rng.randint(0, 24)))
        cases.append({"text": text, "ids": tokenizer.encode(text)})
    for text in PROMPTS:
        cases.append({"text": text, "ids": tokenizer.encode(text)})
    (OUT / "tokenizer_cases.json").write_text(json.dumps(cases, ensure_ascii=False, indent=1) + "\n")

    torch.manual_seed(0)
    config = GPT2Config(
        vocab_size=len(vocab),
        n_positions=32,
        n_embd=32,
        n_layer=2,
        n_head=4,
        n_inner=64,
        activation_function="gelu_new",
        layer_norm_epsilon=1e-5,
        initializer_range=0.2,
        resid_pdrop=0.0,
        embd_pdrop=0.0,
        attn_pdrop=0.0,
        bos_token_id=None,
        eos_token_id=None,
    )
    model = GPT2LMHeadModel._from_config(config, attn_implementation="eager").eval()
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "ln" in name:
                p.copy_((1.0 if name.endswith("weight") else 0.0) + 0.2 * torch.randn_like(p))
            elif name.endswith("bias"):
                p.copy_(0.1 * torch.randn_like(p))

    tensors = {}
    for name, p in model.transformer.state_dict().items():
        if name.endswith(".attn.bias") or name.endswith(".attn.masked_bias"):
            continue
        tensors[name] = p.detach().numpy()
    write_archive(OUT / "model.bin", tensors)
    (OUT / "config.json").write_text(
        json.dumps(
            {
                "n_layers": config.n_layer,
                "d_model": config.n_embd,
                "n_heads": config.n_head,
                "d_mlp": config.n_inner,
                "vocab_size": config.vocab_size,
                "max_positions": config.n_positions,
                "layernorm_epsilon": config.layer_norm_epsilon,
            },
            indent=2,
        )
        + "\n"
    )

    captured = {}
    for l, block in enumerate(model.transformer.h):
        block.mlp.act.register_forward_hook(lambda m, i, o, l=l: captured.__setitem__(l, o[0].detach().numpy()))

    golden = {}
    for i, text in enumerate(PROMPTS):
        ids = tokenizer.encode(text)
        with torch.no_grad():
            out = model(torch.tensor([ids]), output_attentions=True)
        golden[f"prompt.{i}.ids"] = np.array(ids, dtype=np.float32)
        golden[f"prompt.{i}.logits"] = out.logits[0].numpy()
        for l in range(config.n_layer):
            golden[f"prompt.{i}.mlp.{l}"] = captured[l]
            golden[f"prompt.{i}.attn.{l}"] = out.attentions[l][0].numpy()
    write_archive(OUT / "golden.bin", golden)
    (OUT / "prompts.json").write_text(json.dumps(PROMPTS, indent=1) + "\n")


if __name__ == "__main__":
    main()
