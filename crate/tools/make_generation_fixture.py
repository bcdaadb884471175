#!/usr/bin/env python3
"""Write the bundled cross-configuration generation fixture and its expected metrics.

Twenty prompts are generated under two tensor-parallel settings (tp_size 1 and 4),
three runs each. Runs within a setting are identical. Under tp_size 4, five prompts
produce a slightly different text whose entity set gains one entity and whose
embedding has cosine 14/15 with the tp_size 1 embedding. About a fifth of the
tp_size 4 tokens carry flat (low-evidence) logits.

Expected values are computed here with plain float loops, independently of the
Rust implementation. Run from the repository root:

    python3 tools/make_generation_fixture.py
"""

import json
import math
import random
from pathlib import Path

OUT = Path("crates/core/tests/fixtures")
N_PROMPTS = 20
RUNS = 3
DIVERGENT = {3, 7, 11, 15, 19}
DIM = 16
TOKENS = 16
TOP_K = 10
COS_DIVERGENT = 14.0 / 15.0
QUANTILE = 0.99


def fsum_loop(xs):
    # Left to right; builtin sum() is compensated on recent Pythons.
    s = 0.0
    for x in xs:
        s += x
    return s


def unit(v):
    n = math.sqrt(fsum_loop(x * x for x in v))
    return [x / n for x in v]


def gram_schmidt(u, w):
    d = fsum_loop(a * b for a, b in zip(u, w))
    return unit([b - d * a for a, b in zip(u, w)])


def strong_step(rng):
    # EU = K / (sum(logit - min) + 2K); aim for EU in [0.02, 0.05].
    eu = rng.uniform(0.02, 0.05)
    spread = TOP_K / eu - 2 * TOP_K
    tail = [round(rng.uniform(0.0, 2.0), 4) for _ in range(TOP_K - 2)]
    top = round(spread - fsum_loop(tail), 4)
    base = round(rng.uniform(-3.0, 3.0), 4)
    diffs = [top] + sorted(tail, reverse=True) + [0.0]
    return [round(base + d, 4) for d in diffs]


def weak_step(rng):
    base = round(rng.uniform(-3.0, 3.0), 4)
    diffs = sorted((round(rng.uniform(0.0, 1.0), 4) for _ in range(TOP_K - 1)), reverse=True)
    return [round(base + d, 4) for d in diffs + [0.0]]


def trace_json(rows):
    steps = []
    for row in rows:
        ranked = sorted(enumerate(row), key=lambda p: -p[1])
        steps.append({"top_k": [{"token_id": f"t{i}", "logit": z} for i, z in ranked]})
    return {"steps": steps}


def eu_of(row):
    window = sorted(row, reverse=True)[:TOP_K]
    lo = min(window)
    alpha = [z - lo + 1.0 for z in window]
    return len(alpha) / fsum_loop(a + 1.0 for a in alpha)


def midpoint_quantile(vals, q):
    s = sorted(vals)
    pos = q * (len(s) - 1)
    lo, hi = math.floor(pos), math.ceil(pos)
    return s[lo] if lo == hi else 0.5 * (s[lo] + s[hi])


def cosine(a, b):
    u, w = unit(a), unit(b)
    dot = fsum_loop(x * y for x, y in zip(u, w))
    uu = fsum_loop(x * x for x in u)
    ww = fsum_loop(x * x for x in w)
    return max(-1.0, min(1.0, dot / math.sqrt(uu * ww)))


def jaccard(a, b):
    sa = {" ".join(x.lower().split()) for x in a}
    sb = {" ".join(x.lower().split()) for x in b}
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def pairwise_mean(items, f):
    vals = [f(items[i], items[j]) for i in range(len(items)) for j in range(i + 1, len(items))]
    return fsum_loop(vals) / len(vals)


def main():
    rng = random.Random(20240611)
    records = []
    per_prompt = {}
    for p in range(N_PROMPTS):
        iid = f"p{p:02}"
        entities = [f"entity-{p:02}-{e:02}" for e in range(14)]
        sentences = [f"Finding {s} for case {p} cites {entities[s]}." for s in range(5)]
        text1 = " ".join(sentences)
        emb1 = [round(x, 6) for x in unit([rng.gauss(0.0, 1.0) for _ in range(DIM)])]
        rows1 = [strong_step(rng) for _ in range(TOKENS)]
        weak = set(rng.sample(range(TOKENS), rng.choice([3, 4])))
        rows4 = [weak_step(rng) if t in weak else rows1[t] for t in range(TOKENS)]
        if p in DIVERGENT:
            ents4 = entities + [f"entity-{p:02}-extra"]
            text4 = text1.replace("Finding 4", "Final finding") + f" Also noted {ents4[-1]}."
            w = gram_schmidt(emb1, [rng.gauss(0.0, 1.0) for _ in range(DIM)])
            s = math.sqrt(1.0 - COS_DIVERGENT**2)
            emb4 = [round(COS_DIVERGENT * a + s * b, 6) for a, b in zip(unit(emb1), w)]
        else:
            ents4, text4, emb4 = entities, text1, emb1
        runs = []
        for tp, text, ents, emb, rows in [(1, text1, entities, emb1, rows1), (4, text4, ents4, emb4, rows4)]:
            for r in range(RUNS):
                rec = {
                    "run_id": f"tp{tp}-r{r}",
                    "instance_id": iid,
                    "config": {"model": "sim-llm-7b", "tp_size": str(tp), "decoding": "greedy"},
                    "payload": {
                        "kind": "generation",
                        "text": text,
                        "entities": ents,
                        "embedding": emb,
                        "logits": trace_json(rows),
                    },
                }
                records.append(rec)
                runs.append((tp, text, ents, emb, rows))
        per_prompt[iid] = runs

    def corpus_means(key):
        ems, ejs, psds = [], [], []
        for iid in sorted(per_prompt):
            groups = {}
            for run in per_prompt[iid]:
                groups.setdefault(key(run), []).append(run)
            for g in sorted(groups):
                rs = groups[g]
                ems.append(pairwise_mean(rs, lambda a, b: 1.0 if a[1] == b[1] else 0.0))
                ejs.append(pairwise_mean(rs, lambda a, b: jaccard(a[2], b[2])))
                psds.append(pairwise_mean(rs, lambda a, b: cosine(a[3], b[3])))
        n = len(ems)
        return {
            "mean_em": fsum_loop(ems) / n,
            "mean_entity_jaccard": fsum_loop(ejs) / n,
            "mean_psd": fsum_loop(psds) / n,
            "n_sets": n,
        }

    ref_rows = [row for runs in per_prompt.values() for run in runs if run[0] == 1 for row in run[4]]
    theta = midpoint_quantile([eu_of(r) for r in ref_rows], QUANTILE)
    tdis = [
        sum(1 for row in run[4] if eu_of(row) < theta) / TOKENS
        for iid in sorted(per_prompt)
        for run in per_prompt[iid]
        if run[0] == 4
    ]

    expected = {
        "cross_config": corpus_means(lambda run: "all"),
        "within_config": corpus_means(lambda run: run[0]),
        "logit": {
            "theta_reference": "tp_size=1",
            "theta_quantile": QUANTILE,
            "theta_eu": theta,
            "mean_tdi": fsum_loop(tdis) / len(tdis),
            "tdi_band": [0.75, 0.83],
        },
    }

    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "generation_cross_tp.jsonl", "w") as f:
        for rec in records:
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")
    with open(OUT / "generation_cross_tp.expected.json", "w") as f:
        json.dump(expected, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
