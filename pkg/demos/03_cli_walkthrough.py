"""The command-line workflow end to end on a generated toy folder.

Writes a BEIR-style folder to ./mafin-demo, then runs ingest, cache,
gen-queries, train, evaluate and retrieve exactly as they would be typed.

Run: python3 demos/03_cli_walkthrough.py
"""

import shlex
from pathlib import Path

from mafin.cli import main
from mafin.ingest import write_corpus, write_qrels, write_queries
from mafin.synthetic import make_toy_dataset

root = Path("mafin-demo")
data = root / "data"
(data / "qrels").mkdir(parents=True, exist_ok=True)
toy = make_toy_dataset(300, 150, seed=1)
write_corpus(toy.corpus, data / "corpus.jsonl")
write_queries(toy.queries, data / "queries.jsonl")
ids = toy.queries.ids
write_qrels({q: toy.qrels[q] for q in ids[:110]}, data / "qrels" / "dev.tsv")
write_qrels({q: toy.qrels[q] for q in ids[110:]}, data / "qrels" / "test.tsv")

common = f"--data {data} --out {root / 'out'} --stub-dim 64"
steps = [
    f"ingest {common} --split fraction 0.8",
    f"cache {common} --cache {root / 'emb.bin'}",
    f"gen-queries {common}",
    f"train {common} --split-manifest {root / 'out' / 'split.json'} --scorer mafin --d-aug 16 "
    f"--feature-dim 4096 --neg 16 --max-epochs 20 --lr 1e-3",
    f"evaluate {common} --split-manifest {root / 'out' / 'split.json'} --scorers bb_only,mafin "
    f"--d-aug 16 --feature-dim 4096 --split test",
    f"retrieve {common} --scorer mafin --d-aug 16 --feature-dim 4096 --k 3 --query {shlex.quote(toy.queries[ids[-1]].text)}",
]
for step in steps:
    print(f"\n$ mafin {step}")
    code = main(shlex.split(step))
    if code:
        raise SystemExit(code)
