#!/usr/bin/env python3
"""Writes the bundled synthetic knowledge base used by the end-to-end tests.

Output (under --out, default tests/data/bundle):
  kb/dump.json.gz      entity dump in the Wikidata JSON layout
  vocab/masked.txt     vocabulary of the masked fixture model
  vocab/causal.txt     vocabulary of the causal fixture model
  freq.tsv             token frequency table
  config.json          run configuration
  models.json          synthetic model list for `specbench synth-fixture`

Fixture backends and expected counts are then produced with
  specbench synth-fixture --config config.json --models models.json \
      --expected expected.json
"""

import argparse
import gzip
import json
import random
from pathlib import Path

SYLLABLES = ["ka", "lo", "mi", "ter", "van", "su", "ri", "on", "be", "dal",
             "no", "pra", "ze", "ul", "ca", "fen", "do", "ris", "ta", "mor"]

FILLER = ["the", "a", "of", "in", "is", "was", "and", "city", "town", "river",
          "born", "part", "type", "kind", "one", "two", "old", "new", "north",
          "south", "east", "west", "man", "woman", "work", "home", "land",
          "sea", "hill", "lake"]


class Names:
    def __init__(self, rng):
        self.rng = rng
        self.used = set(FILLER)

    def word(self):
        while True:
            n = self.rng.randint(2, 3)
            w = "".join(self.rng.choice(SYLLABLES) for _ in range(n)).capitalize()
            if w not in self.used:
                self.used.add(w)
                return w


class KB:
    def __init__(self):
        self.entities = {}
        self.next_id = 100

    def new(self, label, extra_labels=None):
        qid = f"Q{self.next_id}"
        self.next_id += 1
        labels = {"en": {"language": "en", "value": label}} if label else {}
        for lang, value in (extra_labels or {}).items():
            labels[lang] = {"language": lang, "value": value}
        self.entities[qid] = {"type": "item", "id": qid, "labels": labels,
                              "descriptions": {"en": {"language": "en", "value": "synthetic"}},
                              "claims": {}}
        return qid

    def claim(self, subject, prop, obj, rank="normal"):
        snak = {"snaktype": "value", "property": prop,
                "datavalue": {"value": {"entity-type": "item", "id": obj,
                                        "numeric-id": int(obj[1:])},
                              "type": "wikibase-entityid"},
                "datatype": "wikibase-item"}
        entry = {"mainsnak": snak, "type": "statement", "rank": rank,
                 "id": f"{subject}${len(self.entities[subject]['claims'])}",
                 "references": [{"hash": "x", "snaks": {}}]}
        self.entities[subject]["claims"].setdefault(prop, []).append(entry)

    def literal(self, subject, prop, text):
        snak = {"snaktype": "value", "property": prop,
                "datavalue": {"value": text, "type": "string"}, "datatype": "string"}
        self.entities[subject]["claims"].setdefault(prop, []).append(
            {"mainsnak": snak, "type": "statement", "rank": "normal"})


def tree(kb, names, prop, fanout, depth, multi_token_every=0):
    """Levels of entities linked child -> parent through `prop`."""
    levels = [[kb.new(names.word()) for _ in range(fanout[0])]]
    count = 0
    for d in range(1, depth):
        level = []
        for parent in levels[-1]:
            for _ in range(fanout[d]):
                count += 1
                label = names.word()
                if multi_token_every and count % multi_token_every == 0:
                    label = "North " + label
                child = kb.new(label)
                kb.claim(child, prop, parent)
                level.append(child)
        levels.append(level)
    return levels


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests/data/bundle"))
    ap.add_argument("--seed", type=int, default=2023)
    args = ap.parse_args()
    out = Path(args.out)
    rng = random.Random(args.seed)
    names = Names(rng)
    kb = KB()

    # Places: country <- region <- city <- district, all via P131.
    places = tree(kb, names, "P131", [4, 3, 3, 1], 4, multi_token_every=17)
    countries, regions, cities, districts = places
    # Occupations: root <- mid <- leaf via P279.
    occupations = tree(kb, names, "P279", [3, 3, 3], 3)
    # Classes for subclass-of and wholes for part-of.
    classes = tree(kb, names, "P279", [4, 3, 3, 1], 4, multi_token_every=13)
    parts = tree(kb, names, "P361", [3, 3, 2, 1], 4)

    # A subclass cycle and a self-loop.
    kb.claim(classes[0][0], "P279", classes[1][0])
    kb.claim(classes[2][0], "P279", classes[2][0])

    persons = []
    for i in range(48):
        p = kb.new(names.word(), {"de": "Person" + str(i)})
        kb.claim(p, "P19", rng.choice(cities + districts))
        kb.claim(p, "P106", rng.choice(occupations[2]))
        if i % 11 == 0:
            kb.claim(p, "P19", rng.choice(countries), rank="deprecated")
        if i % 7 == 0:
            kb.literal(p, "P1477", "Birth name " + str(i))
        persons.append(p)

    # An entity with no English label and one with no claims of interest.
    unlabeled = kb.new(None, {"fr": "Sanslabel"})
    kb.claim(unlabeled, "P131", countries[0])
    kb.new("Isolated")

    lines = [json.dumps(e, sort_keys=True) for e in kb.entities.values()]
    lines.insert(len(lines) // 2, '{"type": "item", "id": "Q9", "claims": ')  # truncated record
    body = "[\n" + ",\n".join(lines) + "\n]\n"
    (out / "kb").mkdir(parents=True, exist_ok=True)
    with open(out / "kb/dump.json.gz", "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as gz:
            gz.write(body.encode("utf-8"))

    labels = sorted({e["labels"]["en"]["value"] for e in kb.entities.values()
                     if "en" in e["labels"]})
    single = [l for l in labels if " " not in l]
    masked = set(single + FILLER)
    causal = set(single + FILLER + ["Zyx", "Qor"])
    # Each model misses a few answers, so the unified vocabulary is a strict
    # intersection.
    for w in rng.sample(single, 3):
        masked.discard(w)
    for w in rng.sample(single, 3):
        causal.discard(w)
    (out / "vocab").mkdir(exist_ok=True)
    (out / "vocab/masked.txt").write_text("".join(t + "\n" for t in sorted(masked)))
    (out / "vocab/causal.txt").write_text("".join(t + "\n" for t in sorted(causal)))

    # Coarser entities are more frequent, with some noise.
    depth = {}
    for levels in (places, occupations, classes, parts):
        for d, level in enumerate(levels):
            for q in level:
                depth[q] = d
    freq = {}
    for q, d in depth.items():
        label = kb.entities[q]["labels"].get("en", {}).get("value")
        if label and " " not in label:
            freq[label] = int(10 ** (4 - 0.5 * d) * rng.uniform(0.05, 8.0))
    for w in FILLER:
        freq[w] = 50000
    (out / "freq.tsv").write_text("".join(f"{t}\t{n}\n" for t, n in sorted(freq.items())))

    config = {
        "dump": "kb/dump.json.gz",
        "backends": [{"name": "masked", "fixture": "fixtures/masked.fixture"},
                     {"name": "causal", "fixture": "fixtures/causal.fixture"}],
        "modes": ["VP", "FP", "CP"],
        "k_demos": 10,
        "seed": 17,
        "cap": 40,
        "topk": 10,
        "frequency_table": "freq.tsv",
        "concurrency": 4,
        "out": "out",
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    models = {"models": [
        {"name": "masked", "model_id": "fixture-masked", "family": "masked",
         "mask_literal": "[MASK]", "embedding_dim": 4, "max_batch": 64,
         "vocab": "vocab/masked.txt", "output": "fixtures/masked.fixture",
         "fine_bias": {"vanilla": 0.6, "fewshot": 2.0, "cascade": 1.2}},
        {"name": "causal", "model_id": "fixture-causal", "family": "causal",
         "mask_literal": "", "embedding_dim": 4, "max_batch": 64,
         "vocab": "vocab/causal.txt", "output": "fixtures/causal.fixture",
         "fine_bias": {"vanilla": 0.2, "fewshot": 1.0, "cascade": 0.2}},
    ]}
    (out / "models.json").write_text(json.dumps(models, indent=2) + "\n")
    (out / "fixtures").mkdir(exist_ok=True)


if __name__ == "__main__":
    main()
