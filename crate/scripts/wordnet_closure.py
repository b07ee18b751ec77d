#!/usr/bin/env python3
"""Extract the WordNet noun hypernymy transitive closure as a TSV edge list.

Reads the plain-text WordNet 3.0 database files (data.noun, index.noun) and
writes `child<TAB>parent` lines, one per (synset, ancestor) pair. Synsets are
named `lemma.n.NN` with the sense number taken from index.noun.

    python3 scripts/wordnet_closure.py WORDNET_DIR out.tsv [--root mammal.n.01]

With --root, only edges whose parent lies in the subtree of the given synset
(including the root itself) are kept.
"""
import argparse
import os
import sys


def parse_index(path):
    sense = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("  "):
                continue
            parts = line.split()
            lemma, _pos, synset_cnt, p_cnt = parts[0], parts[1], int(parts[2]), int(parts[3])
            offsets = parts[4 + p_cnt + 2:]
            assert len(offsets) == synset_cnt, line
            for i, off in enumerate(offsets):
                sense[(lemma, off)] = i + 1
    return sense


def parse_data(path):
    first_lemma = {}
    hypernyms = {}
    instance_hypernyms = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("  "):
                continue
            body = line.split("|")[0].split()
            off = body[0]
            w_cnt = int(body[3], 16)
            words = body[4:4 + 2 * w_cnt:2]
            first_lemma[off] = words[0].lower()
            i = 4 + 2 * w_cnt
            p_cnt = int(body[i])
            i += 1
            hyp, inst = [], []
            for _ in range(p_cnt):
                sym, target, pos = body[i], body[i + 1], body[i + 2]
                i += 4
                if pos != "n":
                    continue
                if sym == "@":
                    hyp.append(target)
                elif sym == "@i":
                    inst.append(target)
            hypernyms[off] = hyp
            instance_hypernyms[off] = inst
    return first_lemma, hypernyms, instance_hypernyms


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("wordnet_dir")
    ap.add_argument("out")
    ap.add_argument("--root", default=None)
    args = ap.parse_args()

    sense = parse_index(os.path.join(args.wordnet_dir, "index.noun"))
    first_lemma, hyp, inst = parse_data(os.path.join(args.wordnet_dir, "data.noun"))

    def name(off):
        lemma = first_lemma[off]
        return "%s.n.%02d" % (lemma, sense[(lemma, off)])

    memo = {}

    def ancestors(off):
        if off in memo:
            return memo[off]
        out = set()
        for h in hyp[off] + inst[off]:
            out.add(h)
            out |= ancestors(h)
        memo[off] = out
        return out

    sys.setrecursionlimit(100000)
    edges = set()
    for off in first_lemma:
        for a in ancestors(off):
            edges.add((off, a))

    if args.root is not None:
        root = next(o for o in first_lemma if name(o) == args.root)
        keep = {root} | {o for o in first_lemma if root in ancestors(o)}
        edges = {(c, p) for (c, p) in edges if p in keep}

    nodes = {c for c, _ in edges} | {p for _, p in edges}
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("# WordNet 3.0 noun hypernymy transitive closure\n")
        for c, p in sorted(edges, key=lambda e: (name(e[0]), name(e[1]))):
            fh.write("%s\t%s\n" % (name(c), name(p)))
    print("nodes=%d edges=%d" % (len(nodes), len(edges)), file=sys.stderr)


if __name__ == "__main__":
    main()
