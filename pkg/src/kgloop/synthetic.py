"""Small compositional knowledge graph with a planted rule ``r3 <= r1 & r2``.

Entities fall into four typed blocks. Blocks A, B and C are split into three
groups; ``r1`` links every A to every B of the same group, ``r2`` every B to
every C of the same group, so ``r3 = r1 o r2`` links A and C groups. ``r4``
attaches every C entity to two D entities, and ``r5``/``r6`` carry random noise triples.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

PLANTED_HEAD = "r3"
PLANTED_BODY = ("r1", "r2")


@dataclass
class SyntheticKG:
    train: list[tuple[str, str, str]]
    valid: list[tuple[str, str, str]]
    test: list[tuple[str, str, str]]
    concepts: list[tuple[str, str]]

    def write(self, directory) -> dict[str, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name in ("train", "valid", "test"):
            paths[name] = d / f"{name}.tsv"
            paths[name].write_text("".join(f"{h}\t{r}\t{t}\n" for h, r, t in getattr(self, name)), "utf-8")
        paths["concepts"] = d / "concepts.tsv"
        paths["concepts"].write_text("".join(f"{e}\t{c}\n" for e, c in self.concepts), "utf-8")
        return paths


def compositional_kg(
    seed: int = 0,
    groups: int = 3,
    sizes: tuple[int, int, int, int] = (10, 7, 10, 19),
    noise_fraction: float = 0.2,
    n_test: int = 50,
    n_valid: int = 20,
) -> SyntheticKG:
    """Build the planted-composition graph; ``sizes`` gives per-group A, B, C sizes and the D size."""
    rng = np.random.default_rng(seed)
    na, nb, nc, nd = sizes
    A = [[f"a{g}_{i}" for i in range(na)] for g in range(groups)]
    B = [[f"b{g}_{i}" for i in range(nb)] for g in range(groups)]
    C = [[f"c{g}_{i}" for i in range(nc)] for g in range(groups)]
    D = [f"d{i}" for i in range(nd)]

    structured = []
    planted = []
    for g in range(groups):
        structured += [(a, "r1", b) for a in A[g] for b in B[g]]
        structured += [(b, "r2", c) for b in B[g] for c in C[g]]
        planted += [(a, "r3", c) for a in A[g] for c in C[g]]
        for i, c in enumerate(C[g]):
            k = 2 * (g * nc + i)
            structured += [(c, "r4", D[k % nd]), (c, "r4", D[(k + 1) % nd])]
    structured += planted

    entities = [e for blk in (A, B, C) for grp in blk for e in grp] + D
    seen = set(structured)
    noise = []
    n_noise = int(round(noise_fraction * len(structured)))
    while len(noise) < n_noise:
        h, t = rng.choice(len(entities), size=2, replace=False)
        triple = (entities[h], ("r5", "r6")[len(noise) % 2], entities[t])
        if triple not in seen:
            seen.add(triple)
            noise.append(triple)

    test_idx = set(rng.choice(len(planted), size=n_test, replace=False).tolist())
    test = [planted[i] for i in sorted(test_idx)]
    others = [x for x in structured if x[1] in ("r1", "r2")]
    valid_idx = set(rng.choice(len(others), size=n_valid, replace=False).tolist())
    valid = [others[i] for i in sorted(valid_idx)]
    held = set(test) | set(valid)
    train = [x for x in structured + noise if x not in held]

    concepts = []
    for name, blk in (("TypeA", A), ("TypeB", B), ("TypeC", C)):
        concepts += [(e, name) for grp in blk for e in grp]
    concepts += [(e, "TypeD") for e in D]
    return SyntheticKG(train, valid, test, concepts)


DEMO_CONFIG = """\
# closed-loop demo on the synthetic graph
train = train.tsv
valid = valid.tsv
test = test.tsv
concepts = concepts.tsv
rules = seeds.tsv
dim = 50
batch_size = 64        # gradients are summed per batch, so keep batches small on tiny graphs
learning_rate = 0.005
epochs = 100
max_iterations = 5
"""


def write_demo(directory, seed: int = 0) -> dict[str, Path]:
    """Write the graph, seed rules without any rule for the planted head, and ``run.cfg``."""
    from kgloop.graph import build_graph
    from kgloop.rules import RuleSet, mine_seed_rules, write_rules

    data = compositional_kg(seed=seed)
    paths = data.write(directory)
    kg = build_graph(data.train, data.concepts)
    head = kg.relation_id(PLANTED_HEAD)
    seeds = RuleSet(r for r in mine_seed_rules(kg) if r.head_rel != head)
    paths["seeds"] = Path(directory) / "seeds.tsv"
    write_rules(seeds, kg, paths["seeds"])
    paths["config"] = Path(directory) / "run.cfg"
    paths["config"].write_text(DEMO_CONFIG + f"seed = {seed}\n", encoding="utf-8")
    return paths


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(prog="python -m kgloop.synthetic",
                                     description="Write the synthetic demo dataset and its run config.")
    parser.add_argument("directory")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    paths = write_demo(args.directory, args.seed)
    print(f"wrote {', '.join(sorted(p.name for p in paths.values()))} to {args.directory}")
    print(f"next: kgloop run --config {paths['config']} --out {Path(args.directory) / 'out'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
