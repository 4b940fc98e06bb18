#!/usr/bin/env python3
"""Writes fixtures/bench.jsonl: 700 synthetic entries laid out to the
published domain, difficulty, physical-law and split distribution, plus
fixtures/kappa_votes.csv with the matching preference vote counts.
"""
import json
import os
import sys

DOMAINS = {
    # name: (easy, hard, test_easy, test_hard, laws)
    "rigid_body": (144, 96, 21, 14, dict(collisions=228, gravity=182, elasticity=112, friction=186, fluid_dynamics=16, other=34)),
    "soft_body": (108, 72, 15, 10, dict(collisions=95, gravity=156, elasticity=175, friction=92, fluid_dynamics=32, other=26)),
    "fluid": (84, 76, 12, 11, dict(collisions=38, gravity=142, elasticity=24, friction=45, fluid_dynamics=160, other=42)),
    "mechanics": (72, 48, 10, 7, dict(collisions=78, gravity=94, elasticity=58, friction=88, fluid_dynamics=12, other=24)),
}
MULTI = {"easy": 82, "hard": 138}
ORDER = list(DOMAINS)

SCENES = {
    "rigid_body": [("ball", "A {c} ball drops from {h} m onto a wooden floor and bounces until it rests."),
                   ("cylinder", "A {c} cylinder rolls down a {a}-degree ramp and slides across the ground."),
                   ("box", "A stack of {n} {c} boxes topples after a sphere strikes the bottom box.")],
    "soft_body": [("trampoline", "A {c} ball bounces on a soft trampoline that sags {h} cm under it."),
                  ("jelly", "A {c} jelly cube falls {h} m and wobbles after hitting a table."),
                  ("cloth", "A {c} cloth sheet drapes over a sphere and settles under gravity.")],
    "fluid": [("water", "Water pours from a {c} cup into a basin {h} m below."),
              ("raindrop", "{n} raindrops fall into a {c} pond and ripple outwards."),
              ("dam", "A {c} dam wall is removed and the water column collapses across the floor.")],
    "mechanics": [("pendulum", "A {c} pendulum of length {h} m swings from {a} degrees."),
                  ("spring", "A {c} block on a spring oscillates after being pulled {h} m."),
                  ("gear", "{n} {c} gears mesh and rotate driven by the first one.")],
}
COLORS = ["red", "blue", "green", "yellow", "white", "orange", "black"]

# 100 items, 5 raters: 68 unanimous, 24 split 4-1, 8 split 3-2; kappa 0.712.
VOTES = [(5, 0)] * 34 + [(0, 5)] * 34 + [(4, 1)] * 12 + [(1, 4)] * 12 + [(3, 2)] * 4 + [(2, 3)] * 4


def prompt(domain, i):
    obj, tpl = SCENES[domain][i % 3]
    return obj, tpl.format(c=COLORS[i % len(COLORS)], h=round(0.5 + (i % 7) * 0.25, 2), a=15 + (i % 5) * 5, n=2 + i % 4)


def build():
    entries = []
    multi_left = dict(MULTI)
    for di, (domain, (easy, hard, t_easy, t_hard, laws)) in enumerate(DOMAINS.items()):
        for i in range(easy + hard):
            difficulty = "easy" if i < easy else "hard"
            j = i if i < easy else i - easy
            test = j < (t_easy if difficulty == "easy" else t_hard)
            obj, text = prompt(domain, i)
            domains = [domain]
            if multi_left[difficulty] > 0 and i % 3 == 0:
                domains.append(ORDER[(di + 1) % len(ORDER)])
                multi_left[difficulty] -= 1
            entries.append({
                "schema": "physcodebench/1",
                "id": f"{domain}-{i:03d}",
                "prompt": text,
                "difficulty": difficulty,
                "domains": domains,
                "physical_laws": [law for law, n in laws.items() if i < n],
                "object_types": [obj],
                "split": "test" if test else "train",
                "primary_domain": domain,
            })
    # Top up multi-domain entries if the stride ran out.
    for e in entries:
        d = e["difficulty"]
        if multi_left[d] > 0 and len(e["domains"]) == 1:
            di = ORDER.index(e["domains"][0])
            e["domains"].append(ORDER[(di + 1) % len(ORDER)])
            multi_left[d] -= 1
    assert multi_left == {"easy": 0, "hard": 0}, multi_left
    for e, (a, b) in zip((e for e in entries if e["split"] == "test"), VOTES):
        votes = [{"annotator_id": f"r{k + 1}", "choice": "a" if k < a else "b"} for k in range(a + b)]
        e["preference"] = {
            "code_a": "# implementation A\n",
            "code_b": "# implementation B\n",
            "preferred": "a" if a > b else "b",
            "annotator_votes": votes,
        }
    return entries


def main(root):
    entries = build()
    with open(os.path.join(root, "bench.jsonl"), "w") as f:
        for e in entries:
            f.write(json.dumps(e, separators=(",", ":")) + "\n")
    with open(os.path.join(root, "kappa_votes.csv"), "w") as f:
        f.write("a,b\n")
        for a, b in VOTES:
            f.write(f"{a},{b}\n")
    print(len(entries), "entries")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "fixtures"))
