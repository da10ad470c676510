#!/usr/bin/env python3
"""Generate the synthetic QA fixture corpus (fixtures/synthetic.jsonl).

Every record pairs one question with one supporting document. Entity names
are pseudo-words so answers never collide across documents. Output is fully
determined by --seed.
"""
import argparse
import json
import random

ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
          "br", "dr", "kl", "tr", "st", "gr", "th", "qu"]
VOWELS = ["a", "e", "i", "o", "u", "ai", "ou", "ei"]
CODAS = ["", "n", "r", "l", "s", "th", "nd", "rk", "x"]


def word(rng, syllables):
    out = "".join(rng.choice(ONSETS) + rng.choice(VOWELS) + rng.choice(CODAS)
                  for _ in range(syllables))
    return out.capitalize()


def person(rng):
    return f"{word(rng, 2)} {word(rng, 3)}"


RELATIONS = [
    dict(
        q="Who founded the city of {x}?",
        answer=person,
        fact="The city of {x} was founded by {a} on the northern shore of the lake.",
        distract="Historians still argue about who first founded the city of {x} and why.",
        filler=["{x} grew quickly as a trading post for timber and salt.",
                "Today {x} is known for its covered markets and stone bridges.",
                "The old walls of {x} were rebuilt twice after large fires.",
                "Pilgrims once crossed {x} on their way to the {o} monastery."],
    ),
    dict(
        q="In which year was the {x} treaty signed?",
        answer=lambda rng: str(rng.randint(1400, 1990)),
        fact="The {x} treaty was finally signed in {a} by the two coastal republics.",
        distract="Many delegates refused to say in which year the {x} treaty would be signed.",
        filler=["The {x} treaty ended a long dispute over fishing rights.",
                "Copies of the {x} treaty are kept in the archive of {o}.",
                "Merchants welcomed the {x} treaty because tariffs fell sharply.",
                "Critics of the {x} treaty later formed the {o} league."],
    ),
    dict(
        q="Who composed the opera {x}?",
        answer=person,
        fact="The opera {x} was composed by {a} during a long winter in the capital.",
        distract="Critics debated for decades who really composed the opera {x}.",
        filler=["{x} premiered to a half empty hall and mixed reviews.",
                "The second act of {x} features a famous duet for two sopranos.",
                "A revival of {x} toured the southern provinces for three seasons.",
                "The libretto of {x} draws on an old legend from {o}."],
    ),
    dict(
        q="What is the capital of the province of {x}?",
        answer=lambda rng: word(rng, 3),
        fact="The capital of the province of {x} is {a}, a river port with old shipyards.",
        distract="Travel guides rarely mention the capital of the province of {x} at all.",
        filler=["The province of {x} is mostly covered by pine forest and marsh.",
                "Farmers in {x} grow barley, flax and dark rye.",
                "{x} borders the mountain district of {o} to the east.",
                "Winter in {x} is long and the roads often close for weeks."],
    ),
    dict(
        q="Which mineral is mined in the {x} hills?",
        answer=lambda rng: word(rng, 2).lower() + "ite",
        fact="The main mineral mined in the {x} hills is {a}, which is shipped by rail.",
        distract="Geologists have surveyed the {x} hills many times for any mineral worth mining.",
        filler=["The {x} hills rise gently above a wide green valley.",
                "Shepherds have grazed their flocks in the {x} hills for centuries.",
                "A narrow railway climbs through the {x} hills to the town of {o}.",
                "The {x} hills are often hidden by fog in the autumn."],
    ),
    dict(
        q="Who discovered the comet {x}?",
        answer=person,
        fact="The comet {x} was discovered by {a} with a small brass telescope.",
        distract="Several observatories claimed to have discovered the comet {x} first.",
        filler=["{x} returns to the inner solar system roughly every seventy years.",
                "The tail of {x} was visible to the naked eye for two weeks.",
                "Sailors near {o} once believed {x} foretold a storm.",
                "Photographs of {x} revealed a faint second tail of gas."],
    ),
    dict(
        q="What language is spoken on the island of {x}?",
        answer=lambda rng: word(rng, 2) + "ic",
        fact="The language spoken on the island of {x} is {a}, a tongue with many loanwords.",
        distract="Visitors often wonder what language is spoken on the island of {x} today.",
        filler=["The island of {x} can be reached by ferry from {o}.",
                "Fishing and basket weaving still sustain most villages on {x}.",
                "A white lighthouse guards the western cape of {x}.",
                "The island of {x} has no cars and only one paved road."],
    ),
    dict(
        q="Which river flows through the {x} valley?",
        answer=lambda rng: word(rng, 2),
        fact="The river {a} flows through the {x} valley before reaching the sea.",
        distract="Maps disagree about which river flows through the upper {x} valley.",
        filler=["The {x} valley is famous for its orchards and cider.",
                "Old mills still stand along the floor of the {x} valley.",
                "A pass at the head of the {x} valley leads toward {o}.",
                "Spring floods reshape the meadows of the {x} valley every year."],
    ),
]


def make_record(rng, idx, used):
    rel = RELATIONS[idx % len(RELATIONS)]
    while True:
        x = word(rng, 3)
        if x not in used:
            used.add(x)
            break
    while True:
        a = rel["answer"](rng)
        if a not in used:
            used.add(a)
            break
    other = word(rng, 2)
    fmt = dict(x=x, a=a, o=other)
    fillers = [f.format(**fmt) for f in rel["filler"]]
    rng.shuffle(fillers)
    n_fill = rng.randint(2, 4)
    sentences = fillers[:n_fill]
    sentences.insert(rng.randint(0, len(sentences)), rel["fact"].format(**fmt))
    if rng.random() < 0.7:
        sentences.insert(rng.randint(0, len(sentences)), rel["distract"].format(**fmt))
    return {
        "query_id": f"q{idx:04d}",
        "question": rel["q"].format(**fmt),
        "answers": [a],
        "doc_id": f"d{idx:04d}",
        "title": x,
        "text": " ".join(sentences),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--count", type=int, default=240)
    ap.add_argument("--seed", type=int, default=20251029)
    ap.add_argument("--out", default="fixtures/synthetic.jsonl")
    args = ap.parse_args()
    rng = random.Random(args.seed)
    used = set()
    with open(args.out, "w", encoding="utf-8") as fh:
        for i in range(args.count):
            fh.write(json.dumps(make_record(rng, i, used), ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
