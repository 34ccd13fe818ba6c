#!/usr/bin/env python3
"""Regenerate the bundled synthetic case corpus (data/fixtures/cases_300.jsonl).

The corpus is English, fully synthetic, and deterministic for a given seed.
Each fact has three sentences (motivation, behaviour, aftermath) so that the
offline echo backend can produce a plausible reorganization by sentence.
"""
import argparse
import json
import random

CHARGES = {
    "theft": {
        "articles": [(264, "secretly took"), (265, "stole a telecom line and used")],
        "motive": ["wanted money to repay gambling debts", "coveted the property of others",
                   "planned to sell stolen goods for cash"],
        "act": ["secretly took", "sneaked into the shop and took", "pocketed without permission"],
        "base_bin": 1,
    },
    "fraud": {
        "articles": [(266, "")],
        "motive": ["aimed to obtain money by deception", "planned to cheat investors",
                   "wanted to defraud the victim"],
        "act": ["posed as a bank clerk and obtained", "forged an invoice to obtain",
                "lied about a fake investment to receive"],
        "base_bin": 3,
    },
    "robbery": {
        "articles": [(263, "threatened the victim with a knife and seized"),
                     (269, "after stealing, used violence to resist arrest and kept")],
        "motive": ["wanted money urgently", "coveted the property of others",
                   "decided to take money by force"],
        "act": ["threatened the victim with a knife and seized", "beat the victim and grabbed",
                "forced the victim to hand over"],
        "base_bin": 4,
    },
    "intentional injury": {
        "articles": [(234, "")],
        "motive": ["held a grudge against the neighbour", "was angry after a quarrel",
                   "sought revenge for an old dispute"],
        "act": ["struck the victim with a brick and damaged", "punched the victim and broke",
                "stabbed the victim and injured"],
        "base_bin": 3,
    },
    "traffic accident": {
        "articles": [(133, "")],
        "motive": ["was careless while driving", "negligently ignored the traffic lights",
                   "drove too fast out of negligence"],
        "act": ["ran a red light, collided with a scooter and destroyed",
                "lost control of the truck and crushed", "hit a pedestrian and wrecked"],
        "base_bin": 2,
    },
    "drug trafficking": {
        "articles": [(347, "sold"), (348, "kept at home")],
        "motive": ["wanted quick profit from drugs", "planned to sell methamphetamine",
                   "sought income by dealing heroin"],
        "act": ["sold grams of methamphetamine packed as", "delivered heroin hidden in",
                "kept at home drugs stored in"],
        "base_bin": 4,
    },
    "embezzlement": {
        "articles": [(271, "as a company employee took"), (272, "as a cashier lent out")],
        "motive": ["abused the position at the company", "wanted to cover personal losses",
                   "planned to use company funds privately"],
        "act": ["as a company employee took", "as a cashier lent out", "transferred company funds meant for"],
        "base_bin": 3,
    },
    "gambling": {
        "articles": [(303, "")],
        "motive": ["sought profit from organized betting", "wanted to run a gambling den",
                   "planned to profit from card games"],
        "act": ["ran a betting table and collected", "organized mahjong gambling and took",
                "hosted online betting and collected"],
        "base_bin": 1,
    },
}

OBJECTS = ["a mobile phone", "cash", "a laptop", "jewellery", "an electric scooter",
           "bank deposits", "gold bars", "a wallet", "company funds", "a motorcycle"]
PLACES = ["Haidian District", "a residential compound", "a supermarket", "a railway station",
          "a parking lot", "an office building", "a night market", "a village road"]
NAMES = ["Zhang", "Li", "Wang", "Liu", "Chen", "Yang", "Zhao", "Huang", "Zhou", "Wu",
         "Xu", "Sun", "Hu", "Zhu", "Gao", "Lin"]
LENIENT = ["surrendered voluntarily and confessed", "returned the property and obtained forgiveness",
           "confessed truthfully at trial"]
SEVERE = ["fled but was caught; a recidivist with prior convictions",
          "refused to confess and caused further loss"]
NEUTRAL = ["was arrested by the police at home", "was caught by the police the next day"]

BIN_MONTHS = {1: (6, 9), 2: (9, 12), 3: (12, 24), 4: (24, 36), 5: (36, 60)}


def make_case(idx, rng):
    charge = rng.choice(sorted(CHARGES))
    spec = CHARGES[charge]
    article, cue = rng.choice(spec["articles"])
    # The behaviour phrase usually carries the article cue, sometimes it is
    # borrowed from a confusable charge to keep the task imperfect.
    if rng.random() < 0.2:
        other = CHARGES[rng.choice(sorted(CHARGES))]
        act = rng.choice(other["act"])
    elif cue and rng.random() < 0.75:
        act = cue
    else:
        act = rng.choice(spec["act"])
    motive = rng.choice(spec["motive"]) if rng.random() < 0.85 else "had no clear motive"
    name = f"{rng.choice(NAMES)} {chr(65 + idx % 26)}{idx:03d}"
    amount = rng.randrange(800, 200000, 100)
    year = rng.choice([2019, 2020, 2021, 2022])
    month = rng.randint(1, 12)
    day = rng.randint(1, 28)

    shift = 0
    roll = rng.random()
    if roll < 0.35:
        after = rng.choice(LENIENT)
        shift = -1
    elif roll < 0.6:
        after = rng.choice(SEVERE)
        shift = 1
    else:
        after = rng.choice(NEUTRAL)
    if amount > 100000:
        shift += 1
    term_bin = min(5, max(1, spec["base_bin"] + shift))
    lo, hi = BIN_MONTHS[term_bin]
    months = rng.randrange(lo, hi)

    fact = (f"The defendant {name} {motive}. "
            f"On {year}-{month:02d}-{day:02d}, in {rng.choice(PLACES)}, {name} {act} "
            f"{rng.choice(OBJECTS)} worth {amount} yuan. "
            f"After the incident, {name} {after}.")
    return {
        "id": f"case-{idx:04d}",
        "fact": fact,
        "article": article,
        "charge": charge,
        "term_months": months,
        "date": f"{year}-{month:02d}-{day:02d}",
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=300)
    ap.add_argument("--seed", type=int, default=20230601)
    ap.add_argument("--out", default="data/fixtures/cases_300.jsonl")
    args = ap.parse_args()
    rng = random.Random(args.seed)
    with open(args.out, "w", encoding="utf-8") as f:
        for i in range(args.n):
            f.write(json.dumps(make_case(i, rng), ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
