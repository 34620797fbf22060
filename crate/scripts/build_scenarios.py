"""Regenerates scenarios/*.json and data/demo.jsonl."""
import json
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent

def scenario(sid, q, concept, labels, perspective_qs, equivalents, answers, samples, rules, gold, wrong=None, aliases=None):
    resp = []
    resp.append({"task": "conceptualize", "prompt": q, "response": concept})
    resp.append({"task": "aspects", "prompt": concept, "response": "\n".join(labels)})
    for lab, pq in zip(labels, perspective_qs):
        resp.append({"task": "aspect_questions", "prompt": f"Question: {q}\nAspect: {lab}", "response": f"Q1: {pq}"})
    resp.append({"task": "equivalents", "prompt": q, "response": "\n".join(equivalents)})
    for question, ans in answers.items():
        e = {"task": "answer", "prompt": question, "response": ans}
        if question == q:
            e["samples"] = samples
        resp.append(e)
    s = {"scenario_id": sid, "responses": resp, "flip_rules": rules,
         "extract_passthrough": True, "judge_accept_unlisted": True}
    if wrong:
        s["plausible_wrong"] = {q: wrong}
    if aliases:
        s["aliases"] = aliases
    return s, {"id": sid, "question": q, "gold_answers": gold}

def keep(q):
    return {"question": q, "otherwise": "keep"}

out = []

# certain-paris
q = "What is the current capital of France?"
labels = ["geography", "history", "government"]
pqs = ["Which river flows through the capital of France?",
       "Which revolution began in the capital of France?",
       "Which palace in the capital of France houses the president?"]
eqs = ["Which city is the capital of France?", "What city serves as the French capital?",
       "Which city is France's capital city?", "What is the name of the capital city of France?"]
ans = {x: "Paris" for x in [q] + pqs + eqs}
out.append(scenario("certain-paris", q, "What is the capital of a country?", labels, pqs, eqs, ans,
                    ["Paris"] * 5, [keep(x) for x in [q] + pqs + eqs], ["Paris"], wrong="Lyon"))

# crisco
q = "What is Crisco made of?"
labels = ["food science", "brand history", "nutrition"]
pqs = ["How is the main ingredient of Crisco processed into a solid fat?",
       "Why did the makers of Crisco choose its main ingredient in 1911?",
       "How does the main ingredient of Crisco affect its fat content?"]
eqs = ["What ingredient is Crisco made from?", "What is Crisco composed of?",
       "What is the main ingredient in Crisco?", "Crisco is made from what?"]
ans = {q: "soybean oil"}
ans.update({x: "vegetable oil" for x in pqs + eqs})
rules = [{"question": q, "partners": {"vegetable oil": "adopt"}, "otherwise": "keep"}]
rules += [keep(x) for x in pqs + eqs]
out.append(scenario("crisco", q, "What is a product made of?", labels, pqs, eqs, ans,
                    ["soybean oil"] * 5, rules, ["vegetable oil", "vegetable shortening"], wrong="soybean oil"))

# bruce-lee
q = "What is Bruce Lee's birth name?"
labels = ["family background", "film career", "martial arts"]
pqs = ["Which language does Bruce Lee's birth name come from?",
       "Under what name was Bruce Lee's birth name credited in his childhood films?",
       "How did Bruce Lee's birth name relate to the name he used as a martial arts teacher?"]
eqs = ["What name was Bruce Lee given at birth?", "What was Bruce Lee originally named?",
       "What is the birth name of Bruce Lee?", "Bruce Lee was born with what name?"]
ans = {q: "Lee Jun-fan"}
ans.update({x: "Lee Jun-fan" for x in eqs})
ans.update({x: "Lee Yuen Kam" for x in pqs})
rules = [keep(x) for x in [q] + eqs]
rules += [{"question": x, "partners": {"Lee Jun-fan": "adopt"}, "otherwise": "keep"} for x in pqs]
out.append(scenario("bruce-lee", q, "What is a person's birth name?", labels, pqs, eqs, ans,
                    ["Lee Jun-fan", "Lee Jun-fan", "Lee Yuen Kam", "Lee Jun-fan", "Bruce Lee"], rules,
                    ["Lee Jun-fan"], wrong="Lee Yuen Kam"))

# stalemate: two agents flip every round, three hold distinct answers
q = "Who composed the opera The Silver Lantern?"
labels = ["premiere", "libretto", "musical style"]
pqs = ["In which city did the composer of the opera The Silver Lantern live at its premiere?",
       "Who wrote the libretto together with the composer of the opera The Silver Lantern?",
       "Which school of composition did the composer of the opera The Silver Lantern belong to?"]
eqs = ["Which composer wrote the opera The Silver Lantern?"]
A, B, C = "Ada Brandt", "Milo Varga", "Irene Solberg"
# Agents whose question lands in the flip-flop role are the original and the
# paraphrase; perspectives hold steady.
ans = {q: A, eqs[0]: B, pqs[0]: A, pqs[1]: B, pqs[2]: C}
rules = [
    {"question": q, "rounds": {"1": {"answer": B}, "2": {"answer": A}, "3": {"answer": B}, "4": {"answer": A}}},
    {"question": eqs[0], "rounds": {"1": {"answer": A}, "2": {"answer": B}, "3": {"answer": A}, "4": {"answer": B}}},
]
rules += [keep(x) for x in pqs]
out.append(scenario("stalemate", q, "Who composed a piece of music?", labels, pqs, eqs, ans,
                    [A, B, C, A, B], rules, [A], wrong=B))

# susceptible: everyone knows the answer but adopts a confidently shown wrong one
q = "What is the capital of Australia?"
labels = ["parliament", "city planning", "geography"]
pqs = ["Which building in the capital of Australia houses the federal parliament?",
       "Which architect designed the layout of the capital of Australia?",
       "Which lake lies at the centre of the capital of Australia?"]
eqs = ["Which city is the capital of Australia?", "What city is Australia's capital?",
       "Which city serves as the Australian capital?", "What is the name of Australia's capital city?"]
ans = {x: "Canberra" for x in [q] + pqs + eqs}
rules = [{"question": x, "partners": {"Sydney": "adopt"}, "otherwise": "keep"} for x in [q] + pqs + eqs]
out.append(scenario("susceptible", q, "What is the seat of government of a nation?", labels, pqs, eqs, ans,
                    ["Canberra"] * 5, rules, ["Canberra"], wrong="Sydney"))

for s, rec in out:
    with open(ROOT / "scenarios" / f"{s['scenario_id']}.json", "w") as f:
        json.dump(s, f, indent=2, ensure_ascii=False)
        f.write("\n")
with open(ROOT / "data" / "demo.jsonl", "w") as f:
    for s, rec in out:
        f.write(json.dumps(rec, ensure_ascii=False) + "\n")
