"""Exercise the Python bindings end to end on a small synthetic catalog."""

import convshop_py as cs

catalog = cs.Catalog.synthetic(n=400, seed=3)
print(catalog)
assert len(catalog) == 400
assert catalog.categories()

pref = cs.sample_preference(catalog, episode=0, seed=5)
target = catalog.product(pref["target_id"])
print("target:", target["title"])

plan = cs.plan(catalog, episode=0, seed=5)
assert pref["target_id"] in plan["final_candidates"]
print("plan:", plan["trace"])

records = cs.generate(catalog, episodes=20, seed=5, strategy="interactive", workers=2)
assert len(records) == 20

reference = cs.evaluate(catalog, records, extractor="reference")
baseline = cs.evaluate(catalog, records, extractor="baseline", ks=[1, 10])
print("reference MRR %.3f, baseline MRR %.3f" % (reference["ranking"]["mrr"], baseline["ranking"]["mrr"]))
assert reference["query"]["exact_f1"] == 1.0

index = cs.Bm25Index(catalog)
top = index.rank(target["title"], k=5)
assert top and all(top[i][1] >= top[i + 1][1] for i in range(len(top) - 1))

stats = cs.stats(records)
print({domain: s["conversations"] for domain, s in stats.items()})

assert cs.exact_f1("a b", "a b") == 1.0
assert 0.0 <= cs.rouge_l("red mug", "blue mug") <= 1.0
print("ok")
