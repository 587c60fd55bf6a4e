"""Regenerates the static test fixtures. Output is deterministic."""
import json
import random

COMMITS = [
    ("a1f3c9e", "fix null check in config loader",
     "Fix null pointer dereference when config file is missing",
     ["Fix null pointer dereference when the config file is missing",
      "Guard config loader against a missing file"]),
    ("b27d410", "bump version",
     "Update version number to 2.3.1",
     ["Bump version to 2.3.1"]),
    ("c90e1b2", "add retries to http client",
     "Add retry logic with exponential backoff to the HTTP client",
     ["Add retry with exponential backoff to HTTP client", "Retry failed HTTP requests with backoff",
      "Add exponential backoff retries to HttpClient and cover them with tests"]),
    ("d4410aa", "refactor parser",
     "Refactor the expression parser into separate tokenizer and parser classes",
     ["Split expression parser into tokenizer and parser"]),
    ("e5b8c03", "docs: typo",
     "Fix typo in README installation section",
     ["Fix typo in README installation section", "docs: fix typo in install instructions"]),
    ("f61a7d9", "remove unused imports",
     "Remove unused imports from utility modules",
     ["Remove unused imports in utils"]),
    ("0a9c4e1", "support utf-8 filenames",
     "Add support for UTF-8 encoded file names in the archive reader",
     ["Support UTF-8 file names in archive reader", "Archive reader: accept UTF-8 encoded names (fixes #412)"]),
    ("1b3d5f7", "speed up test suite",
     "Run integration tests in parallel to reduce total test time",
     ["Run integration tests in parallel", "Cut CI time by running integration tests on four workers instead of one"]),
]

SUMMARIES = {
    "a1f3c9e": "The loader dereferenced a null pointer whenever the configuration file could not be found on disk.",
    "c90e1b2": "Requests that fail with a transient network error are now retried with exponential backoff up to five times.",
}

PADDING = ["and update the related unit tests", "to improve overall code quality", "in the core module",
           "as part of ongoing maintenance", "with minor cleanup", "for better readability"]


def backward(text, rng):
    # A wordier, generator-like rewrite of an edited message.
    return text[0].upper() + text[1:] + " " + rng.choice(PADDING)


def forward(text, rng):
    words = text.split()
    keep = max(2, len(words) - rng.randint(0, 3))
    return " ".join(words[:keep])


def corpus():
    rng = random.Random(7)
    lines = []
    for cid, orig, g, experts in COMMITS:
        nodes = [{"node_id": "g0", "kind": "generated", "source": "model", "text": g}]
        edges = []
        generated = ["g0"]
        for k, e in enumerate(experts):
            nodes.append({"node_id": f"e{k}", "kind": "edited", "source": "expert", "text": e})
            edges.append({"from": "g0", "to": f"e{k}", "method": "human-edit"})
            nodes.append({"node_id": f"e{k}~bwd1", "kind": "generated", "source": "synthetic-backward",
                          "text": backward(e, rng)})
            edges.append({"from": f"e{k}", "to": f"e{k}~bwd1", "method": "llm-backward"})
            generated.append(f"e{k}~bwd1")
        texts = {n["node_id"]: n["text"] for n in nodes}
        for gid in generated:
            nodes.append({"node_id": f"{gid}~fwd1", "kind": "edited", "source": "synthetic-forward",
                          "text": forward(texts[gid], rng)})
            edges.append({"from": gid, "to": f"{gid}~fwd1", "method": "llm-forward"})
        rec = {"commit_id": cid,
               "diff": f"diff --git a/src/{cid}.c b/src/{cid}.c\n@@ -1,3 +1,4 @@\n-old line\n+new line\n",
               "original_message": orig, "nodes": nodes, "edges": edges}
        if cid in SUMMARIES:
            rec["summary"] = SUMMARIES[cid]
        lines.append(json.dumps(rec, sort_keys=True))
    with open("small_corpus.jsonl", "w") as f:
        f.write("\n".join(lines) + "\n")


def telemetry():
    # 78 of 100 records have zero edit distance; the other 22 average 360 characters of generated text.
    rows = ["ed_value,gen_length"]
    rows += [f"0,{200 + (i * 37) % 300}" for i in range(78)]
    eds = [150, 180, 200, 210, 215, 220, 225, 226, 228, 230, 232, 235, 240, 250, 260, 270, 120, 300, 340, 90, 60, 226]
    offsets = [-100, 100, -60, 60, -40, 40, -20, 20, 0, 0, -10, 10, 30, -30, 5, -5, 50, -50, 15, -15, 0, 0]
    assert sum(offsets) == 0
    rows += [f"{e},{360 + d}" for e, d in zip(eds, offsets)]
    with open("telemetry.csv", "w") as f:
        f.write("\n".join(rows) + "\n")


def released():
    rows = []
    for cid, orig, g, experts in COMMITS[:3]:
        for e in experts:
            rows.append({"hash": cid, "G_text": g, "E_text": e, "G_type": "initial", "E_type": "expert_labeled",
                         "is_related": True, "original_message": orig, "diff": "diff --git a/x b/x\n"})
    with open("released_sample.jsonl", "w") as f:
        f.write("\n".join(json.dumps(r) for r in rows) + "\n")


if __name__ == "__main__":
    corpus()
    telemetry()
    released()
