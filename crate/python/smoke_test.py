#!/usr/bin/env python3
"""Smoke test for the stat_py extension module.

Build the module first, then run this script from the repository root:

    cargo build -p stat-py --release
    python3 python/smoke_test.py
"""

import json
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        REPO / "target" / "release" / "libstat_py.so",
        REPO / "target" / "debug" / "libstat_py.so",
        REPO / "target" / "release" / "libstat_py.dylib",
        REPO / "target" / "debug" / "libstat_py.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("stat_py is not built; run: cargo build -p stat-py --release")
    staging = Path(tempfile.mkdtemp(prefix="stat_py_"))
    shutil.copy(built, staging / "stat_py.so")
    sys.path.insert(0, str(staging))
    import stat_py

    return stat_py


def check(name, got, expected):
    assert got == expected, f"{name}: expected {expected!r}, got {got!r}"
    print(f"  ok: {name}")


def main():
    stat_py = load_module()
    print("module loaded:", stat_py.__name__)

    check("segment_steps", stat_py.segment_steps("a\n\nb\n\nc"), ["a", "b", "c"])
    check(
        "extract_final_answer",
        stat_py.extract_final_answer("so a/c = 5/-1 = \\boxed{-5}."),
        "-5",
    )
    check("extract absent", stat_py.extract_final_answer("no marker"), None)
    check("normalize_answer", stat_py.normalize_answer("  a   b "), "a b")
    check("canonical_skill", stat_py.canonical_skill("Modular Arithmetic"), "modular_arithmetic")

    check("classify_trace easy", stat_py.classify_trace([0.9, 0.9, 0.9]), False)
    check("classify_trace hard", stat_py.classify_trace([0.9, 0.6, 0.95]), True)
    check("classify_orm", stat_py.classify_orm([0.3, 0.95]), False)
    check(
        "classify_consistency",
        stat_py.classify_consistency(["5", "5", "7", "8", "9"]),
        False,
    )

    metrics = stat_py.classification_metrics(
        ["a", "b", "e"], ["a", "b", "c", "d"],
        ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"],
    )
    check("metrics accuracy", metrics["accuracy"], 0.7)
    check("metrics recall", metrics["recall"], 0.5)

    score, majority, kept = stat_py.score_consistency(
        ["x \\boxed{5}", "y \\boxed{5}", "z \\boxed{7}"]
    )
    check("consistency score", (score, majority, kept), (2, "5", [0, 1]))

    tags = stat_py.parse_tagged("<judge>incorrect</judge><skill>a, b</skill>", ["judge", "skill"])
    check("parse_tagged", tags, {"judge": ["incorrect"], "skill": ["a, b"]})

    catalog = stat_py.SkillCatalog.load(str(REPO / "data" / "skills.json"))
    check("catalog has modular_arithmetic",
          catalog.contains("number_theory", "modular_arithmetic"), True)
    print(f"  ok: catalog total entries = {catalog.total()}")

    # Drive the pipeline end to end on the bundled fixtures.
    out_dir = Path(tempfile.mkdtemp(prefix="stat_out_"))
    config_text = (REPO / "fixtures" / "config.toml").read_text()
    config_text = config_text.replace('output_dir = "out"', f'output_dir = "{out_dir}"')
    config_path = out_dir / "config.toml"
    config_path.write_text(config_text)

    counts = stat_py.run_stage1(str(config_path))
    check("stage1 difficult_val", counts["difficult_val"], 2)
    entries = stat_py.run_stage2(str(config_path))
    check("stage2 entries", entries, 2)
    manifest_counts = stat_py.run_stage3(str(config_path), "stat_sel")
    check("stage3 emitted", manifest_counts["emitted_pairs"], 8)

    profile = stat_py.MissingSkillProfile.load(str(out_dir / "profile.jsonl"))
    check("profile len", len(profile), 2)
    check("profile agreement with itself", profile.agreement(profile), 1.0)
    top = profile.top_k(1)
    check("top missing skill", top[0][0], "solving_equations")

    dataset_lines = (out_dir / "dataset_stat_sel.jsonl").read_text().splitlines()
    pairs = [json.loads(line) for line in dataset_lines]
    assert all(p["source_method"] == "stat_sel" for p in pairs)
    print(f"  ok: dataset has {len(pairs)} stat_sel pairs")

    print("smoke test passed")


if __name__ == "__main__":
    main()
