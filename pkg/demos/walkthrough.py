"""Bridge distillation end to end on the desk-scale synthetic face set.

Run with ``python3 demos/walkthrough.py``. It uses the standard desk-scale
dataset and takes about three minutes on one core.

The story: a large teacher is trained on private identities only. We never
touch those faces again. A public bridge set is used twice: first to
compress the teacher's 256-d features into a 128-d space that still
separates public identities (stage 1), then to teach a tiny student to map
degraded low-resolution faces into that space (stage 2). Finally the student
is judged on identities neither network has seen.
"""

import time

from bridgedistill.pipeline import PipelineConfig, Workbench


def main():
    wb = Workbench(PipelineConfig())
    print("identities per split:", {k: len(v) for k, v in wb.ds.splits.items()})

    # The teacher sees private identities only; its checkpoint is the sole thing carried forward.
    t0 = time.time()
    wb.teacher("V")
    print(f"teacher trained in {time.time() - t0:.0f}s, private-test accuracy {wb.private_test_accuracy('V'):.3f}")

    # Stage 1 in isolation: how separable are public identities in each feature space?
    cases = wb.adaptation_ablation("V", wb.cfg.distill.with_(teacher_set="V"))
    print("public-test accuracy by adaptation case:")
    for name, label in (("case1", "raw teacher features + softmax"), ("case2", "compressed, classification only"),
                        ("case3", "compressed, classification + soft targets"),
                        ("case4", "classifier over private and public identities")):
        print(f"  {label:<46} {cases[name]:.3f}")

    # Stage 2: three students that differ only in what they are asked to imitate.
    for mode, teacher in (("c", "O"), ("dc", "V"), ("sc", "V")):
        t0 = time.time()
        res = wb.run_cell(16, mode, teacher, seed=0)
        print(f"{res.verify.line()}  ({time.time() - t0:.0f}s)")
    print("c: labels only; dc: raw teacher features; sc: features adapted in stage 1")


if __name__ == "__main__":
    main()
