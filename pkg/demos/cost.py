"""What the student costs compared with the teacher.

Counts are analytic (parameters, multiply-accumulates, activation memory);
throughput is measured on this machine with BLAS pinned to one thread.
Run with ``python3 demos/cost.py``.
"""

from bridgedistill.bench import cost_report, cost_table
from bridgedistill.models import build_student, build_toy_teacher


def main():
    reports = [cost_report(build_student(p, 30, seed=0), p, f"student-{p}", duration_s=1.0) for p in (16, 32, 64)]
    teacher = build_toy_teacher(20, 256, seed=101, private_ids=range(20))
    reports.append(cost_report(teacher, 64, "teacher-64", duration_s=4.0))
    print(cost_table(reports))
    ratio = reports[0].throughput_faces_per_sec / reports[-1].throughput_faces_per_sec
    print(f"\nstudent at 16px runs {ratio:.0f}x faster than the teacher at 64px "
          f"with {reports[-1].params / reports[0].params:.0f}x fewer parameters")


if __name__ == "__main__":
    main()
