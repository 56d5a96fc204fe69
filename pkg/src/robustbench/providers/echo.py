"""Reference provider that answers every task with its canonical solution.

Reads task JSONL on stdin, writes {"task_id", "completion"} JSONL on stdout.
Against an unperturbed corpus it passes everything, so it pins down the
identity case of the whole pipeline: semantics-preserving perturbations must
leave its scores untouched.
"""

import argparse
import json
import sys


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="echo provider: completion := canonical_solution"
    )
    parser.add_argument("--samples", type=int, default=1, help="completions per task")
    args = parser.parse_args(argv)

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        task = json.loads(line)
        for _ in range(args.samples):
            sys.stdout.write(
                json.dumps(
                    {
                        "task_id": task["task_id"],
                        "completion": task.get("canonical_solution", ""),
                    }
                )
                + "\n"
            )
    sys.stdout.flush()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
