#!/usr/bin/env python3
"""Model test double speaking the line-JSON wire protocol.

Usage: model_double.py MODE H W C [thresholds,...]
  uniform   constant 1/num_classes for 2 classes
  tophalf   top-half white-pixel counter with the given thresholds
  bad       probabilities that do not sum to 1
  malformed answers every request with a non-JSON line
"""

import json
import sys
from bisect import bisect_left


def main():
    mode = sys.argv[1]
    h, w, c = int(sys.argv[2]), int(sys.argv[3]), int(sys.argv[4])
    thresholds = [float(t) for t in sys.argv[5].split(",")] if len(sys.argv) > 5 else []
    num_classes = len(thresholds) + 1 if mode == "tophalf" else 2

    hello = {"type": "hello", "role": "model", "num_classes": num_classes,
             "input_shape": [h, w, c]}
    sys.stdout.write(json.dumps(hello) + "\n")
    sys.stdout.flush()

    half = (h // 2) * w * c

    def probs_for(flat):
        if mode == "uniform":
            return [1.0 / num_classes] * num_classes
        if mode == "bad":
            return [0.5] + [0.2] * (num_classes - 1)
        count = sum(1 for v in flat[:half] if v > 0.5)
        cls = bisect_left(thresholds, count)
        row = [0.0] * num_classes
        row[cls] = 1.0
        return row

    for line in sys.stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        rid = req.get("id")
        if mode == "malformed":
            sys.stdout.write("{oops\n")
            sys.stdout.flush()
            continue
        if req.get("op") != "predict":
            resp = {"id": rid, "error": f"unknown op {req.get('op')!r}"}
        else:
            resp = {"id": rid, "probs": [probs_for(img) for img in req["images"]]}
        sys.stdout.write(json.dumps(resp) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
