"""Scratch probe for the global-communication comparison (deleted before ship)."""
import json
import sys
import time

import ncadiff as nd


def run(model_kind, steps):
    cfg = nd.resolve_config({
        "model": model_kind, "c": 16, "h": 32, "s": 4, "fourier_steps": 32,
        "e_dim": 4, "enc_dim": 4,
        "schedule": {"T": 50},
        "train": {"steps": steps, "batch": 8, "val_every": 100, "val_items": 48, "seed": 11},
        "data": {"synthetic": {"kind": "bicolor-halves", "size": 32, "count": 512, "seed": 5}},
    })
    model = nd.build_model(cfg)
    tr = nd.Trainer(model, nd.build_dataset(cfg), nd.build_schedule(cfg), cfg.train)
    t0 = time.time()
    rows = tr.run()
    vals = [(r.step, r.val_loss) for r in rows if r.val_loss is not None]
    print(f"{model_kind}: {time.time()-t0:.0f}s", json.dumps(vals), flush=True)
    return vals[-1][1]


steps = int(sys.argv[1]) if len(sys.argv) > 1 else 800
d = run("diff", steps)
f = run("fourierdiff", steps)
print(f"RESULT diff={d:.5f} fourierdiff={f:.5f} fourier_wins={f < d}")
