"""Buffer planning walkthrough: how liveness-driven slot reuse bounds the
activation memory of a deep encoder-decoder, verified against unplanned
execution.

Run from the repository root:  python3 demos/memory_planning.py
"""

import numpy as np

from enetcpu import build_enet, execute, init_weights, optimize, plan_buffers


def main():
    g = build_enet(12, 256, 256)
    store = init_weights(g, seed=5)
    g, store, _ = optimize(g, store)

    plan = plan_buffers(g)
    print(f"{len(g.nodes)} nodes share {len(plan.slot_sizes)} buffers")
    print(f"peak activation memory : {plan.peak_bytes / 1e6:8.2f} MB")
    print(f"without any reuse      : {plan.no_reuse_bytes / 1e6:8.2f} MB")
    print(f"reuse factor           : "
          f"{plan.no_reuse_bytes / plan.peak_bytes:8.1f}x")
    print(f"retained index tensors : {len(plan.retained)} "
          f"(pooling argmaxes the decoder unpools with)")

    # how many nodes land in each slot
    occupancy = np.bincount([plan.slot_of[i] for i in plan.order
                             if i in plan.slot_of])
    print("busiest slots (nodes assigned):",
          ", ".join(str(int(v)) for v in sorted(occupancy, reverse=True)[:8]))

    rng = np.random.default_rng(0)
    x = rng.uniform(-1.0, 1.0, (3, 256, 256)).astype(np.float32)

    plain = execute(g, store, x)
    planned = execute(g, store, x, plan)
    poisoned = execute(g, store, x, plan, poison=True)
    same = (np.array_equal(plain, planned)
            and np.array_equal(plain, poisoned))
    print(f"planned and poison-checked runs match unplanned bitwise: {same}")
    if not same:
        raise SystemExit("buffer reuse changed the output!")


if __name__ == "__main__":
    main()
