"""Step a single memory by hand and show where it reads and writes."""

import numpy as np

from memforecast.memory import MemoryConfig, MemoryParams, MemoryState, memory_step
from memforecast.numerics import Tensor


def main():
    np.set_printoptions(precision=3, suppress=True)
    config = MemoryConfig(slots=4, slot_dim=3)
    params = MemoryParams.init(config, np.random.default_rng(0), learned_initial=True)
    state = MemoryState.fresh(config, initial=params.initial.data)
    rng = np.random.default_rng(1)
    for t in range(3):
        before = state.M.data.copy()
        c, state = memory_step(params, Tensor(rng.normal(size=3)), state)
        moved = np.abs(state.M.data - before).sum(axis=1)
        print(f"step {t}: output {c.data}")
        print(f"  slot change {moved}")
    print("final memory\n", state.M.data)


if __name__ == "__main__":
    main()
