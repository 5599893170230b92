"""Named-tensor checkpoint container.

A checkpoint is a numpy ``.npz`` archive (no pickled objects):

* ``param/<name>`` - one float64 array per parameter, shape preserved;
* ``__seed__``     - int64 scalar, the root seed of the run;
* ``__meta__``     - a unicode scalar holding a JSON object (architecture,
  label scheme, training log, ...).

Arrays are stored raw, so loading returns bit-identical values.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

PREFIX = "param/"


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], seed: int,
                    meta: dict | None = None) -> None:
    arrays = {PREFIX + k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}
    arrays["__seed__"] = np.array(seed, dtype=np.int64)
    arrays["__meta__"] = np.array(json.dumps(meta or {}, sort_keys=True))
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], int, dict]:
    with np.load(path, allow_pickle=False) as z:
        tensors = {k[len(PREFIX):]: z[k] for k in z.files if k.startswith(PREFIX)}
        seed = int(z["__seed__"])
        meta = json.loads(str(z["__meta__"]))
    return tensors, seed, meta
