import json

import numpy as np
import pandas as pd
from numpy.testing import assert_array_equal

from privsgd.exports import dumps, read_config_line, read_csv, write_csv


def test_floats_survive_write_and_read(tmp_path, rng):
    values = rng.normal(size=1000) * 10.0 ** rng.integers(-8, 8, size=1000)
    path = write_csv(tmp_path / "floats.csv", pd.DataFrame({"x": values}), {"seed": 1})
    assert_array_equal(read_csv(path)["x"].to_numpy(), values)
    assert read_config_line(path) == {"seed": 1}


def test_dumps_handles_numpy_scalars_and_arrays():
    payload = json.loads(dumps({"a": np.float64(0.5), "b": np.arange(3), "c": np.bool_(True)}))
    assert payload == {"a": 0.5, "b": [0, 1, 2], "c": True}
