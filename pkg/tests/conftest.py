import numpy as np
import pytest

from qelab import anderson, graphs, tree_green

# the reference experiment grid driving the trend checks; mc settings are
# sized for the suite (statistics scale with sqrt(samples), trends do not)
REFERENCE_CONFIG = {
    "q": 2,
    "n_values": [250, 1000, 2000],
    "graph_seeds": [101, 102, 103, 104, 105],
    "pot_seeds": [201, 202, 203, 204, 205],
    "epsilon": 0.2,
    "lambda0": 2.4,
    "eta0_values": [0.2],
    "observable": {"kind": "indicator", "alpha": 0.5, "seed": 17},
    "kernel": {"shape": "edges", "range": 1, "value": 1.0},
    "mc": {"samples": 256, "depth": 12, "lambda_spacing": 0.05, "leaf_mode": "free", "seed": 911},
    "lln": {"k_max": 4},
}


@pytest.fixture(scope="session")
def decompose_cache():
    """Memoized (graph, potential, spectrum) per grid point for the session."""
    cache = {}

    def get(n, graph_seed, pot_seed, epsilon, q=2):
        key = (n, graph_seed, pot_seed, epsilon, q)
        if key not in cache:
            g = graphs.generate_random_regular(n, q, graph_seed)
            pot = anderson.sample_potential(
                n, anderson.PotentialSpec(), epsilon, pot_seed
            )
            sd = anderson.eigendecompose(anderson.assemble(g, pot))
            cache[key] = (g, pot, sd)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def reference_profile():
    """Distance ratio profile at the reference parameters (eta0 = 0.2)."""
    return tree_green.distance_ratio_profile(
        2, anderson.PotentialSpec(), 0.2, 0.2, 1,
        np.linspace(-2.4, 2.4, 97), samples=256, seed=911_000, depth=12,
    )


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory):
    """The reference config executed twice through the CLI (thread count 1)."""
    import json

    from qelab import cli

    base = tmp_path_factory.mktemp("reference")
    cfg_path = base / "config.json"
    cfg_path.write_text(json.dumps(REFERENCE_CONFIG))
    outs = []
    for tag in ("a", "b"):
        out = base / f"out_{tag}"
        code = cli.main(
            ["run", "--config", str(cfg_path), "--out", str(out), "--threads", "1"]
        )
        assert code == 0
        outs.append(out)
    return outs
