from pathlib import Path

import numpy as np
import pytest

from consensuslab.config import (CHECKS, ConfigError, configs_equivalent, load_config, parse_config,
                                 serialize_config, with_overrides)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

BASE = """\
[graph]
n_agents = 3
edges = 1-2, 2-3

[noise]
kind = homogeneous
sigma = 1.0

[gain]
k = 0.5

[initial]
x0 = 1; 0; -1
"""


def error_of(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "exp.cfg")
    return str(info.value)


class TestParse:
    def test_minimal(self):
        cfg = parse_config(BASE)
        assert cfg.graph.n_agents == 3 and cfg.graph.has_edge(0, 1) and not cfg.graph.has_edge(0, 2)
        assert cfg.noise.kind == "homogeneous" and cfg.noise.sigma == 1.0
        assert cfg.gain.scalar_k == 0.5
        np.testing.assert_array_equal(cfg.x0, [1.0, 0.0, -1.0])
        assert cfg.verify.checks == CHECKS

    def test_matrix_gain_and_vector_state(self):
        text = BASE.replace("k = 0.5", "K = 1 0.5; 0 1").replace("x0 = 1; 0; -1", "x0 = 1 2; 0 0; -1 3")
        cfg = parse_config(text)
        np.testing.assert_array_equal(cfg.gain.K, [[1.0, 0.5], [0.0, 1.0]])
        np.testing.assert_array_equal(cfg.x0, [1, 2, 0, 0, -1, 3])

    def test_per_channel_intensities_are_one_based(self):
        cfg = load_config(CONFIG_DIR / "p3_heterogeneous.cfg")
        assert cfg.noise.scalar_intensity(1, 0) == 0.8
        assert cfg.noise.scalar_intensity(0, 1) == 0.5
        assert cfg.noise.scalar_intensity(2, 1) == 0.5

    def test_graph_file_relative_to_config(self, tmp_path):
        (tmp_path / "g.txt").write_text("3\n1 2\n2 3\n")
        text = BASE.replace("n_agents = 3\nedges = 1-2, 2-3", "file = g.txt")
        (tmp_path / "e.cfg").write_text(text)
        assert load_config(tmp_path / "e.cfg").graph.edges == [(0, 1), (1, 2)]

    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIG_DIR.glob("*.cfg")))
    def test_shipped_configs_load(self, name):
        cfg = load_config(CONFIG_DIR / name)
        assert cfg.sim.seed >= 0 and cfg.source.endswith(name)


class TestErrors:
    def test_unknown_key_names_line(self):
        msg = error_of(BASE.replace("k = 0.5", "k = 0.5\ngian = 2"))
        assert msg.startswith("exp.cfg:11:") and "gian" in msg

    def test_bad_number(self):
        msg = error_of(BASE.replace("sigma = 1.0", "sigma = one"))
        assert msg.startswith("exp.cfg:7:") and "[noise]" in msg

    def test_unknown_section(self):
        assert "unknown section [gains]" in error_of(BASE + "\n[gains]\nk = 1\n")

    def test_missing_section(self):
        assert "missing section [gain]" in error_of(BASE.replace("[gain]\nk = 0.5\n", ""))

    def test_channel_not_an_edge(self):
        text = BASE.replace("kind = homogeneous\nsigma = 1.0",
                            "kind = linear_scalar\ndefault = 1\nsigma.1.3 = 2")
        msg = error_of(text)
        assert msg.startswith("exp.cfg:8:") and "sigma.1.3" in msg

    def test_x0_shape(self):
        assert "x0 needs 3 agents" in error_of(BASE.replace("x0 = 1; 0; -1", "x0 = 1; 0"))

    def test_general_noise_rejected(self):
        assert "Python API" in error_of(BASE.replace("kind = homogeneous", "kind = general"))

    def test_unknown_check(self):
        assert "unknown checks" in error_of(BASE + "\n[verify]\nchecks = sandwich\n")

    def test_sim_ranges(self):
        assert "dt > 0" in error_of(BASE + "\n[sim]\ndt = -1\n")
        assert "64-bit" in error_of(BASE + "\n[sim]\nseed = -3\n")

    def test_duplicate_key(self):
        msg = error_of(BASE.replace("k = 0.5", "k = 0.5\nk = 0.6"))
        assert msg.startswith("exp.cfg:11:")

    def test_line_outside_section(self):
        assert error_of("k = 1\n" + BASE).startswith("exp.cfg:1:")

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "missing.cfg")


class TestRoundTrip:
    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIG_DIR.glob("*.cfg")))
    def test_shipped(self, name):
        cfg = load_config(CONFIG_DIR / name)
        again = parse_config(serialize_config(cfg), base_dir=CONFIG_DIR)
        assert configs_equivalent(cfg, again)
        assert serialize_config(again) == serialize_config(cfg)

    def test_random(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            N = int(rng.integers(2, 6))
            edges = [(i, i + 1) for i in range(1, N)]
            n = int(rng.integers(1, 3))
            lines = [f"sigma.{i}.{j} = " + "; ".join(" ".join(repr(float(v)) for v in row)
                                                    for row in rng.standard_normal((n, n)))
                     for a, b in edges for i, j in ((a, b), (b, a))]
            text = (f"[graph]\nn_agents = {N}\nedges = " + ", ".join(f"{a}-{b}" for a, b in edges)
                    + "\n[noise]\nkind = linear_matrix\n" + "\n".join(lines)
                    + f"\n[gain]\nk = {rng.uniform(-2, 2)!r}\nn = {n}\n[initial]\nx0 = "
                    + "; ".join(" ".join(repr(float(v)) for v in rng.standard_normal(n)) for _ in range(N))
                    + f"\n[sim]\nseed = {int(rng.integers(0, 2**63))}\ndt = {rng.uniform(1e-4, 1e-2)!r}\n")
            cfg = parse_config(text)
            assert configs_equivalent(cfg, parse_config(serialize_config(cfg)))

    def test_overrides(self):
        cfg = with_overrides(parse_config(BASE), seed=9, trials=12, output_dir="x")
        assert (cfg.sim.seed, cfg.sim.trials, cfg.output_dir) == (9, 12, "x")
        sc = cfg.sim_config()
        assert (sc.seed, sc.trials) == (9, 12)
