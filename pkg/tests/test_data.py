import math

import numpy as np
import pytest

from cpt.data import (SbmSpec, generate_sbm, load_dataset_dir, load_graph, read_features,
                      save_dataset_dir, split_classes, write_features)
from cpt.errors import ConsistencyError, InputError, ParseError
from cpt.graph import UNLABELED, Graph


def write_files(tmp_path, edges_text, features, labels_text):
    e, f, l = tmp_path / "e.tsv", tmp_path / "f.bin", tmp_path / "l.txt"
    e.write_text(edges_text)
    write_features(f, np.asarray(features, dtype=np.float32))
    l.write_text(labels_text)
    return e, f, l


def test_minimal_files(tmp_path):
    g = load_graph(*write_files(tmp_path, "0\t1\n", [[1.0], [2.0]], "0\n1\n"))
    assert g.num_nodes == 2 and g.num_edges == 1
    assert g.features.dtype == np.float32


def test_duplicate_directions_dedup(tmp_path, caplog):
    g = load_graph(*write_files(tmp_path, "# header\n1\t0\n0\t1\n1\t1\n", [[0.0], [0.0]], "0\n-1\n"))
    assert g.edges.tolist() == [[0, 1]]
    assert g.labels.tolist() == [0, UNLABELED]
    assert "dropped 2" in caplog.text


def test_feature_binary_layout(tmp_path):
    path = tmp_path / "f.bin"
    write_features(path, np.arange(6, dtype=np.float32).reshape(3, 2))
    raw = path.read_bytes()
    assert raw[:16] == (3).to_bytes(8, "little") + (2).to_bytes(8, "little")
    assert np.frombuffer(raw[16:], dtype="<f4").tolist() == [0, 1, 2, 3, 4, 5]


def test_malformed_edge_line_reports_line_number(tmp_path):
    files = write_files(tmp_path, "0\t1\n0 1\n", [[0.0], [0.0]], "0\n0\n")
    with pytest.raises(ParseError) as exc:
        load_graph(*files)
    assert exc.value.lineno == 2


def test_bad_label_line(tmp_path):
    files = write_files(tmp_path, "0\t1\n", [[0.0], [0.0]], "0\nx\n")
    with pytest.raises(ParseError) as exc:
        load_graph(*files)
    assert exc.value.lineno == 2


def test_node_count_mismatch(tmp_path):
    with pytest.raises(ConsistencyError):
        load_graph(*write_files(tmp_path, "0\t1\n", [[0.0], [0.0]], "0\n0\n0\n"))
    with pytest.raises(ConsistencyError):
        load_graph(*write_files(tmp_path, "0\t5\n", [[0.0], [0.0]], "0\n0\n"))


def test_truncated_feature_body(tmp_path):
    path = tmp_path / "f.bin"
    write_features(path, np.zeros((3, 2), dtype=np.float32))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ConsistencyError):
        read_features(path)


def test_round_trip(tmp_path):
    g = generate_sbm(SbmSpec(3, 10, 0.5, 0.05, feature_dim=5, seed=1))
    save_dataset_dir(g, tmp_path)
    h = load_dataset_dir(tmp_path)
    assert h.features.tobytes() == g.features.tobytes()
    np.testing.assert_array_equal(h.edges, g.edges)
    np.testing.assert_array_equal(h.labels, g.labels)


def test_sbm_two_triangles():
    g = generate_sbm(SbmSpec(2, 3, intra_p=1.0, inter_p=0.0, seed=0))
    assert g.edges.tolist() == [[0, 1], [0, 2], [1, 2], [3, 4], [3, 5], [4, 5]]


def test_sbm_binomial_edge_count():
    # oracle: edge count ~ Binomial(C(20, 2), 0.5)
    n_pairs = math.comb(20, 2)
    mean, sd = 0.5 * n_pairs, math.sqrt(n_pairs * 0.25)
    counts = np.array([generate_sbm(SbmSpec(1, 20, 0.5, 0.0, seed=s)).num_edges for s in range(100)])
    assert abs(counts.mean() - mean) < 3 * sd / math.sqrt(counts.size)
    assert np.all(np.abs(counts - mean) < 4 * sd)
    assert np.mean(np.abs(counts - mean) < 3 * sd) >= 0.97


def test_sbm_deterministic():
    spec = SbmSpec(4, 10, 0.3, 0.02, seed=11)
    a, b = generate_sbm(spec), generate_sbm(spec)
    np.testing.assert_array_equal(a.edges, b.edges)
    assert a.features.tobytes() == b.features.tobytes()


def test_sbm_no_cross_block_edges_when_inter_zero():
    g = generate_sbm(SbmSpec(5, 12, 0.4, 0.0, seed=2))
    assert np.all(g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]])


def test_sbm_features_carry_block_signature():
    g = generate_sbm(SbmSpec(3, 200, 0.1, 0.01, feature_dim=4, feature_noise=0.1, seed=0))
    means = np.stack([g.features[g.labels == c].mean(axis=0) for c in range(3)])
    np.testing.assert_allclose(means[:, :3], np.eye(3), atol=0.05)


def test_sbm_spec_validation():
    with pytest.raises(InputError):
        SbmSpec(2, 3, intra_p=0.1, inter_p=0.1)
    with pytest.raises(InputError):
        SbmSpec(2, 3, intra_p=0.5, inter_p=0.1, feature_dim=0)


def _labels_graph(n_classes, per=2):
    n = n_classes * per
    return Graph(n, [], np.zeros((n, 1)), np.repeat(np.arange(n_classes), per))


def test_split_sizes_and_partition():
    g = _labels_graph(12)
    sp = split_classes(g, (6, 2, 4), np.random.default_rng(0))
    assert (len(sp.base_classes), len(sp.validation_classes), len(sp.novel_classes)) == (6, 2, 4)
    assert sp.all_classes() == set(range(12))


def test_split_cora_shape():
    sp = split_classes(_labels_graph(70, per=1), (25, 20, 25), np.random.default_rng(1))
    assert (len(sp.base_classes), len(sp.validation_classes), len(sp.novel_classes)) == (25, 20, 25)


def test_split_degenerate_all_base():
    sp = split_classes(_labels_graph(5), (5, 0, 0), np.random.default_rng(0))
    assert sp.base_classes == set(range(5)) and not sp.novel_classes


def test_split_ignores_unlabeled_and_checks_counts():
    g = Graph(4, [], np.zeros((4, 1)), [0, 1, UNLABELED, 2])
    with pytest.raises(InputError):
        split_classes(g, (1, 1, 2), np.random.default_rng(0))
    assert split_classes(g, (1, 1, 1), np.random.default_rng(0)).all_classes() == {0, 1, 2}


@pytest.mark.parametrize("seed", range(20))
def test_split_disjoint_for_every_seed(seed):
    sp = split_classes(_labels_graph(12), (6, 2, 4), np.random.default_rng(seed))
    assert not (sp.base_classes & sp.novel_classes)
    assert not (sp.base_classes & sp.validation_classes)
    assert not (sp.validation_classes & sp.novel_classes)
    assert sp == split_classes(_labels_graph(12), (6, 2, 4), np.random.default_rng(seed))
