import itertools
import json
from dataclasses import replace

import numpy as np
import pytest

from churnlab import harness as H
from churnlab import metrics
from churnlab.data import SeedBundle, save_csv
from churnlab.errors import UsageError
from churnlab.losses import MethodSpec

SMALL = H.ExperimentConfig(
    dataset={"kind": "blobs", "n_per_class": 40, "k": 3, "d": 4, "spread": 1.0, "seed": 0},
    hidden=[8],
    lr={"peak_lr": 0.05, "warmup_steps": 10, "decay_steps": [150], "decay_factor": 0.1},
    total_steps=200,
    n_runs=3,
)


def with_method(config, **kw):
    return replace(config, method=MethodSpec(**kw))


def test_same_bundle_same_artifact():
    b = SeedBundle(3, 4, 5)
    a1 = H.run_training(SMALL, b)
    a2 = H.run_training(SMALL, b)
    assert a1.ok and a1.probs_digest() == a2.probs_digest()
    assert a1.params_digest == a2.params_digest
    assert a1.probs.shape == (24, 3)
    assert 0 <= a1.accuracy <= 1


@pytest.mark.parametrize(
    "method",
    [
        dict(kind="entropy", alpha=0.0),
        dict(kind="skl", alpha=0.0),
        dict(kind="codistill_l1", beta=0.0),
        dict(kind="codistill_skl", beta=0.0),
        dict(kind="codistill_ce_independent", beta=0.0),
        dict(kind="combined", alpha=0.0, beta=0.0),
    ],
)
def test_endpoint_configurations_reproduce_baseline(method):
    b = SeedBundle(1, 2, 3)
    base = H.run_training(SMALL, b)
    other = H.run_training(with_method(SMALL, **method), b)
    assert other.probs.tobytes() == base.probs.tobytes()
    assert other.params_digest == base.params_digest


def test_coupling_changes_the_trajectory():
    b = SeedBundle(1, 2, 3)
    base = H.run_training(SMALL, b)
    co = H.run_training(with_method(SMALL, kind="codistill_skl", beta=0.5), b)
    assert co.params_digest != base.params_digest
    assert co.train_cost == 2


def test_all_channels_fixed_gives_zero_churn():
    cfg = replace(SMALL, n_runs=4, fix_init=True, fix_order=True, fix_augment=True)
    s = H.run_experiment(cfg)
    assert s.stats["churn"] == [0.0, 0.0]
    assert len(s.pairs) == 6


def test_fix_init_shares_initial_parameters():
    cfg = replace(SMALL, fix_init=True)
    digests = {H.run_training(cfg, H.derive_bundle(cfg, i)).init_digest for i in range(3)}
    assert len(digests) == 1
    free = {H.run_training(SMALL, H.derive_bundle(SMALL, i)).init_digest for i in range(3)}
    assert len(free) == 3


def test_bundle_derivation():
    cfg = replace(SMALL, seeds=SeedBundle(10, 20, 30), fix_order=True)
    assert H.derive_bundle(cfg, 3) == SeedBundle(13, 20, 33)


def test_two_runs_one_pair():
    s = H.run_experiment(replace(SMALL, n_runs=2))
    assert len(s.pairs) == 1 and s.n_runs == 2


def test_n_runs_below_two_rejected():
    with pytest.raises(UsageError):
        H.run_experiment(replace(SMALL, n_runs=1))


def test_summary_recomputed_from_disk_is_identical(tmp_path):
    cfg = replace(SMALL, n_runs=5, out_dir=str(tmp_path))
    s = H.run_experiment(cfg)
    assert len(s.pairs) == 10
    again = H.summary_from_disk(tmp_path, cfg)
    assert again == s
    assert json.dumps(again.to_dict()) == json.dumps(s.to_dict())
    loaded = H.load_summaries(tmp_path)
    assert loaded == [s]


def test_summary_means_match_direct_recomputation(tmp_path):
    cfg = replace(SMALL, n_runs=4, out_dir=str(tmp_path))
    s = H.run_experiment(cfg)
    arts = H.load_artifacts(tmp_path)
    churns = [
        float(np.mean(a.probs.argmax(1) != b.probs.argmax(1))) for a, b in itertools.combinations(arts, 2)
    ]
    assert s.stats["churn"][0] == pytest.approx(np.mean(churns), abs=1e-15)
    assert s.stats["churn"][1] == pytest.approx(np.std(churns, ddof=1), abs=1e-15)
    acc = [float(np.mean(a.probs.argmax(1) == a.eval_labels)) for a in arts]
    assert s.stats["accuracy"][0] == pytest.approx(np.mean(acc), abs=1e-15)


def test_parallel_jobs_match_serial():
    a = H.run_experiment(SMALL, jobs=1)
    b = H.run_experiment(SMALL, jobs=2)
    assert a == b


def test_beta_zero_experiment_matches_baseline_experiment():
    a = H.run_experiment(SMALL)
    b = H.run_experiment(with_method(SMALL, kind="codistill_skl", beta=0.0))
    assert a.stats == b.stats
    assert [r.to_dict() for _, _, r in a.pairs] == [r.to_dict() for _, _, r in b.pairs]


# ---- pairwise summaries on hand-built artifacts ----------------------------------------


def _art(probs, labels, i, eval_digest="e"):
    probs = np.asarray(probs, dtype=float)
    return H.RunArtifact(
        config_digest="c",
        run_index=i,
        seeds=SeedBundle(i, i, i),
        method="baseline",
        train_cost=1,
        status="ok",
        steps=0,
        eval_digest=eval_digest,
        eval_labels=np.asarray(labels),
        probs=probs,
        accuracy=metrics.accuracy(probs, labels),
        mean_entropy=float(metrics.entropy(probs).mean()),
        mean_confidence=float(metrics.confidence(probs).mean()),
        ece=metrics.ece(probs, labels),
    )


Y4 = [0, 1, 1, 0]
P_A = [[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.7, 0.3]]
P_B = [[0.8, 0.2], [0.3, 0.7], [0.3, 0.7], [0.4, 0.6]]
P_C = [[0.4, 0.6], [0.1, 0.9], [0.45, 0.55], [0.55, 0.45]]


def test_duplicated_artifact_has_zero_churn():
    a = _art(P_A, Y4, 0)
    s = H.summarize_pairwise([a, a])
    assert s.stats["churn"] == [0.0, 0.0]


def test_three_hand_built_artifacts():
    s = H.summarize_pairwise([_art(P_A, Y4, 0), _art(P_B, Y4, 1), _art(P_C, Y4, 2)])
    # predictions: A=[0,1,0,0], B=[0,1,1,1], C=[1,1,1,0]
    # disagreements: AB rows {2,3}, AC rows {0,2}, BC rows {0,3}
    assert s.stats["churn"][0] == pytest.approx(0.5, abs=1e-15)
    assert s.stats["churn"][1] == 0.0
    # each model misses exactly one row
    assert s.stats["accuracy"] == [0.75, 0.0]
    # churn on rows model 1 gets right: AB: A right on {0,1,3} -> 1/3; AC: A right {0,1,3} -> 1/3;
    # BC: B right on {0,1,2} -> 1/3
    assert s.stats["churn_correct"][0] == pytest.approx(1 / 3, abs=1e-15)
    assert [(i, j) for i, j, _ in s.pairs] == [(0, 1), (0, 2), (1, 2)]


def test_mismatched_eval_sets_rejected():
    with pytest.raises(UsageError):
        H.summarize_pairwise([_art(P_A, Y4, 0, "x"), _art(P_B, Y4, 1, "y")])


def test_failed_runs_are_excluded():
    ok = [_art(P_A, Y4, 0), _art(P_B, Y4, 1)]
    bad = replace(ok[0], run_index=2, status="failed", probs=None)
    s = H.summarize_pairwise(ok + [bad], n_failed=1)
    assert s.n_runs == 2 and s.n_failed == 1 and len(s.pairs) == 1


def test_divergent_run_is_marked_failed_with_step(tmp_path):
    # finite but enormous features overflow the first layer on the first step
    rng = np.random.default_rng(0)
    save_csv(tmp_path / "huge.csv", 1.7e308 * rng.choice([-1.0, 1.0], (50, 8)), np.arange(50) % 2)
    cfg = replace(SMALL, dataset={"kind": "csv", "path": str(tmp_path / "huge.csv")}, out_dir=str(tmp_path))
    with np.errstate(all="ignore"):
        art = H.run_training(cfg, SeedBundle())
    assert art.status == "failed"
    assert art.failed_step == 0
    assert H.load_artifacts(tmp_path)[0].status == "failed"
    with pytest.raises(H.ExperimentError), np.errstate(all="ignore"):
        H.run_experiment(replace(cfg, n_runs=2))


# ---- persistence --------------------------------------------------------------------------


def test_artifact_round_trip(tmp_path):
    a = H.run_training(SMALL, SeedBundle(7, 8, 9))
    path = a.save(tmp_path)
    assert path.name == f"run_{SMALL.digest()}_0.json"
    back = H.RunArtifact.from_dict(json.loads(path.read_text()), tmp_path)
    assert back.probs.tobytes() == a.probs.tobytes()
    assert back.to_dict() == a.to_dict()


def test_large_probability_matrix_goes_to_sidecar(tmp_path):
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.ones(3), H.SIDECAR_ROWS + 1)
    y = rng.integers(0, 3, len(p))
    a = _art(p, y, 0)
    path = a.save(tmp_path)
    assert json.loads(path.read_text())["probs"] is None
    assert (tmp_path / "run_c_0.probs.csv").exists()
    back = H.load_artifacts(tmp_path)[0]
    assert back.probs.tobytes() == p.tobytes()


def test_config_dict_round_trip_and_digest():
    cfg = with_method(SMALL, kind="combined", alpha=0.1, beta=0.04)
    again = H.ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.digest() == cfg.digest()
    assert replace(cfg, out_dir="/elsewhere").digest() == cfg.digest()
    assert with_method(SMALL, kind="combined", alpha=0.2, beta=0.04).digest() != cfg.digest()


@pytest.mark.parametrize(
    "d, key",
    [
        ({"epochs": 3}, "epochs"),
        ({"method": {"gamma": 1}}, "method.gamma"),
        ({"seeds": {"init": 1}}, "seeds.init"),
        ({"lr": {"peak": 1}}, "lr.peak"),
        ({"dataset": {"kind": "blobs", "radius": 2}}, "dataset.radius"),
    ],
)
def test_unknown_config_keys_are_named(d, key):
    with pytest.raises(UsageError, match=key):
        H.ExperimentConfig.from_dict(d)


# ---- ensemble distillation ------------------------------------------------------------------


def test_teacher_average_is_a_distribution():
    cfg = with_method(SMALL, kind="ensemble_distill", n_teachers=2)
    singles, avg = H.teacher_ensemble_probs(cfg, SeedBundle(1, 1, 1))
    assert np.all(np.abs(avg.sum(axis=1) - 1) <= 1e-9)
    labels = H.load_dataset(cfg.dataset).y_eval
    best = max(metrics.accuracy(p, labels) for p in singles)
    assert metrics.accuracy(avg, labels) >= best - 0.02


def test_student_tracks_a_teacher_sharing_its_seeds():
    cfg = with_method(SMALL, kind="ensemble_distill", n_teachers=1, temperature=1.0)
    b = SeedBundle(4, 4, 4)
    student = H.ensemble_distill_run(cfg, b, teacher_bundles=[b])
    teacher = H.run_training(SMALL, b)
    other = H.run_training(SMALL, SeedBundle(5, 5, 5))
    assert student.train_cost == 2
    assert metrics.churn(student.probs, teacher.probs) <= metrics.churn(teacher.probs, other.probs)


def test_ensemble_experiment_runs():
    cfg = with_method(replace(SMALL, n_runs=2), kind="ensemble_distill", n_teachers=2, temperature=2.0)
    s = H.run_experiment(cfg)
    assert s.train_cost == 3 and s.method == "ensemble_distill"


# ---- ablation ----------------------------------------------------------------------------------


def test_ablation_grid_cells():
    cells = H.ablation_grid(replace(SMALL, n_runs=2))
    assert [c for c, _ in cells] == list(H.ABLATION_CELLS)
    by_cell = dict(cells)
    assert by_cell[(True, True)].stats["churn"] == [0.0, 0.0]
    text = H.format_ablation(cells)
    assert "Churn%" in text and text.count("\n") == 4


def test_table_stars_lowest_churn():
    a = H.summarize_pairwise([_art(P_A, Y4, 0), _art(P_A, Y4, 1)], label="same")
    b = H.summarize_pairwise([_art(P_A, Y4, 0), _art(P_C, Y4, 1)], label="diff")
    rows = H.table_rows([a, b])
    assert rows[0][3].endswith("*") and not rows[1][3].endswith("*")
    assert H.table_rows([a])[0][3] == "0.00±0.00"
    assert H.format_table([a]).splitlines()[0].split() == list(H.TABLE_COLUMNS)


# ---- desk-scale regression bands (measured, then pinned) ----------------------------------------


def test_default_baseline_accuracy_band():
    art = H.run_training(H.ExperimentConfig(), SeedBundle())
    assert art.accuracy >= 0.80


def test_two_dimensional_blobs_show_churn():
    # at dataset seeds 0 and 1 every run lands on the same boundary; seed 2 does not
    cfg = H.ExperimentConfig(dataset={"kind": "blobs", "n_per_class": 200, "k": 3, "d": 2, "spread": 1.0, "seed": 2})
    assert H.run_experiment(cfg).stats["churn"][0] > 0


def test_fixing_initialisation_does_not_raise_churn():
    free = H.run_experiment(H.ExperimentConfig())
    fixed = H.run_experiment(H.ExperimentConfig(fix_init=True))
    assert free.stats["churn"][0] > 0
    assert fixed.stats["churn"][0] <= free.stats["churn"][0]
