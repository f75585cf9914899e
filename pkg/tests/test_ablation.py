import pytest

from physmaster.ablation import VARIANTS, AblationPlan, run_ablation
from physmaster.corpus import ConfigError
from physmaster.training import TrainConfig

from test_training import corpus_enc_config, corpus_gen_config


def tiny_plan(rows, seed=0, **kw):
    return AblationPlan(
        rows=rows,
        seed=seed,
        sft=TrainConfig(stage="sft", steps=3, batch_size=2, lr=1e-3),
        dpo=TrainConfig(
            stage="dpo_model", steps=2, batch_size=2, lr=1e-4,
            n_pair_conditions=3, pair_margin=0.0, sample_steps=2, cfg_scale=1.0,
            checkpoint_every=0,
        ),
        eval_sample_steps=2,
        eval_cfg_scale=1.0,
        eval_batch=8,
        **kw,
    )


def test_base_only_plan_runs_no_training(tiny_corpus):
    plan = tiny_plan(["base"])
    report = run_ablation(
        plan, tiny_corpus, corpus_gen_config(tiny_corpus), corpus_enc_config(tiny_corpus)
    )
    assert report.stats["trained_stages"] == 0
    assert len(report.rows) == 1
    row = report.rows[0]
    assert set(row.metrics) == {"seen", "unseen", "average"}
    assert set(row.metrics["seen"]) == {"l2", "cd", "iou"}


def test_shared_sft_prefix_is_cached(tiny_corpus):
    plan = tiny_plan(["sft_me", "sft_me+dpo_m", "sft_me+dpo_e"])
    report = run_ablation(
        plan, tiny_corpus, corpus_gen_config(tiny_corpus), corpus_enc_config(tiny_corpus)
    )
    # one sft + two dpo stages; the sft prefix is reused from cache
    assert report.stats["trained_stages"] == 3
    assert report.stats["cache_hits"] >= 2
    assert [r.variant for r in report.rows] == ["sft_me", "sft_me+dpo_m", "sft_me+dpo_e"]


@pytest.mark.slow
def test_full_grid_produces_nine_rows_of_nine_cells(tiny_corpus):
    plan = tiny_plan(list(VARIANTS))
    report = run_ablation(
        plan, tiny_corpus, corpus_gen_config(tiny_corpus), corpus_enc_config(tiny_corpus)
    )
    assert len(report.rows) == 9
    cells = [
        report.rows[i].metrics[g][k]
        for i in range(9)
        for g in ("seen", "unseen", "average")
        for k in ("l2", "cd", "iou")
    ]
    assert len(cells) == 9 * 3 * 3
    assert all(isinstance(c, float) for c in cells)
    md = report.to_markdown()
    assert md.count("\n") == 2 + 9  # header, rule, nine body rows
    csv_text = report.to_csv()
    assert len(csv_text.strip().splitlines()) == 10


def test_beta_sweep_appends_extra_rows(tiny_corpus):
    plan = tiny_plan(["sft_me"], beta_sweep=[10.0, 100.0])
    report = run_ablation(
        plan, tiny_corpus, corpus_gen_config(tiny_corpus), corpus_enc_config(tiny_corpus)
    )
    names = [r.variant for r in report.rows]
    assert names == ["sft_me", "sft_me+dpo_m[beta=10]", "sft_me+dpo_m[beta=100]"]


def test_unknown_row_is_rejected(tiny_corpus):
    plan = tiny_plan(["base", "nope"])
    with pytest.raises(ConfigError):
        run_ablation(
            plan, tiny_corpus, corpus_gen_config(tiny_corpus), corpus_enc_config(tiny_corpus)
        )
