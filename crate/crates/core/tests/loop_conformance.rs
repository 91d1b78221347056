use festlab::tasks::TaskSpec;
use festlab::trainer::{TrainConfig, Trainer, Variant};

fn small(variant: Variant) -> TrainConfig {
    let mut c = TrainConfig::for_variant(variant);
    c.steps = 4;
    c.batch_prompts = 4;
    c.minibatch = 8;
    c.objective.group_size = 4;
    c.task = TaskSpec::summod(5, vec![1, 2]).with_hard(vec![4], 0.5);
    c.n_expert = 4;
    c.n_answer_only = 24;
    c.n_eval = 8;
    c
}

#[test]
fn one_snapshot_refresh_and_balanced_minibatches_per_step() {
    for v in Variant::ALL {
        let cfg = small(v);
        let mut t = Trainer::new(cfg.clone()).unwrap();
        for s in 0..cfg.steps {
            let (_, trace) = t.step().unwrap();
            assert_eq!(trace.old_refreshes, 1);
            assert_eq!(t.old_refreshes(), s + 1);
            assert_eq!(trace.minibatch_sides.len(), cfg.minibatches_per_step());
            for &(e, i) in &trace.minibatch_sides {
                assert_eq!((e, i), (cfg.minibatch / 2, cfg.minibatch / 2), "{}", v.name());
            }
            assert!(trace.consumed_e.iter().chain(&trace.consumed_i).all(|&c| c == 1));
            assert_eq!(trace.rollouts_e, cfg.batch_prompts * cfg.rollouts());
            assert_eq!(trace.rollouts_i, cfg.batch_prompts * cfg.rollouts());
        }
    }
}

#[test]
fn discard_threshold_is_applied_per_minibatch() {
    // probe norms with discarding off, then replay with the threshold at the median
    let mut cfg = small(Variant::FestGrpo);
    cfg.max_grad_norm_discard = 1e300;
    let mut probe = Trainer::new(cfg.clone()).unwrap();
    let (_, trace) = probe.step().unwrap();
    assert!(trace.discarded.iter().all(|d| !d));
    let probe_first = trace.pre_clip_norms[0];
    let mut norms = trace.pre_clip_norms.clone();
    norms.sort_by(f64::total_cmp);
    cfg.max_grad_norm_discard = norms[norms.len() / 2];

    let mut t = Trainer::new(cfg.clone()).unwrap();
    let before = t.model().params().to_vec();
    let (row, trace) = t.step().unwrap();
    // the first minibatch sees the same parameters as the probe
    assert_eq!(trace.pre_clip_norms[0], probe_first);
    for (n, d) in trace.pre_clip_norms.iter().zip(&trace.discarded) {
        assert_eq!(*d, *n > cfg.max_grad_norm_discard);
    }
    assert_eq!(row.discarded, trace.discarded.iter().filter(|d| **d).count());
    assert!(trace.discard_left_params_unchanged);
    let applied = trace.discarded.iter().filter(|d| !**d).count() as u64;
    assert_eq!(t.optimizer().step, applied);
    if applied == 0 {
        assert_eq!(before, t.model().params());
    }
}

#[test]
fn everything_discarded_leaves_policy_untouched() {
    let mut cfg = small(Variant::FestDpo);
    cfg.max_grad_norm_discard = 1e-300;
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let before = t.model().params().to_vec();
    for _ in 0..cfg.steps {
        let (row, trace) = t.step().unwrap();
        assert_eq!(row.discarded, cfg.minibatches_per_step());
        assert!(trace.discard_left_params_unchanged);
    }
    assert_eq!(before, t.model().params());
    assert_eq!(t.optimizer().step, 0);
}
