//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::time::Instant;

use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sigma_core::bench::{self, BenchConfig};
use sigma_core::blocks::flip::partial_flip;
use sigma_core::data::{self, split_leave_one_out, synth, Batch, SplitOptions, TrainRows};
use sigma_core::eval::{self, grouped_report, hr_at_k, mrr_at_k, ndcg_at_k, popularity_ranks, rank_target, OVERALL};
use sigma_core::gradcheck::{model_check, primitive_suite};
use sigma_core::mamba::{MambaBlock, MambaDims, SeqBlock};
use sigma_core::train::{self, TrainOutcome};
use sigma_core::{
    Ablation, EvalReport, Group, Init, Metric, ModelConfig, ParamStore, Part, RankedPrediction, SigmaModel,
    SplitDataset, Tape, Tensor, TrainConfig,
};

type Outcome = Result<String>;
type Criterion = (&'static str, fn() -> Outcome);

fn gradient_suite() -> Outcome {
    let started = Instant::now();
    let mut worst = (0.0f64, String::new());
    for (name, report) in primitive_suite()? {
        if report.max_rel_err() > worst.0 {
            worst = (report.max_rel_err(), name.to_string());
        }
    }
    let cfg = ModelConfig {
        num_items: 12,
        dim: 16,
        layers: 1,
        d_state: 4,
        max_len: 8,
        ..Default::default()
    };
    let batch = Batch {
        width: 8,
        ids: vec![3, 1, 4, 1, 5, 9, 2, 6, 0, 0, 0, 7, 10, 8, 12, 8],
        lens: vec![8, 5],
        targets: vec![5, 11],
        users: vec![0, 1],
    };
    let report = model_check(cfg, &batch, 1)?;
    if let Some(t) = report.worst() {
        if t.rel_err > worst.0 {
            worst = (t.rel_err, t.name.clone());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(worst.0 < 1e-4, "max rel-err {:.2e} at {}", worst.0, worst.1);
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("max rel-err {:.2e} ({}), {secs:.1}s", worst.0, worst.1))
}

fn scan_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    for l in [1usize, 5, 12] {
        let (b, e, s) = (2, 3, 4);
        let mut v = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(lo..hi)).collect() };
        let (u, delta, a) = (v(b * l * e, -1.0, 1.0), v(b * l * e, 0.01, 1.0), v(e * s, -3.0, -0.1));
        let (bm, cm, d) = (v(b * l * s, -1.0, 1.0), v(b * l * s, -1.0, 1.0), v(e, -1.0, 1.0));
        let mut tape = Tape::<f64>::inference();
        let mut c = |shape: Vec<usize>, x: &[f64]| -> Result<_> { Ok(tape.constant(Tensor::new(shape, x.to_vec())?)) };
        let vars = [
            c(vec![b, l, e], &u)?,
            c(vec![b, l, e], &delta)?,
            c(vec![e, s], &a)?,
            c(vec![b, l, s], &bm)?,
            c(vec![b, l, s], &cm)?,
            c(vec![e], &d)?,
        ];
        let y = tape.selective_scan(vars[0], vars[1], vars[2], vars[3], vars[4], vars[5])?;
        let y = tape.value(y);
        for bi in 0..b {
            for t in 0..l {
                for ei in 0..e {
                    let at = |k: usize| (bi * l + k) * e + ei;
                    let mut want = d[ei] * u[at(t)];
                    for si in 0..s {
                        let st = |k: usize| (bi * l + k) * s + si;
                        for tau in 0..=t {
                            let decay: f64 = (tau + 1..=t).map(|k| (delta[at(k)] * a[ei * s + si]).exp()).product();
                            want += cm[st(t)] * decay * delta[at(tau)] * bm[st(tau)] * u[at(tau)];
                        }
                    }
                    worst = worst.max((y[at(t)] - want).abs());
                }
            }
        }
    }

    let dims = MambaDims {
        dim: 8,
        inner: 16,
        state: 4,
        conv: 4,
        dt_rank: 1,
    };
    let mut store = ParamStore::<f64>::new();
    let mut init = Init::new(5);
    let block = MambaBlock::new(&mut store, "m", dims, &mut init);
    for id in [block.in_proj, block.x_proj, block.out_proj] {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = init.normal(shape, 0.5);
    }
    let (b, l) = (2, 12);
    let x = init.normal::<f64>(vec![b, l, dims.dim], 1.0);
    let mut tape = Tape::inference();
    let p = store.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let y = block.forward(&mut tape, &p, xv)?;
    let y = tape.value(y);
    for row in 0..b {
        let mut state = block.initial_state();
        for t in 0..l {
            let off = (row * l + t) * dims.dim;
            let out = block.step(&store, &mut state, &x.data()[off..off + dims.dim])?;
            for (o, w) in out.iter().zip(&y[off..off + dims.dim]) {
                worst = worst.max((o - w).abs());
            }
        }
    }
    ensure!(worst < 1e-10, "max abs diff {worst:.2e}");
    Ok(format!("max abs diff {worst:.2e}"))
}

fn flip_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let width = rng.gen_range(1..=64usize);
        let len = rng.gen_range(0..=width);
        let keep = rng.gen_range(0..=64usize);
        let row: Vec<u32> = (0..width).map(|t| if t + len < width { 0 } else { 1 + t as u32 }).collect();
        let once = partial_flip(&row, len, keep);
        ensure!(partial_flip(&once, len, keep) == row, "case {case}: not an involution");
        let (mut a, mut b) = (once.clone(), row.clone());
        a.sort_unstable();
        b.sort_unstable();
        ensure!(a == b, "case {case}: multiset changed");
        let start = width - len;
        let n = len.saturating_sub(keep);
        for t in (0..start).chain(start + n..width) {
            ensure!(once[t] == row[t], "case {case}: position {t} moved");
        }
        if keep == 0 {
            ensure!(once[start..].iter().eq(row[start..].iter().rev()), "case {case}: r=0 is not a reversal");
        }
        if keep >= len {
            ensure!(once == row, "case {case}: r>=len is not the identity");
        }
    }
    Ok("1000 cases".into())
}

fn metric_oracle() -> Outcome {
    let fixture: [(Vec<f64>, usize); 5] = [
        (vec![9.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], 0),
        (vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], 5),
        (vec![5.0; 8], 4),
        (vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0),
        (vec![8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0], 7),
    ];
    let ranks: Vec<usize> = fixture.iter().map(|(s, t)| rank_target(s, *t)).collect();
    ensure!(ranks == [1, 3, 5, 2, 8], "ranks {ranks:?}");
    let ndcg = (1.0 + 0.5 + 1.0 / 6f64.log2() + 1.0 / 3f64.log2() + 1.0 / 9f64.log2()) / 5.0;
    let mrr = (1.0 + 1.0 / 3.0 + 0.2 + 0.5 + 0.125) / 5.0;
    ensure!(hr_at_k(&ranks, 10) == 1.0, "HR@10");
    ensure!((ndcg_at_k(&ranks, 10) - ndcg).abs() < 1e-15, "NDCG@10");
    ensure!((mrr_at_k(&ranks, 10) - mrr).abs() < 1e-15, "MRR@10");
    ensure!(ndcg_at_k(&[3], 10) == 0.5, "rank 3 NDCG");

    let groups = [Group::Short, Group::Medium, Group::Long, Group::Short, Group::Long];
    let preds: Vec<RankedPrediction> = ranks
        .iter()
        .enumerate()
        .map(|(user, &rank)| RankedPrediction { user, rank })
        .collect();
    let report = grouped_report(&preds, &groups, &[3, 10]);
    for m in Metric::ALL {
        for k in [3, 10] {
            let weighted: f64 = Group::ALL
                .iter()
                .map(|g| report.get(m, k, g.label()).unwrap_or(f64::NAN) * report.users(g.label()) as f64)
                .sum::<f64>()
                / 5.0;
            let overall = report.get(m, k, OVERALL).unwrap_or(f64::NAN);
            ensure!((weighted - overall).abs() < 1e-15, "{m:?}@{k}: {weighted} vs {overall}");
        }
    }
    Ok(format!("HR@10 1, NDCG@10 {ndcg:.6}, MRR@10 {mrr:.6}"))
}

fn fit(split: &SplitDataset, model: ModelConfig, cfg: &TrainConfig) -> Result<(TrainOutcome<f32>, EvalReport)> {
    let model = SigmaModel::<f32>::new(model, cfg.seed)?;
    let out = train::train(model, split, cfg, |_| {})?;
    let test = eval::evaluate(&out.best, split, Part::Test, 256, &[10])?;
    Ok((out, test))
}

fn overfit() -> Outcome {
    let started = Instant::now();
    let seqs = data::filter_and_bound(synth::cyclic(200, 50, 10, 1), 5, None);
    let split = split_leave_one_out(
        &seqs,
        SplitOptions {
            max_len: 10,
            train_rows: TrainRows::Last,
        },
    )?;
    let model = ModelConfig {
        num_items: split.num_items(),
        dim: 32,
        layers: 1,
        flip_keep: 5,
        max_len: 10,
        dropout: 0.1,
        ..Default::default()
    };
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 32,
        patience: 50,
        seed: 1,
        ..Default::default()
    };
    let (_, test) = fit(&split, model, &cfg)?;
    let hr = test.get(Metric::Hr, 10, OVERALL).unwrap_or(0.0);
    let pop = grouped_report(&popularity_ranks(&split, Part::Test), &split.groups, &[10])
        .get(Metric::Hr, 10, OVERALL)
        .unwrap_or(1.0);
    let secs = started.elapsed().as_secs_f64();
    let detail = format!("HR@10 {hr:.3}, popularity {pop:.3}, {secs:.0}s");
    ensure!(hr >= 0.95 && pop < 0.3 && hr > pop && secs < 300.0, "{detail}");
    Ok(detail)
}

fn complexity() -> Outcome {
    let rows = bench::run(&BenchConfig::default())?;
    let ratios = |model: &str| -> Vec<f64> {
        rows.iter().filter(|r| r.model == model).filter_map(|r| r.ratio).collect()
    };
    let (sigma, attn) = (ratios("sigma"), ratios("attention"));
    let detail = format!("sigma ratios {sigma:.2?}, attention ratios {attn:.2?}");
    ensure!(!sigma.is_empty() && sigma.iter().all(|&r| r <= 2.5), "{detail}");
    ensure!(attn.last().is_some_and(|&r| r >= 3.0), "{detail}");
    Ok(detail)
}

fn ablation_direction() -> Outcome {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 1..=5u64 {
        let strides: Vec<usize> = (1..=20).collect();
        let seqs = data::filter_and_bound(synth::strided(500, 100, &strides, 0.5, (10, 20), seed), 4, None);
        let split = split_leave_one_out(
            &seqs,
            SplitOptions {
                max_len: 20,
                train_rows: TrainRows::Last,
            },
        )?;
        let short = split.groups.iter().filter(|&&g| g == Group::Short).count();
        ensure!(short * 2 >= split.num_users() - 10, "only {short} short users");
        let short_hr = |ablation: Ablation| -> Result<f64> {
            let model = ModelConfig {
                num_items: split.num_items(),
                dim: 32,
                max_len: 20,
                dropout: 0.1,
                ablation,
                ..Default::default()
            };
            let cfg = TrainConfig {
                epochs: 20,
                batch_size: 32,
                patience: 20,
                seed,
                ..Default::default()
            };
            let (_, test) = fit(&split, model, &cfg)?;
            Ok(test.get(Metric::Hr, 10, Group::Short.label()).unwrap_or(0.0))
        };
        let full = short_hr(Ablation::default())?;
        let without = short_hr(Ablation {
            no_fegru: true,
            ..Default::default()
        })?;
        if without < full {
            wins += 1;
        }
        pairs.push(format!("{full:.3}/{without:.3}"));
    }
    let detail = format!("default/w-o FE-GRU short HR@10 {}; {wins}/5 seeds", pairs.join(" "));
    ensure!(wins >= 4, "{detail}");
    Ok(detail)
}

fn determinism() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    pool.install(|| {
        let seqs = data::filter_and_bound(synth::strided(120, 40, &[1, 2, 3], 0.5, (8, 16), 9), 1, None);
        let split = split_leave_one_out(
            &seqs,
            SplitOptions {
                max_len: 12,
                train_rows: TrainRows::Prefixes,
            },
        )?;
        let run = || {
            let model = ModelConfig {
                num_items: split.num_items(),
                dim: 16,
                d_state: 8,
                max_len: 12,
                ..Default::default()
            };
            let cfg = TrainConfig {
                epochs: 2,
                batch_size: 64,
                seed: 42,
                ..Default::default()
            };
            fit(&split, model, &cfg)
        };
        let ((a, ta), (b, tb)) = (run()?, run()?);
        let bits = |o: &TrainOutcome<f32>| o.log.iter().map(|e| e.train_loss.to_bits()).collect::<Vec<_>>();
        ensure!(bits(&a).len() == 2 && bits(&a) == bits(&b), "losses differ");
        ensure!(a.best_valid == b.best_valid && ta == tb, "reports differ");
        Ok(format!(
            "epoch losses {:.6} {:.6} reproduced bitwise",
            a.log[0].train_loss, a.log[1].train_loss
        ))
    })
}

fn pipeline_integrity() -> Outcome {
    let dir = tempfile::tempdir()?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..500u64 {
        let raw = synth::random_log(rng.gen());
        let min_count = rng.gen_range(1..6);
        let cap = rng.gen_bool(0.5).then(|| rng.gen_range(3..30));
        let filtered = data::filter_and_bound(raw.clone(), min_count, cap);
        ensure!(
            data::filter_and_bound(filtered.clone(), min_count, None) == filtered,
            "case {case}: filter is not a fixpoint"
        );
        let opts = SplitOptions {
            max_len: rng.gen_range(1..12),
            train_rows: if rng.gen() { TrainRows::Prefixes } else { TrainRows::Last },
        };
        let split = split_leave_one_out(&filtered, opts)?;
        split.check_integrity()?;
        for (u, test) in split.test.iter().enumerate() {
            let leak = split
                .train
                .iter()
                .filter(|r| r.user == u)
                .any(|r| r.input.contains(&test.target) || r.target == test.target);
            ensure!(!leak, "case {case}: test target of user {u} leaks into training");
            ensure!(
                !split.valid[u].input.contains(&test.target),
                "case {case}: test target of user {u} leaks into validation"
            );
        }
        let path = dir.path().join("split.json");
        split.save_json(&path)?;
        ensure!(SplitDataset::load_json(&path)? == split, "case {case}: split round trip");
        let mut tsv = Vec::new();
        data::write_tsv(&raw, &mut tsv)?;
        let mut want = raw;
        want.sort_by(|a, b| a.user.cmp(&b.user));
        ensure!(data::read_tsv(tsv.as_slice(), "mem")? == want, "case {case}: tsv round trip");
    }
    Ok("500 datasets".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradient_suite),
        ("scan oracle", scan_oracle),
        ("flip algebra", flip_algebra),
        ("metric oracle", metric_oracle),
        ("overfit", overfit),
        ("complexity", complexity),
        ("ablation direction", ablation_direction),
        ("determinism", determinism),
        ("pipeline integrity", pipeline_integrity),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS {n} {name}: {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {n} {name}: {e:#}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
