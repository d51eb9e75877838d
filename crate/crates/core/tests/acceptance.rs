//! Acceptance report: one PASS/FAIL line per criterion, with the measured
//! quantity and runtime. Run with `cargo test -p estm --test acceptance`.
//!
//! The process exits 0 even when a criterion fails so the report is always
//! printed in full; failures are flagged on their line and in the summary.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use estm::autodiff::{ParamStore, Tape};
use estm::checkpoint;
use estm::config::ExperimentConfig;
use estm::data::corpus::open_corpus;
use estm::data::{synth_generate, Corpus};
use estm::dsp::cache::{self, read_cache, write_cache};
use estm::dsp::estgram::extract_estgram;
use estm::dsp::{tsg_gate, LogMel, MelGram};
use estm::metrics::{auc, pauc};
use estm::network::Paths;
use estm::pipeline::{build_model, load_wave, run_experiment, train_corpus, ExperimentResult};
use estm::ssm::bench::random_inputs;
use estm::ssm::scan::{scan_chunked, scan_sequential};
use estm::train::RunOutputs;
use estm::{Error, Precision, Tensor};
use num_bigint::BigInt;
use num_rational::Ratio;
use num_traits::{Float, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Report {
    passed: usize,
    total: usize,
}

impl Report {
    fn run(&mut self, id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Result<Outcome, String>) {
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= limit, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        self.total += 1;
        self.passed += pass as usize;
        println!(
            "criterion {id}: {} {name}: {detail} [{:.2} s, limit {} s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn tsg_criterion() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let (m, n) = (rng.random_range(1..40), rng.random_range(1..80));
        let c = rng.random_range(-100.0..100.0);
        let g = tsg_gate(&MelGram::new(m, n, vec![c; m * n]).map_err(err)?, rng.random_range(0.1..10.0)).map_err(err)?;
        worst = g.gate.iter().fold(worst, |w, v| w.max((v - 0.5).abs()));
    }
    // frames [1,1,1,1] and [3,3,3,3]: stats 2 and 6 around mean 4
    let mut values = vec![0.0; 8];
    for f in 0..4 {
        values[f * 2] = 1.0;
        values[f * 2 + 1] = 3.0;
    }
    let g = tsg_gate(&MelGram::new(4, 2, values).map_err(err)?, 2.0).map_err(err)?;
    let hand = (g.gate[0] - 0.017986).abs().max((g.gate[1] - 0.982014).abs());
    Ok(outcome(
        worst < 1e-6 && hand < 1e-5,
        format!("constant inputs max |gate-0.5| = {worst:.1e}; hand example {:.6?} (err {hand:.1e})", g.gate),
    ))
}

// ---------------------------------------------------------------- 2

fn scan_criterion() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut e64, mut e32): (f64, f64) = (0.0, 0.0);
    for _ in 0..500 {
        let l = rng.random_range(1..=512);
        let d = rng.random_range(1..=8);
        let n = rng.random_range(1..=8);
        let chunk = rng.random_range(1..=l);
        let inp = random_inputs::<f64>(l, d, n, &mut rng);
        let a = scan_sequential(&inp);
        let b = scan_chunked(&inp, chunk).map_err(err)?;
        e64 = a.iter().zip(&b).fold(e64, |m, (x, y)| m.max((x - y).abs()));

        let inp = random_inputs::<f32>(l, d, n, &mut rng);
        let a = scan_sequential(&inp);
        let b = scan_chunked(&inp, chunk).map_err(err)?;
        e32 = a.iter().zip(&b).fold(e32, |m, (x, y)| m.max((*x as f64 - *y as f64).abs()));
    }
    Ok(outcome(
        e64 < 1e-12 && e32 < 1e-5,
        format!("500 instances, max abs err f64 {e64:.2e}, f32 {e32:.2e}"),
    ))
}

// ---------------------------------------------------------------- 3

fn gradient_criterion() -> Result<Outcome, String> {
    let ops = common::op_checks();
    let op_worst = ops.iter().max_by(|a, b| a.error.total_cmp(&b.error)).expect("ops");
    let failing: Vec<&str> = ops.iter().filter(|c| !c.ok()).map(|c| c.name).collect();
    let model = common::model_check();
    let (pname, perr) = model
        .per_param
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .expect("params");
    Ok(outcome(
        failing.is_empty() && model.worst.ok() && perr < 1e-3,
        format!(
            "{} ops, worst {} {:.1e} (tol 1e-4){}; tiny model {} scalars, rel err {:.1e}, worst tensor {pname} {perr:.1e} (tol 1e-3)",
            ops.len(),
            op_worst.name,
            op_worst.error,
            if failing.is_empty() { String::new() } else { format!(", failing {failing:?}") },
            model.scalars,
            model.worst.error,
        ),
    ))
}

// ---------------------------------------------------------------- 4

/// Doubled Mann-Whitney count over every (positive, negative) pair.
fn pairwise_auc(s: &[f64], l: &[bool]) -> f64 {
    let (mut twice, mut pos, mut neg) = (0u64, 0u64, 0u64);
    for i in 0..s.len() {
        if l[i] {
            pos += 1;
        } else {
            neg += 1;
        }
        for j in 0..s.len() {
            if l[i] && !l[j] {
                twice += if s[i] > s[j] { 2 } else if s[i] == s[j] { 1 } else { 0 };
            }
        }
    }
    twice as f64 / (2 * pos * neg) as f64
}

/// Trapezoidal area of the threshold-sweep ROC over `[0, p]`, divided by `p`.
/// Threshold sweep over the distinct scores with linear interpolation at
/// `p`, exact throughout and rounded once at the end. Trapezoids are summed
/// in (negative, positive) count units, doubled. With p = m / 2^e the cut
/// sits at m * neg / 2^e negatives.
fn sweep_pauc(s: &[f64], l: &[bool], p: f64) -> f64 {
    let pos = l.iter().filter(|&&x| x).count() as i64;
    let neg = l.len() as i64 - pos;
    let (m, exp, _) = p.integer_decode();
    let e = (-exp) as usize;
    let cut = BigInt::from(m) * neg;
    let mut thresholds = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut fp0, mut tp0) = (0i64, 0i64);
    let mut whole = 0i64;
    // numerator over 2^e * (fp1 - fp0) once the segment crossing the cut is found
    let mut straddle = None;
    for t in thresholds {
        let tp1 = s.iter().zip(l).filter(|(v, y)| **y && **v >= t).count() as i64;
        let fp1 = s.iter().zip(l).filter(|(v, y)| !**y && **v >= t).count() as i64;
        if BigInt::from(fp1) << e <= cut {
            whole += (fp1 - fp0) * (tp0 + tp1);
        } else {
            let (dfp, dtp) = (fp1 - fp0, tp1 - tp0);
            // dx = d / 2^e and y(cut) = tp0 + dtp * dx / dfp
            let d = &cut - (BigInt::from(fp0) << e);
            let y_plus_tp0 = (BigInt::from(2 * tp0 * dfp) << e) + &d * dtp;
            straddle = Some((d * y_plus_tp0, dfp));
            break;
        }
        (fp0, tp0) = (fp1, tp1);
    }
    let (partial, dfp) = straddle.unwrap_or((BigInt::zero(), 1));
    // (whole + partial / (2^2e dfp)) / (2 pos neg m / 2^e)
    let numer = (BigInt::from(whole * dfp) << (2 * e)) + partial;
    let denom = (BigInt::from(2 * pos * neg * dfp) * m) << e;
    Ratio::new_raw(numer, denom).to_f64().unwrap()
}

fn metric_criterion() -> Result<Outcome, String> {
    // Every labeled set of size <= 12 up to order equivalence: a split of
    // the ranked items into tie groups times a label per item.
    let (mut cases, mut auc_mismatch, mut pauc_mismatch) = (0u64, 0u64, 0u64);
    let mut s = Vec::with_capacity(12);
    let mut l = Vec::with_capacity(12);
    for n in 2..=12usize {
        for cuts in 0u32..1 << (n - 1) {
            s.clear();
            let mut group = 0.0;
            for i in 0..n {
                s.push(-group);
                if cuts >> i & 1 == 1 {
                    group += 1.0;
                }
            }
            for mask in 1u32..(1 << n) - 1 {
                l.clear();
                l.extend((0..n).map(|i| mask >> i & 1 == 1));
                cases += 1;
                if auc(&s, &l).map_err(err)?.to_bits() != pairwise_auc(&s, &l).to_bits() {
                    auc_mismatch += 1;
                }
                if pauc(&s, &l, 0.1).map_err(err)?.to_bits() != sweep_pauc(&s, &l, 0.1).to_bits() {
                    pauc_mismatch += 1;
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut rand_dev, mut bits_ok) = (0.0f64, true);
    for k in 0..1000 {
        let mut l: Vec<bool> = (0..50).map(|_| rng.random_bool(0.4)).collect();
        l[0] = true;
        l[1] = false;
        // half the sets carry ties
        let s: Vec<f64> = (0..50)
            .map(|_| {
                let v: f64 = rng.random_range(-3.0..3.0);
                if k % 2 == 0 { (v * 4.0).round() } else { v }
            })
            .collect();
        for p in [0.1, 0.37, 1.0] {
            rand_dev = rand_dev.max((pauc(&s, &l, p).map_err(err)? - sweep_pauc(&s, &l, p)).abs());
        }
        rand_dev = rand_dev.max((auc(&s, &l).map_err(err)? - pairwise_auc(&s, &l)).abs());
        if k % 2 == 1 {
            bits_ok &= pauc(&s, &l, 1.0).map_err(err)?.to_bits() == auc(&s, &l).map_err(err)?.to_bits();
        }
    }
    let exhaustive_ok = auc_mismatch == 0 && pauc_mismatch == 0;
    Ok(outcome(
        exhaustive_ok && rand_dev < 1e-9 && bits_ok,
        format!(
            "{cases} exhaustive cases: auc bitwise mismatches {auc_mismatch}, \
             pauc(0.1) bitwise mismatches {pauc_mismatch}; \
             1000 random n=50 max dev {rand_dev:.1e}; pauc(1) == auc bitwise: {bits_ok}"
        ),
    ))
}

// ---------------------------------------------------------------- 5

fn arcface_criterion() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (batch, dim, classes) = (rng.random_range(1..16), rng.random_range(2..32), rng.random_range(2..10));
        let feats = Tensor::from_fn(&[batch, dim], |_| rng.random_range(-2.0..2.0));
        let weights = Tensor::from_fn(&[classes, dim], |_| rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();

        let mut tape = Tape::<f64>::new();
        let f = tape.constant(feats.clone());
        let w = tape.constant(weights.clone());
        let fnorm = tape.normalize_rows(f, 1e-12);
        let wnorm = tape.normalize_rows(w, 1e-12);
        let wt = tape.transpose(wnorm);
        let cos = tape.matmul(fnorm, wt);
        let mut loss = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            let row = tape.row(cos, b);
            let li = tape.arcface_loss(row, y, 1.0, 0.0);
            loss += tape.value(li).data()[0];
        }
        loss /= batch as f64;

        // plain softmax cross-entropy over cosine logits
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut reference = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            let fr = feats.row(b);
            let logits: Vec<f64> = (0..classes)
                .map(|c| {
                    let wr = weights.row(c);
                    fr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>() / (norm(fr) * norm(wr))
                })
                .collect();
            let z: f64 = logits.iter().map(|v| v.exp()).sum();
            reference += -(logits[y].exp() / z).ln();
        }
        reference /= batch as f64;
        worst = worst.max((loss - reference).abs());
    }
    Ok(outcome(worst < 1e-6, format!("100 batches, max |diff| {worst:.1e}")))
}

// ---------------------------------------------------------------- 6, 7

fn toy_corpus(dir: &Path) -> Result<(ExperimentConfig, Corpus), String> {
    let cfg = ExperimentConfig::toy();
    synth_generate(&cfg.synth, dir).map_err(err)?;
    Ok((cfg, open_corpus(dir).map_err(err)?))
}

fn experiment(cfg: &ExperimentConfig, corpus: &Corpus, paths: Paths, seed: u64) -> Result<ExperimentResult, String> {
    let mut cfg = cfg.clone();
    cfg.model.paths = paths;
    cfg.features.tsg = true;
    cfg.train.seed = seed;
    match cfg.train.precision {
        Precision::F32 => run_experiment::<f32>(&cfg, corpus),
        Precision::F64 => run_experiment::<f64>(&cfg, corpus),
    }
    .map_err(err)
}

fn end_to_end_criterion(cfg: &ExperimentConfig, corpus: &Corpus, run: &ExperimentResult) -> Result<Outcome, String> {
    let best_acc = run.history.iter().map(|h| h.accuracy).fold(0.0, f64::max);
    let per_type: Vec<String> = run.report.types.iter().map(|t| format!("{} {:.4}", t.machine_type, t.auc)).collect();
    Ok(outcome(
        run.history.len() <= 30 && best_acc >= 0.95 && run.report.average_auc >= 0.90,
        format!(
            "STMamba+ESTgram seed {}, {} clips, {} epochs at {}: best train acc {best_acc:.4} (final {:.4}), \
             avg AUC {:.4} [{}], avg pAUC {:.4}",
            cfg.train.seed,
            corpus.records.len(),
            run.history.len(),
            cfg.train.precision.as_str(),
            run.history.last().map_or(0.0, |h| h.accuracy),
            run.report.average_auc,
            per_type.join(", "),
            run.report.average_pauc,
        ),
    ))
}

fn ablation_criterion(cfg: &ExperimentConfig, corpus: &Corpus, seed0_st: f64) -> Result<Outcome, String> {
    let seeds = [0u64, 1, 2];
    let mut means = Vec::new();
    for paths in [Paths::St, Paths::S, Paths::T] {
        let mut aucs = Vec::new();
        for &seed in &seeds {
            // the seed-0 STMamba run is criterion 6's run
            let a = if paths == Paths::St && seed == cfg.train.seed {
                seed0_st
            } else {
                experiment(cfg, corpus, paths, seed)?.report.average_auc
            };
            aucs.push(a);
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        println!(
            "  ablation ESTgram {:>7}: seeds {:?} auc {:?} mean {mean:.4}",
            paths.as_str(),
            seeds,
            aucs.iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>()
        );
        means.push(mean);
    }
    let (st, s, t) = (means[0], means[1], means[2]);
    let ok = st >= s && st >= t;
    Ok(outcome(
        ok,
        format!(
            "mean AUC ST {st:.4}, S {s:.4}, T {t:.4}{}",
            if ok { "" } else { " -- ordering NOT reproduced" }
        ),
    ))
}

// ---------------------------------------------------------------- 8, 9

fn five_epoch_run(cfg: &ExperimentConfig, corpus: &Corpus, ckpt: &Path) -> Result<(), String> {
    let out = RunOutputs {
        metrics_csv: None,
        checkpoint: Some(ckpt.to_path_buf()),
        config: cfg.to_json(),
    };
    train_corpus::<f64>(cfg, corpus, &out, None).map_err(err)?;
    Ok(())
}

fn f64_config(base: &ExperimentConfig) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.train.precision = Precision::F64;
    cfg.train.epochs = 5;
    cfg
}

fn reproducibility_criterion(base: &ExperimentConfig, corpus: &Corpus, dir: &Path) -> Result<Outcome, String> {
    let cfg = f64_config(base);
    let (a, b) = (dir.join("a.ckpt"), dir.join("b.ckpt"));
    five_epoch_run(&cfg, corpus, &a)?;
    five_epoch_run(&cfg, corpus, &b)?;
    let (ba, bb) = (fs::read(&a).map_err(err)?, fs::read(&b).map_err(err)?);
    let meta = checkpoint::decode(&ba, &a).map_err(err)?.meta;
    Ok(outcome(
        ba == bb,
        format!(
            "two 5-epoch f64 runs: {} vs {} bytes, identical: {} (best epoch {}, step {})",
            ba.len(),
            bb.len(),
            ba == bb,
            meta.epoch,
            meta.step
        ),
    ))
}

fn with_header(bytes: &[u8], at: usize, patch: &[u8]) -> Vec<u8> {
    let mut b = bytes.to_vec();
    b[at..at + patch.len()].copy_from_slice(patch);
    b
}

fn serialization_criterion(base: &ExperimentConfig, corpus: &Corpus, dir: &Path) -> Result<Outcome, String> {
    let mut notes = Vec::new();
    let mut ok = true;

    // checkpoint: decode, restore into a fresh model, re-encode
    let path = dir.join("a.ckpt");
    let bytes = fs::read(&path).map_err(err)?;
    let ck = checkpoint::decode(&bytes, &path).map_err(err)?;
    let cfg = f64_config(base);
    let (_, mut store): (_, ParamStore<f64>) = build_model(&cfg, corpus.label_map().len()).map_err(err)?;
    ck.restore(&mut store, &path).map_err(err)?;
    let again = checkpoint::encode(&store, &ck.meta).map_err(err)?;
    let values_match = store.ids().all(|id| {
        let (m, v) = store.moments(id);
        [store.value(id), m, v].iter().enumerate().all(|(k, t)| {
            let name = match k {
                0 => store.name(id).to_string(),
                1 => format!("adam.m/{}", store.name(id)),
                _ => format!("adam.v/{}", store.name(id)),
            };
            ck.blobs
                .iter()
                .find(|b| b.0 == name)
                .is_some_and(|b| b.2.iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits()))
        })
    });
    ok &= again == bytes && values_match;
    notes.push(format!("checkpoint {} bytes re-encoded identical: {}", bytes.len(), again == bytes));

    // feature cache
    let lm = LogMel::new(&cfg.features).map_err(err)?;
    let (model, store) = build_model::<f64>(&cfg, corpus.label_map().len()).map_err(err)?;
    let wave = load_wave(&corpus.records[0].path, &cfg.features).map_err(err)?;
    let est = extract_estgram(&wave, &cfg.features, &lm, model.frontend(), &store).map_err(err)?;
    let cpath = dir.join("clip.estg");
    write_cache(&cpath, &est).map_err(err)?;
    let cbytes = fs::read(&cpath).map_err(err)?;
    let back = read_cache(&cpath).map_err(err)?;
    let cache_ok = cache::encode(&back) == cbytes
        && back.shape() == est.shape()
        && back.data.iter().zip(&est.data).all(|(a, b)| a.to_bits() == (*b as f32 as f64).to_bits());
    ok &= cache_ok;
    notes.push(format!("cache {} bytes round trip exact: {cache_ok}", cbytes.len()));

    // corrupted headers
    let checks: [(&str, Result<(), Error>); 4] = [
        ("ckpt magic", checkpoint::decode(&with_header(&bytes, 0, b"XSTM"), &path).map(|_| ())),
        ("ckpt version", checkpoint::decode(&with_header(&bytes, 4, &7u32.to_le_bytes()), &path).map(|_| ())),
        ("cache magic", cache::decode(&with_header(&cbytes, 0, b"XSTG"), &cpath).map(|_| ())),
        ("cache version", cache::decode(&with_header(&cbytes, 4, &7u32.to_le_bytes()), &cpath).map(|_| ())),
    ];
    for (what, r) in checks {
        let named = match (&r, what.ends_with("magic")) {
            (Err(Error::BadMagic { .. }), true) | (Err(Error::UnsupportedVersion { .. }), false) => true,
            _ => false,
        };
        ok &= named;
        let shown = match &r {
            Err(e) => short(e),
            Ok(()) => "accepted".into(),
        };
        notes.push(format!("{what}: {shown}"));
    }
    Ok(outcome(ok, notes.join("; ")))
}

fn short(e: &Error) -> String {
    match e {
        Error::BadMagic { .. } => "BadMagic".into(),
        Error::UnsupportedVersion { .. } => "UnsupportedVersion".into(),
        other => format!("{other}"),
    }
}

fn main() {
    // the end-to-end limit is stated for one thread
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().ok();
    let secs = Duration::from_secs;
    let mut r = Report { passed: 0, total: 0 };
    r.run(1, "gate correctness", secs(1), tsg_criterion);
    r.run(2, "chunked scan vs sequential", secs(30), scan_criterion);
    r.run(3, "finite-difference gradients", secs(120), gradient_criterion);
    r.run(4, "metric oracles", secs(60), metric_criterion);
    r.run(5, "margin-free angular loss", secs(10), arcface_criterion);

    let tmp = tempfile::tempdir().expect("temp dir");
    match toy_corpus(&tmp.path().join("synth")) {
        Ok((cfg, corpus)) => {
            let mut st_auc = None;
            r.run(6, "synthetic end-to-end", secs(600), || {
                let run = experiment(&cfg, &corpus, Paths::St, cfg.train.seed)?;
                st_auc = Some(run.report.average_auc);
                end_to_end_criterion(&cfg, &corpus, &run)
            });
            r.run(7, "dual-path ablation ordering", secs(3600), || {
                ablation_criterion(&cfg, &corpus, st_auc.ok_or("criterion 6 run failed")?)
            });
            r.run(8, "bit-identical f64 training", secs(600), || {
                reproducibility_criterion(&cfg, &corpus, tmp.path())
            });
            r.run(9, "serialization round trips", secs(60), || {
                serialization_criterion(&cfg, &corpus, tmp.path())
            });
        }
        Err(e) => {
            for id in 6..=9 {
                r.run(id, "synthetic corpus", secs(1), || Err(format!("corpus generation failed: {e}")));
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", r.passed, r.total);
}
