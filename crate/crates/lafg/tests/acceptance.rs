//! Acceptance gate: one test per criterion, each printing a single PASS line
//! (cargo reports a FAILED line for the criterion otherwise).

use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lafg::align::{alignment_loss, naive_alignment_loss, EmaProjectorPair, Projector, ProjectorGradMode};
use lafg::bank::SemanticBank;
use lafg::error::LafgError;
use lafg::eval::{AblationAxis, RetrievalIndex};
use lafg::metric::{aux_loss, pair_distance, EmbeddingBatch};
use lafg::synth::{generate_synthetic, SyntheticSpec};
use lafg::text_encode::{encode_bank, encode_class_descriptors, MockTextEncoder};
use lafg::text_gen::{generate_descriptions, write_description_sets, GenerateOptions, MockLlm};
use lafg::trainer::{run_training, TrainConfig};
use lafg::vocab::{build_prototypes, build_vocabulary, select_topk, fuse_prototype, AttributeVocabulary};
use lafg::eval::run_synthetic_experiment;

const FD_H: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn fd<F: FnMut(f64) -> f64>(mut f: F, x0: f64) -> f64 {
    (f(x0 + FD_H) - f(x0 - FD_H)) / (2.0 * FD_H)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Criterion 1 — analytic gradients of the naive alignment loss, the
/// stabilized alignment loss, and the contrastive loss match central finite
/// differences (d=8, m=4, K=6) with relative error < 1e-4 in under 10 s.
#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let (d, m, k_batch) = (8usize, 4usize, 6usize);
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = EmaProjectorPair::seeded(d, m, 0.2, seed ^ 0xabc).unwrap();
        let v = random_vec(&mut rng, d);
        let t = random_vec(&mut rng, d);

        // Naive variant: gradients to V and both live projectors.
        let out = naive_alignment_loss(&v, &t, &pair.live_v, &pair.live_t).unwrap();
        for j in 0..d {
            let num = fd(
                |x| {
                    let mut vv = v.clone();
                    vv[j] = x;
                    naive_alignment_loss(&vv, &t, &pair.live_v, &pair.live_t).unwrap().loss
                },
                v[j],
            );
            assert!(rel_err(out.grad_v[j], num) < FD_TOL, "naive dV[{j}]");
        }
        for idx in 0..d * m {
            let num = fd(
                |x| {
                    let mut p = pair.live_v.clone();
                    p.weight[idx] = x;
                    naive_alignment_loss(&v, &t, &p, &pair.live_t).unwrap().loss
                },
                pair.live_v.weight[idx],
            );
            assert!(rel_err(out.grad_proj_v.weight[idx], num) < FD_TOL, "naive dWv[{idx}]");
            let num = fd(
                |x| {
                    let mut p = pair.live_t.clone();
                    p.weight[idx] = x;
                    naive_alignment_loss(&v, &t, &pair.live_v, &p).unwrap().loss
                },
                pair.live_t.weight[idx],
            );
            assert!(rel_err(out.grad_proj_t.weight[idx], num) < FD_TOL, "naive dWt[{idx}]");
        }

        // Stabilized variant: gradients to V and the live parameters.
        let out = alignment_loss(&v, &t, &pair, ProjectorGradMode::Live).unwrap();
        for j in 0..d {
            let num = fd(
                |x| {
                    let mut vv = v.clone();
                    vv[j] = x;
                    alignment_loss(&vv, &t, &pair, ProjectorGradMode::Live).unwrap().loss
                },
                v[j],
            );
            assert!(rel_err(out.grad_v[j], num) < FD_TOL, "stabilized dV[{j}]");
        }
        for idx in 0..d * m {
            let num = fd(
                |x| {
                    let mut pp = pair.clone();
                    pp.live_v.weight[idx] = x;
                    alignment_loss(&v, &t, &pp, ProjectorGradMode::Live).unwrap().loss
                },
                pair.live_v.weight[idx],
            );
            assert!(rel_err(out.grad_proj_v.weight[idx], num) < FD_TOL, "stabilized dWv[{idx}]");
            let num = fd(
                |x| {
                    let mut pp = pair.clone();
                    pp.live_t.weight[idx] = x;
                    alignment_loss(&v, &t, &pp, ProjectorGradMode::Live).unwrap().loss
                },
                pair.live_t.weight[idx],
            );
            assert!(rel_err(out.grad_proj_t.weight[idx], num) < FD_TOL, "stabilized dWt[{idx}]");
        }

        // Contrastive loss: gradients to every unnormalized embedding.
        let embeddings: Vec<Vec<f64>> = (0..k_batch).map(|_| random_vec(&mut rng, d)).collect();
        let labels = vec![0, 0, 1, 1, 2, 2];
        let batch = EmbeddingBatch::new(embeddings.clone(), labels.clone()).unwrap();
        let out = aux_loss(&batch, 0.1).unwrap();
        for i in 0..k_batch {
            for j in 0..d {
                let num = fd(
                    |x| {
                        let mut e = embeddings.clone();
                        e[i][j] = x;
                        let b = EmbeddingBatch::new(e, labels.clone()).unwrap();
                        aux_loss(&b, 0.1).unwrap().loss
                    },
                    embeddings[i][j],
                );
                assert!(rel_err(out.grads[i][j], num) < FD_TOL, "aux dz[{i}][{j}]");
            }
        }
    }
    assert!(start.elapsed().as_secs() < 10, "criterion 1 exceeded 10 s");
    println!("criterion 1 (gradient correctness): PASS");
}

/// Criterion 2 — closed-form loss identities hold within 1e-6.
#[test]
fn criterion_2_loss_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let proj = Projector::seeded(6, 4, 0.7, &mut rng);
    let v = random_vec(&mut rng, 6);
    let t = random_vec(&mut rng, 6);

    // Naive loss vanishes when the two projectors are identical.
    let naive = naive_alignment_loss(&v, &t, &proj, &proj).unwrap();
    assert!(naive.loss.abs() < 1e-6, "naive loss {} != 0", naive.loss);

    // Stabilized loss vanishes when mean == live and theta_v == theta_t.
    let pair = EmaProjectorPair::new(proj.clone(), proj.clone(), 0.2).unwrap();
    let stab = alignment_loss(&v, &t, &pair, ProjectorGradMode::Live).unwrap();
    assert!(stab.loss.abs() < 1e-6, "stabilized loss {} != 0", stab.loss);

    // Contrastive loss vanishes for a two-element batch (the partner is the
    // only candidate).
    let batch = EmbeddingBatch::new(
        vec![random_vec(&mut rng, 6), random_vec(&mut rng, 6)],
        vec![3, 3],
    )
    .unwrap();
    let aux = aux_loss(&batch, 0.1).unwrap();
    assert!(aux.loss.abs() < 1e-6, "aux loss {} != 0", aux.loss);

    // D(z, -z) = 4.
    let z = random_vec(&mut rng, 6);
    let neg: Vec<f64> = z.iter().map(|x| -x).collect();
    let d = pair_distance(&z, &neg).unwrap();
    assert!((d - 4.0).abs() < 1e-6, "D(z,-z) = {d}");
    println!("criterion 2 (loss identities): PASS");
}

/// Rank-counting Recall@k oracle: a query hits iff some same-label item has
/// fewer than k other items strictly ahead of it (higher similarity, or equal
/// similarity at a lower index).
fn oracle_recall(embeddings: &[Vec<f64>], labels: &[u32], k: usize) -> f64 {
    let m = embeddings.len();
    let normed: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| {
            let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            e.iter().map(|v| v / n).collect()
        })
        .collect();
    let sim = |a: usize, b: usize| -> f64 {
        normed[a].iter().zip(&normed[b]).map(|(x, y)| x * y).sum()
    };
    let mut hits = 0usize;
    for q in 0..m {
        let mut hit = false;
        for g in 0..m {
            if g == q || labels[g] != labels[q] {
                continue;
            }
            let sg = sim(q, g);
            let mut ahead = 0usize;
            for o in 0..m {
                if o == q || o == g {
                    continue;
                }
                let so = sim(q, o);
                if so > sg || (so == sg && o < g) {
                    ahead += 1;
                }
            }
            if ahead < k {
                hit = true;
                break;
            }
        }
        if hit {
            hits += 1;
        }
    }
    hits as f64 / m as f64
}

/// Criterion 3 — Recall@K, Top-K selection, and prototype fusion each match an
/// independent brute-force oracle.
#[test]
fn criterion_3_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);

    // 100 random galleries of size <= 50.
    for _ in 0..100 {
        let m = rng.gen_range(3..=50);
        let dim = rng.gen_range(2..8);
        let embeddings: Vec<Vec<f64>> = (0..m).map(|_| random_vec(&mut rng, dim)).collect();
        let labels: Vec<u32> = (0..m).map(|_| rng.gen_range(0..5)).collect();
        let index = RetrievalIndex::build(embeddings.clone(), labels.clone()).unwrap();
        for k in [1, 3.min(m - 1)] {
            let got = index.recall_at_k(&[k]).unwrap()[&k];
            let expect = oracle_recall(&embeddings, &labels, k);
            assert_eq!(got, expect, "recall@{k} on gallery of {m}");
        }
    }

    // 100 random (t_c, vocab) pairs against a selection-without-sort oracle.
    for _ in 0..100 {
        let size = rng.gen_range(4..20);
        let dim = rng.gen_range(2..8);
        let vocab = AttributeVocabulary {
            size,
            dim,
            rng_seed: 0,
            centroids: (0..size * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            cluster_populations: vec![1; size],
        };
        let t_c: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let k = rng.gen_range(1..=size);
        let (indices, scores) = select_topk(&t_c, &vocab, k).unwrap();

        let all: Vec<f32> = (0..size)
            .map(|i| {
                vocab
                    .centroid(i)
                    .iter()
                    .zip(&t_c)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let mut taken = vec![false; size];
        for rank in 0..k {
            let mut best: Option<usize> = None;
            for i in 0..size {
                if taken[i] {
                    continue;
                }
                match best {
                    None => best = Some(i),
                    Some(b) if all[i] > all[b] => best = Some(i),
                    _ => {}
                }
            }
            let b = best.unwrap();
            taken[b] = true;
            assert_eq!(indices[rank] as usize, b, "top-k index at rank {rank}");
            assert_eq!(scores[rank], all[b], "top-k score at rank {rank}");
        }

        // Fusion against a direct exp/sum re-implementation.
        let fused = fuse_prototype(&t_c, &vocab, &indices, &scores).unwrap();
        let exps: Vec<f64> = scores.iter().map(|&s| (s as f64).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let mut expect: Vec<f64> = t_c.iter().map(|&v| v as f64).collect();
        for (rank, &idx) in indices.iter().enumerate() {
            let w = exps[rank] / sum;
            for (e, &a) in expect.iter_mut().zip(vocab.centroid(idx as usize)) {
                *e += w * a as f64;
            }
        }
        for (got, want) in fused.iter().zip(&expect) {
            assert!((*got as f64 - want).abs() < 1e-6, "fusion mismatch");
        }
    }
    println!("criterion 3 (oracle equivalence): PASS");
}

/// Criterion 4 — K-means recovers well-separated cloud means, inertia never
/// increases, and |N| equal to the point count drives inertia to zero.
#[test]
fn criterion_4_clustering() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (clouds, per_cloud, dim) = (3usize, 10usize, 8usize);
    let mut data = Vec::with_capacity(clouds * per_cloud * dim);
    for c in 0..clouds {
        for _ in 0..per_cloud {
            for j in 0..dim {
                let center = if j == c { 1.0f32 } else { 0.0 };
                data.push(center + rng.gen_range(-0.01f32..0.01));
            }
        }
    }
    let bank = SemanticBank::new(clouds, per_cloud, dim, data).unwrap();

    let (vocab, trace) = build_vocabulary(&bank, clouds, 7).unwrap();
    for w in trace.inertia.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "inertia increased: {} -> {}", w[0], w[1]);
    }

    // Permutation-matched centroid check against per-cloud arithmetic means.
    let mut means = vec![vec![0.0f64; dim]; clouds];
    for c in 0..clouds {
        for i in 0..per_cloud {
            for (m, &v) in means[c].iter_mut().zip(bank.row(c, i)) {
                *m += v as f64 / per_cloud as f64;
            }
        }
    }
    let mut used = vec![false; clouds];
    for k in 0..clouds {
        let (best, dist) = (0..clouds)
            .map(|c| {
                let d2: f64 = vocab
                    .centroid(k)
                    .iter()
                    .zip(&means[c])
                    .map(|(&a, &b)| (a as f64 - b) * (a as f64 - b))
                    .sum();
                (c, d2.sqrt())
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!(dist < 0.02, "centroid {k} is {dist} from its cloud mean");
        assert!(!used[best], "two centroids matched cloud {best}");
        used[best] = true;
    }

    // One centroid per point: zero inertia.
    let n_points = bank.num_rows();
    let (_, trace) = build_vocabulary(&bank, n_points, 7).unwrap();
    assert_eq!(*trace.inertia.last().unwrap(), 0.0);
    println!("criterion 4 (clustering): PASS");
}

/// Criterion 5 — with constant live parameters the EMA gap decays exactly
/// geometrically for 50 steps at alpha in {0.1, 0.2, 0.8}.
#[test]
fn criterion_5_ema_dynamics() {
    for &alpha in &[0.1, 0.2, 0.8] {
        let mut pair = EmaProjectorPair::seeded(4, 3, alpha, 51).unwrap();
        // Displace the mean; live parameters stay fixed from here on.
        for w in &mut pair.mean_v.weight {
            *w += 0.5;
        }
        for b in &mut pair.mean_t.bias {
            *b -= 0.25;
        }
        let gap = |p: &EmaProjectorPair| -> f64 {
            let mut sq = 0.0;
            for (m, l) in p.mean_v.weight.iter().zip(&p.live_v.weight) {
                sq += (m - l) * (m - l);
            }
            for (m, l) in p.mean_t.bias.iter().zip(&p.live_t.bias) {
                sq += (m - l) * (m - l);
            }
            sq.sqrt()
        };
        let initial = gap(&pair);
        for t in 1..=50i32 {
            pair.ema_update();
            let expect = (1.0 - alpha).powi(t) * initial;
            assert!(
                (gap(&pair) - expect).abs() < 1e-6,
                "alpha {alpha} step {t}: gap {} expected {expect}",
                gap(&pair)
            );
        }
    }
    println!("criterion 5 (EMA dynamics): PASS");
}

/// Criterion 6 — a fixed root seed reproduces byte-identical artifact files
/// and identical training loss curves across two runs.
#[test]
fn criterion_6_determinism() {
    let spec = SyntheticSpec::default();
    let config = TrainConfig {
        vocab_size: 32,
        top_k: 8,
        proj_dim: 16,
        epochs: 3,
        lr: 0.01,
        ..TrainConfig::default()
    };

    let produce = |dir: &std::path::Path| {
        let ds = generate_synthetic(&spec).unwrap();
        let outcome = generate_descriptions(
            &ds.train.classes,
            config.n_descriptions,
            &MockLlm,
            Some(&dir.join("cache.jsonl")),
            &GenerateOptions::default(),
        )
        .unwrap();
        let sets = outcome.into_result().unwrap();
        write_description_sets(&dir.join("descs.jsonl"), &sets).unwrap();
        let encoder = MockTextEncoder::new(config.embed_dim).unwrap();
        let bank = encode_bank(&sets, &encoder).unwrap();
        bank.write(&dir.join("bank.bin")).unwrap();
        let (vocab, _) = build_vocabulary(&bank, config.vocab_size, config.seed).unwrap();
        vocab.write(&dir.join("vocab.bin")).unwrap();
        let table = encode_class_descriptors(&ds.train.classes, &encoder).unwrap();
        let protos = build_prototypes(&table, &vocab, config.top_k, 0).unwrap();
        protos.write(&dir.join("protos.bin")).unwrap();
        let (_, result) = run_training(&config, &ds.train, &protos, None, None).unwrap();
        result.per_step
    };

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let steps_a = produce(a.path());
    let steps_b = produce(b.path());
    for name in ["cache.jsonl", "descs.jsonl", "bank.bin", "vocab.bin", "protos.bin"] {
        let bytes_a = std::fs::read(a.path().join(name)).unwrap();
        let bytes_b = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between runs");
    }
    assert_eq!(steps_a, steps_b, "loss curves differ between runs");
    println!("criterion 6 (determinism): PASS");
}

/// Criterion 7 — synthetic end-to-end: training loss falls, and the full
/// objective beats the contrastive-only ablation on unseen-class Recall@1 in
/// at least 4 of 5 seeds.
#[test]
fn criterion_7_synthetic_end_to_end() {
    let start = Instant::now();
    let mut wins = 0usize;
    let mut sum_full = 0.0;
    let mut sum_aux = 0.0;
    for seed in 100..105u64 {
        // 10 train / 10 test classes, 20 samples per class.
        let spec = SyntheticSpec { seed, ..SyntheticSpec::default() };
        let full_config = TrainConfig {
            vocab_size: 64,
            top_k: 4,
            proj_dim: 8,
            hidden_dim: 0,
            identity_init: true,
            epochs: 50,
            lr: 0.05,
            beta: 10.0,
            seed,
            ..TrainConfig::default()
        };
        let (full, result, _) = run_synthetic_experiment(&spec, &full_config, &[1]).unwrap();

        // (a) the loss actually comes down over the reference run.
        let early: f64 = result.per_step[..20].iter().map(|s| s.total).sum::<f64>() / 20.0;
        let late: f64 =
            result.per_step[179..200].iter().map(|s| s.total).sum::<f64>() / 21.0;
        assert!(
            late < early,
            "seed {seed}: loss at steps 180-200 ({late:.4}) not below steps 1-20 ({early:.4})"
        );

        // (b) full objective vs the beta = 0 ablation on unseen classes.
        let aux_config = TrainConfig { beta: 0.0, ..full_config };
        let (aux, _, _) = run_synthetic_experiment(&spec, &aux_config, &[1]).unwrap();
        let (r_full, r_aux) = (full.recall[&1], aux.recall[&1]);
        println!("  seed {seed}: recall@1 full {r_full:.4} vs aux-only {r_aux:.4}");
        if r_full > r_aux {
            wins += 1;
        }
        sum_full += r_full;
        sum_aux += r_aux;
    }
    println!(
        "  mean recall@1: full {:.4} vs aux-only {:.4} ({wins}/5 seeds favor full)",
        sum_full / 5.0,
        sum_aux / 5.0
    );
    assert!(
        wins >= 4,
        "full objective won only {wins}/5 seeds (needs >= 4)"
    );
    assert!(sum_full > sum_aux, "full objective loses on the 5-seed mean");
    assert!(start.elapsed().as_secs() < 300, "criterion 7 exceeded 5 min");
    println!("criterion 7 (synthetic end-to-end): PASS");
}

/// Criterion 8 — the ablate subcommand sweeps every published grid and emits
/// machine-readable tables, well inside the time budget.
#[test]
fn criterion_8_ablation_harness() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("sweep.toml");
    // Short schedule: the criterion is about grid shapes, not accuracy.
    std::fs::write(
        &config_path,
        "epochs = 2\nlr = 0.01\nvocab_size = 64\ntop_k = 16\nproj_dim = 16\n",
    )
    .unwrap();

    let grids: [(&str, AblationAxis); 6] = [
        ("n", AblationAxis::N),
        ("vocab_size", AblationAxis::VocabSize),
        ("top_k", AblationAxis::TopK),
        ("proj_dim", AblationAxis::ProjDim),
        ("ema_alpha", AblationAxis::EmaAlpha),
        ("beta", AblationAxis::Beta),
    ];
    for (name, axis) in grids {
        let out = dir.path().join(format!("{name}.jsonl"));
        let status = Command::new(env!("CARGO_BIN_EXE_lafg"))
            .args(["ablate", "--axis", name, "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "ablate --axis {name} failed");

        let text = std::fs::read_to_string(&out).unwrap();
        let values: Vec<f64> = text
            .lines()
            .map(|l| {
                let row: serde_json::Value = serde_json::from_str(l).unwrap();
                assert!(row["recall"]["1"].is_number(), "row missing recall@1");
                row["value"].as_f64().unwrap()
            })
            .collect();
        assert_eq!(values, axis.published_grid(), "axis {name} grid mismatch");
    }
    assert!(start.elapsed().as_secs() < 1800, "criterion 8 exceeded 30 min");
    println!("criterion 8 (ablation harness): PASS");
}

/// Criterion 9 — bank/vocab/prototype files round-trip bitwise and reject
/// corrupted headers, truncations, and trailing garbage as corrupt files.
#[test]
fn criterion_9_format_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        num_train_classes: 4,
        num_test_classes: 2,
        feature_dim: 16,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec).unwrap();
    let encoder = MockTextEncoder::new(16).unwrap();
    let sets = generate_descriptions(&ds.train.classes, 5, &MockLlm, None, &GenerateOptions::default())
        .unwrap()
        .into_result()
        .unwrap();
    let bank = encode_bank(&sets, &encoder).unwrap();
    let (vocab, _) = build_vocabulary(&bank, 6, 7).unwrap();
    let table = encode_class_descriptors(&ds.train.classes, &encoder).unwrap();
    let protos = build_prototypes(&table, &vocab, 3, 0).unwrap();

    let paths = [
        dir.path().join("bank.bin"),
        dir.path().join("vocab.bin"),
        dir.path().join("protos.bin"),
    ];
    bank.write(&paths[0]).unwrap();
    vocab.write(&paths[1]).unwrap();
    protos.write(&paths[2]).unwrap();

    // Round-trip: read, re-write, byte-compare.
    let rt = dir.path().join("rt.bin");
    SemanticBank::read(&paths[0]).unwrap().write(&rt).unwrap();
    assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&rt).unwrap());
    AttributeVocabulary::read(&paths[1]).unwrap().write(&rt).unwrap();
    assert_eq!(std::fs::read(&paths[1]).unwrap(), std::fs::read(&rt).unwrap());
    lafg::vocab::PrototypeSet::read(&paths[2]).unwrap().write(&rt).unwrap();
    assert_eq!(std::fs::read(&paths[2]).unwrap(), std::fs::read(&rt).unwrap());

    let read_any = |p: &std::path::Path| -> Result<(), LafgError> {
        if p.file_name().unwrap().to_str().unwrap().starts_with("bank") {
            SemanticBank::read(p).map(|_| ())
        } else if p.file_name().unwrap().to_str().unwrap().starts_with("vocab") {
            AttributeVocabulary::read(p).map(|_| ())
        } else {
            lafg::vocab::PrototypeSet::read(p).map(|_| ())
        }
    };
    for path in &paths {
        let original = std::fs::read(path).unwrap();

        // Corrupted magic byte.
        let mut bad = original.clone();
        bad[0] ^= 0xff;
        std::fs::write(path, &bad).unwrap();
        assert!(
            matches!(read_any(path), Err(LafgError::CorruptFile { .. })),
            "{path:?}: corrupted magic not rejected"
        );

        // Truncated by one byte.
        std::fs::write(path, &original[..original.len() - 1]).unwrap();
        assert!(
            matches!(read_any(path), Err(LafgError::CorruptFile { .. })),
            "{path:?}: truncation not rejected"
        );

        // Trailing garbage.
        let mut long = original.clone();
        long.push(0);
        std::fs::write(path, &long).unwrap();
        assert!(
            matches!(read_any(path), Err(LafgError::CorruptFile { .. })),
            "{path:?}: trailing bytes not rejected"
        );

        std::fs::write(path, &original).unwrap();
    }
    println!("criterion 9 (format fidelity): PASS");
}
