use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use tonecontour::centroid::dataset_word_centroids;
use tonecontour::contours::{contours_method1, contours_method2, normalize_rows, Method2Config};
use tonecontour::data::{build_dataset, time_grid, Gender, PitchMatrix};
use tonecontour::ingest::{read_embeddings, read_f0, read_tokens};
use tonecontour::mapping::{evaluate_mapping, split_dataset, EvalConfig};
use tonecontour::synth::{generate, oracle_check, write_corpus, GenConfig, PipelineOutputs};

fn small(cfg: GenConfig) -> GenConfig {
    GenConfig { n_words: 40, ..cfg }
}

#[test]
fn same_seed_same_corpus() {
    let cfg = small(GenConfig::default());
    let (a, ta) = generate(&cfg).unwrap();
    let (b, tb) = generate(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let (c, _) = generate(&GenConfig { seed: cfg.seed + 1, ..cfg }).unwrap();
    assert_ne!(a.tracks, c.tracks);
}

#[test]
fn default_corpus_shape() {
    let cfg = GenConfig::default();
    let (ds, truth) = generate(&cfg).unwrap();
    assert_eq!(ds.words().len(), 100);
    assert_eq!(truth.n_tokens, ds.len());
    let patterns: BTreeSet<String> = ds.tokens.iter().map(|t| t.tone_pattern.to_string()).collect();
    assert_eq!(patterns.len(), 20);
    assert_eq!(truth.prototypes.len(), 20);
    assert_eq!(ds.embedding_dim(), Some(cfg.q_embed));

    let mut per_word: BTreeMap<&str, (usize, BTreeSet<Gender>)> = BTreeMap::new();
    for t in &ds.tokens {
        t.validate().unwrap();
        let e = per_word.entry(t.word.as_str()).or_default();
        e.0 += 1;
        e.1.insert(t.gender);
        assert_eq!(truth.speaker_gender[&t.speaker], t.gender);
    }
    for (w, (n, genders)) in per_word {
        assert!((cfg.tokens_per_word.0..=cfg.tokens_per_word.1).contains(&n), "{w}: {n} tokens");
        assert_eq!(genders.len(), 2, "{w} has one gender");
    }
    // every planted error and gap points at a real token
    let ids: BTreeSet<&str> = ds.tokens.iter().map(|t| t.token_id.as_str()).collect();
    assert!(truth.pitch_error_tokens.iter().all(|t| ids.contains(t.as_str())));
    assert!(truth.gap_tokens.iter().all(|t| ids.contains(t.as_str())));
    assert!(!truth.pitch_error_tokens.is_empty());
}

#[test]
fn written_corpus_reads_back_identically() {
    let (ds, truth) = generate(&small(GenConfig::default())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &ds, &truth).unwrap();
    let tokens = read_tokens(&dir.path().join("tokens.csv")).unwrap();
    let tracks = read_f0(&dir.path().join("f0.csv"), &dir.path().join("durations.csv")).unwrap();
    let emb = read_embeddings(&dir.path().join("embeddings.csv")).unwrap();
    let back = build_dataset(tokens, tracks, Some(emb)).unwrap();
    assert_eq!(back, ds);
    let json = std::fs::read_to_string(dir.path().join("ground_truth.json")).unwrap();
    let t2: tonecontour::synth::GroundTruth = serde_json::from_str(&json).unwrap();
    assert_eq!(t2, truth);
}

#[test]
fn noiseless_method1_matches_truth() {
    let (ds, truth) = generate(&small(GenConfig::noiseless())).unwrap();
    let set = contours_method1(&ds, 100).unwrap();
    assert!(set.excluded.is_empty());
    let mut errs = Vec::new();
    for (i, id) in set.matrix.row_ids.iter().enumerate() {
        let tok = ds.tokens.iter().find(|t| &t.token_id == id).unwrap();
        let row = set.matrix.row_vec(i);
        let mse: f64 = set
            .matrix
            .grid
            .iter()
            .zip(&row)
            .map(|(&t, v)| (v - truth.true_log_f0(tok, t)).powi(2))
            .sum::<f64>()
            / row.len() as f64;
        errs.push(mse.sqrt());
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    assert!(mean < 0.02, "mean token rmse {mean}");
    assert!(worst < 0.03, "worst token rmse {worst}");
}

#[test]
fn noiseless_method2_maps_perfectly() {
    let (ds, truth) = generate(&GenConfig::noiseless()).unwrap();
    let (set, _) = contours_method2(&ds, 100, &Method2Config::default()).unwrap();
    let z = normalize_rows(&set).unwrap();
    let split = split_dataset(&ds, 0.8039, 1).unwrap();
    let cfg = EvalConfig {
        permutations: 0,
        ..EvalConfig::default()
    };
    let (report, _) = evaluate_mapping("II", &z, &ds, &split, &cfg).unwrap();
    assert_eq!(report.accuracy_test, 1.0);
    assert_eq!(report.accuracy_train, 1.0);
    assert!(report.permutation_baseline.is_none());

    let outputs = PipelineOutputs {
        contours: [("II".to_string(), z)].into(),
        word_centroids: Some(dataset_word_centroids(&ds).unwrap()),
        accuracies: [("II".to_string(), report.accuracy_test)].into(),
        expected_accuracy: Some(1.0),
    };
    let oracle = oracle_check(&ds, &truth, &outputs);
    assert!(oracle.missing.is_empty());
    // smoothing bias only; a perfect pipeline is checked below
    assert!(oracle.word_contour_rmse["II"] < 0.1, "{:?}", oracle.word_contour_rmse);
    assert_eq!(oracle.accuracy_delta["II"], 0.0);
    // noiseless tokens sit on their word's centre
    assert!(oracle.centroid_displacement.unwrap() < 1e-9);
}

#[test]
fn oracle_scores_the_truth_as_perfect() {
    let (ds, truth) = generate(&small(GenConfig::noiseless())).unwrap();
    let grid = time_grid(truth.grid_p);
    let ids: Vec<String> = ds.tokens.iter().map(|t| t.token_id.clone()).collect();
    let values = DMatrix::from_fn(ids.len(), grid.len(), |i, j| truth.word_contour_at(&ds.tokens[i].word, grid[j]));
    let perfect = PitchMatrix::new(values, ids, grid).unwrap();
    let outputs = PipelineOutputs {
        contours: [("truth".to_string(), perfect)].into(),
        word_centroids: Some(truth.word_embeddings.clone()),
        accuracies: [("truth".to_string(), 1.0)].into(),
        expected_accuracy: Some(1.0),
    };
    let r = oracle_check(&ds, &truth, &outputs);
    assert!(r.word_contour_rmse["truth"] < 1e-2);
    assert!(r.centroid_displacement.unwrap() < 1e-2);
    assert!(r.accuracy_delta["truth"].abs() < 1e-2);
}

#[test]
fn oracle_flags_missing_stages() {
    let (ds, truth) = generate(&small(GenConfig::default())).unwrap();
    let r = oracle_check(&ds, &truth, &PipelineOutputs::default());
    assert_eq!(r.missing, vec!["contours", "word_centroids", "accuracies"]);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = GenConfig {
        n_patterns: 21,
        ..GenConfig::default()
    };
    assert!(generate(&bad).is_err());
    let bad = GenConfig {
        ar1_rho: 1.0,
        ..GenConfig::default()
    };
    assert!(generate(&bad).is_err());
}

#[test]
fn more_noise_means_lower_accuracy() {
    let cfg = EvalConfig {
        permutations: 0,
        ..EvalConfig::default()
    };
    let mut means = Vec::new();
    for noise in [0.01, 0.05, 0.15] {
        let mut acc = 0.0;
        for seed in 0..5 {
            let (ds, _) = generate(&small(GenConfig {
                noise_sd: noise,
                seed,
                ..GenConfig::default()
            }))
            .unwrap();
            let z = normalize_rows(&contours_method1(&ds, 50).unwrap()).unwrap();
            let split = split_dataset(&ds, 0.8039, 1).unwrap();
            acc += evaluate_mapping("I", &z, &ds, &split, &cfg).unwrap().0.accuracy_test / 5.0;
        }
        means.push(acc);
    }
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
}
