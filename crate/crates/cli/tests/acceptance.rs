//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! (written straight to stdout so it shows without `--nocapture`); the test
//! fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use tonecontour::contours::read_contours;
use tonecontour::mapping::{fit_mapping, make_split, nn_evaluate, predict, split_dataset, SelfMatch};
use tonecontour::splines::{
    ar1_whiten, bspline_design, penalized_ls, smooth_penalty, BasisSpec, Penalty, Weights,
};
use tonecontour_cli::pipeline::load_dataset;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(name: &str, o: &Outcome) {
    let line = format!("{} {name}: {}\n", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    let _ = std::io::stdout().write_all(line.as_bytes());
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- oracles

/// Dense Gaussian elimination with partial pivoting.
fn gauss_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut a = a.clone();
    let mut b = b.clone();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs())).unwrap();
        a.swap_rows(col, piv);
        b.swap_rows(col, piv);
        for r in col + 1..n {
            let f = a[(r, col)] / a[(col, col)];
            for c in col..n {
                a[(r, c)] -= f * a[(col, c)];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = DVector::zeros(n);
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[(r, c)] * x[c]).sum();
        x[r] = (b[r] - s) / a[(r, r)];
    }
    x
}

/// Textbook Cox–de Boor recursion on open-uniform knots.
fn cox_de_boor(knots: &[f64], i: usize, d: usize, x: f64) -> f64 {
    if d == 0 {
        return if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let l = knots[i + d] - knots[i];
    if l > 0.0 {
        v += (x - knots[i]) / l * cox_de_boor(knots, i, d - 1, x);
    }
    let r = knots[i + d + 1] - knots[i + 1];
    if r > 0.0 {
        v += (knots[i + d + 1] - x) / r * cox_de_boor(knots, i + 1, d - 1, x);
    }
    v
}

fn open_uniform(k: usize, d: usize, lo: f64, hi: f64) -> Vec<f64> {
    let inner = k - d - 1;
    let mut t = vec![lo; d + 1];
    for j in 1..=inner {
        t.push(lo + (hi - lo) * j as f64 / (inner + 1) as f64);
    }
    t.extend(std::iter::repeat_n(hi, d + 1));
    t
}

fn lag1(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let num: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    let den: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    num / den
}

// ---------------------------------------------------------------- criteria

fn spline_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for case in 0..25 {
        let k = rng.random_range(4..=12);
        let n = rng.random_range(k + 3..=50);
        let spec = BasisSpec::cubic(k, 0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let xd = bspline_design(&spec, &x).unwrap();
        let y = DVector::from_fn(n, |i, _| (4.0 * x[i]).sin() + 0.1 * rng.sample::<f64, _>(StandardNormal));
        let lambda = 10f64.powf(rng.random_range(-3.0..3.0));
        let order = 1 + case % 2;
        let p = smooth_penalty(&spec, order);
        let w = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
        let weights = (case % 3 == 0).then_some(Weights::Diagonal(&w));
        let fit = penalized_ls(&xd, &y, &[Penalty::single(0, p.clone())], &[lambda], weights).unwrap();

        let wd = if weights.is_some() { DMatrix::from_diagonal(&w) } else { DMatrix::identity(n, n) };
        let a = xd.transpose() * &wd * &xd + &p * lambda;
        let b = xd.transpose() * &wd * &y;
        let oracle = gauss_solve(&a, &b);
        worst = worst.max((&fit.coefficients - oracle).amax());
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst < 1e-8 && secs < 5.0,
        format!("max coefficient error {worst:.2e} (< 1e-8), {secs:.2} s (< 5 s)"),
    )
}

fn basis_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    let mut pou: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.random_range(1..=3);
        let k = rng.random_range(d + 1..=12);
        let lo = rng.random_range(-5.0..5.0);
        let hi = lo + rng.random_range(0.1..10.0);
        let x = lo + (hi - lo) * rng.random::<f64>();
        let spec = BasisSpec::new(k, d, lo, hi).unwrap();
        let row = bspline_design(&spec, &[x]).unwrap();
        let knots = open_uniform(k, d, lo, hi);
        for i in 0..k {
            worst = worst.max((row[(0, i)] - cox_de_boor(&knots, i, d, x)).abs());
        }
        pou = pou.max((row.row(0).sum() - 1.0).abs());
    }
    // the right end point closes the last interval
    let end = bspline_design(&BasisSpec::cubic(7, 0.0, 1.0).unwrap(), &[1.0]).unwrap();
    pou = pou.max((end.row(0).sum() - 1.0).abs());
    outcome(
        worst < 1e-12 && pou < 1e-12,
        format!("max deviation from Cox–de Boor {worst:.2e} (< 1e-12), partition of unity {pou:.2e}"),
    )
}

fn penalty_limits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let n = 60;
    let spec = BasisSpec::cubic(10, 0.0, 2.0).unwrap();
    let x: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>()).collect();
    let xd = bspline_design(&spec, &x).unwrap();
    let y = DVector::from_fn(n, |i, _| (3.0 * x[i]).cos() + 0.05 * rng.sample::<f64, _>(StandardNormal));
    let pen = [Penalty::single(0, smooth_penalty(&spec, 2))];

    let free = penalized_ls(&xd, &y, &pen, &[0.0], None).unwrap();
    let ols = xd.clone().svd(true, true).solve(&y, 1e-14).unwrap();
    let ols_err = (&free.coefficients - ols).amax();

    let stiff = penalized_ls(&xd, &y, &pen, &[1e12], None).unwrap().fitted(&xd);
    let line = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
    let ab = line.clone().svd(true, true).solve(&stiff, 1e-14).unwrap();
    let affine_err = (&stiff - &line * ab).amax();
    outcome(
        ols_err < 1e-8 && affine_err < 1e-6,
        format!("λ=0 vs OLS {ols_err:.2e} (< 1e-8); λ=1e12 deviation from a line {affine_err:.2e} (< 1e-6)"),
    )
}

fn ar1_whitening() -> Outcome {
    let rho = 0.95;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut e = Vec::with_capacity(5000);
    let mut prev: f64 = normal.sample(&mut rng) / (1.0f64 - rho * rho).sqrt();
    e.push(prev);
    for _ in 1..5000 {
        prev = rho * prev + normal.sample(&mut rng);
        e.push(prev);
    }
    let raw = lag1(&e);
    let r1 = lag1(&ar1_whiten(&e, rho).unwrap());
    outcome(r1.abs() < 0.05, format!("lag-1 autocorrelation {raw:.3} before, {r1:.4} after (|r1| < 0.05)"))
}

fn exact_recovery() -> Outcome {
    let t0 = Instant::now();
    let (n, q, p) = (400, 32, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let s = DMatrix::from_fn(n, q, |_, _| StandardNormal.sample(&mut rng));
    let g_star = DMatrix::from_fn(q, p, |_, _| StandardNormal.sample(&mut rng));
    let c = &s * &g_star;
    let ids: Vec<String> = (0..n).map(|i| format!("t{i:03}")).collect();
    let words: BTreeMap<String, String> = ids.iter().enumerate().map(|(i, id)| (id.clone(), format!("w{:03}", i / 4))).collect();
    let items: Vec<(String, String)> = ids.iter().map(|id| (id.clone(), words[id].clone())).collect();
    let split = make_split(&items, 0.8039, 1).unwrap();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let rows = |sel: &[String]| sel.iter().map(|id| index[id.as_str()]).collect::<Vec<_>>();
    let (tr, te) = (rows(&split.train_ids), rows(&split.test_ids));
    let s_tr = s.select_rows(&tr);
    let c_tr = c.select_rows(&tr);
    let g = fit_mapping(&s_tr, &c_tr, 0.0).unwrap();
    let frob = (&g.matrix - &g_star).norm();
    let gold = tonecontour::data::PitchMatrix::new(c.clone(), ids.clone(), tonecontour::data::time_grid(p)).unwrap();
    let acc_train = nn_evaluate(&predict(&g, &s_tr).unwrap(), &split.train_ids, &gold, &words, SelfMatch::Allow)
        .unwrap()
        .accuracy;
    let acc_test = nn_evaluate(&predict(&g, &s.select_rows(&te)).unwrap(), &split.test_ids, &gold, &words, SelfMatch::Allow)
        .unwrap()
        .accuracy;
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        frob < 1e-8 && acc_train == 1.0 && acc_test == 1.0 && secs < 10.0,
        format!(
            "‖G−G*‖_F {frob:.2e} (< 1e-8), train {acc_train:.3}, test {acc_test:.3} (both 1.0), {secs:.2} s (< 10 s)"
        ),
    )
}

// --------------------------------------------------------- end-to-end run

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tonecontour"));
    c.env("RUST_LOG", "warn");
    c
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed ({}): {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(|s| s.to_string()).collect();
    lines
        .map(|l| {
            // only the AIC table quotes a field, and that field holds commas
            let mut fields = Vec::new();
            let mut cur = String::new();
            let mut quoted = false;
            for ch in l.chars() {
                match ch {
                    '"' => quoted = !quoted,
                    ',' if !quoted => fields.push(std::mem::take(&mut cur)),
                    c => cur.push(c),
                }
            }
            fields.push(cur);
            header.iter().cloned().zip(fields).collect()
        })
        .collect()
}

fn end_to_end(root: &Path, secs: f64) -> Outcome {
    let out = root.join("out1");
    let eval = json(&out.join("eval_report.json"));
    let methods = eval["methods"].as_array().unwrap();
    let acc: BTreeMap<String, f64> = methods
        .iter()
        .map(|m| (m["method"].as_str().unwrap().to_string(), m["accuracy_test"].as_f64().unwrap()))
        .collect();
    let ordered = acc["II"] > acc["III"] && acc["III"] > acc["I"];

    // counting oracle for the chance level, from the files alone
    let ds = load_dataset(&out.join("ingested")).unwrap();
    let (_, c) = read_contours(&out.join("contours_I.csv")).unwrap();
    let rows: BTreeSet<&str> = c.row_ids.iter().map(|s| s.as_str()).collect();
    let ds = ds.filter(|t| rows.contains(t.token_id.as_str()));
    let split = split_dataset(&ds, 0.8039, 1).unwrap();
    let word_of: BTreeMap<&str, &str> = ds.tokens.iter().map(|t| (t.token_id.as_str(), t.word.as_str())).collect();
    let mut gold_count: BTreeMap<&str, usize> = BTreeMap::new();
    for id in &c.row_ids {
        *gold_count.entry(word_of[id.as_str()]).or_default() += 1;
    }
    let chance = split
        .test_ids
        .iter()
        .map(|id| gold_count[word_of[id.as_str()]] as f64 / c.row_ids.len() as f64)
        .sum::<f64>()
        / split.test_ids.len() as f64;

    let mut ok = ordered && secs < 120.0;
    let mut parts = vec![format!(
        "test accuracy I {:.3}, II {:.3}, III {:.3} (II > III > I)",
        acc["I"], acc["II"], acc["III"]
    )];
    for m in methods {
        let name = m["method"].as_str().unwrap();
        let majority = m["majority_baseline"].as_f64().unwrap();
        let perm_mean = m["permutation_baseline"]["mean"].as_f64().unwrap();
        let perm_sd = m["permutation_baseline"]["sd"].as_f64().unwrap();
        let a = acc[name];
        let ratio = a / majority.max(perm_mean);
        let within = (perm_mean - chance).abs() <= 2.0 * perm_sd;
        ok &= ratio >= 3.0 && within;
        parts.push(format!(
            "{name}: {ratio:.1}× best baseline (≥ 3×), permutation {perm_mean:.4}±{perm_sd:.4} vs chance {chance:.4} (within 2 sd: {within})"
        ));
    }
    parts.push(format!("run {secs:.1} s (< 120 s)"));
    outcome(ok, parts.join("; "))
}

fn aic_importance(root: &Path) -> Outcome {
    let rows = csv_rows(&root.join("out1/aic_table.csv"));
    let mut ok = !rows.is_empty();
    let mut parts = Vec::new();
    for r in &rows {
        let d: f64 = r["delta_aic"].parse().unwrap();
        let pass = if r["withheld_term"].contains("word") { d > 100.0 } else { d < 10.0 };
        ok &= pass;
        parts.push(format!("{} {} Δ{d:.1}", r["context"], r["withheld_term"]));
    }
    outcome(ok, format!("word term > 100, null bg_prob_fol < 10: {}", parts.join(", ")))
}

fn centroid_identity(root: &Path) -> Outcome {
    let out = root.join("out1");
    let ds = load_dataset(&out.join("ingested")).unwrap();
    let emb = ds.embeddings.as_ref().unwrap();
    let mut worst: f64 = 0.0;
    for m in ["I", "II", "III"] {
        let (_, c) = read_contours(&out.join(format!("contours_{m}.csv"))).unwrap();
        let keep: BTreeSet<&str> = c.row_ids.iter().map(|s| s.as_str()).collect();
        let sub = ds.filter(|t| keep.contains(t.token_id.as_str()));
        let split = split_dataset(&sub, 0.8039, 1).unwrap();
        let index: BTreeMap<&str, usize> = c.row_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let tr: Vec<usize> = split.train_ids.iter().map(|id| index[id.as_str()]).collect();
        let s_tr = sub.semantic_matrix(&split.train_ids).unwrap().values;
        let g = fit_mapping(&s_tr, &c.values.select_rows(&tr), 0.0).unwrap();
        // per word: projection of the mean embedding vs mean of the projections
        let mut by_word: BTreeMap<&str, Vec<&Vec<f64>>> = BTreeMap::new();
        for t in &sub.tokens {
            by_word.entry(t.word.as_str()).or_default().push(&emb[&t.token_id]);
        }
        for vs in by_word.values() {
            let q = vs[0].len();
            let s = DMatrix::from_fn(vs.len(), q, |i, j| vs[i][j]);
            let centroid = DMatrix::from_row_slice(1, q, s.row_mean().as_slice());
            let a = predict(&g, &centroid).unwrap();
            let b = predict(&g, &s).unwrap().row_mean();
            worst = worst.max((a - b).amax());
        }
    }
    outcome(worst < 1e-12, format!("max |proj(centroid) − centroid(proj)| {worst:.2e} over three mappings (< 1e-12)"))
}

fn prototype_recovery(root: &Path) -> Outcome {
    let truth = json(&root.join("data/ground_truth.json"));
    let protos = truth["prototypes"].as_object().unwrap();
    let rows = csv_rows(&root.join("out1/nearest_words.csv"));
    let hits = rows
        .iter()
        .filter(|r| r["rank"] == "1" && protos.get(&r["tone_pattern"]).and_then(|v| v.as_str()) == Some(r["word"].as_str()))
        .count();
    outcome(hits >= 18, format!("{hits}/{} patterns recover their planted prototype at rank 1 (≥ 18)", protos.len()))
}

fn determinism(root: &Path) -> Outcome {
    let (a, b) = (root.join("out1"), root.join("out2"));
    let mut files = Vec::new();
    let mut stack = vec![a.clone()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|x| x.to_str()), Some("json" | "csv"))
                && p.file_name().unwrap() != "timings.json"
            {
                files.push(p.strip_prefix(&a).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    outcome(
        differing.is_empty() && files.len() >= 10,
        format!("{} JSON/CSV files compared, {} differ {:?}", files.len(), differing.len(), differing),
    )
}

fn normalization(root: &Path) -> Outcome {
    let out = root.join("out1");
    let ds = load_dataset(&out.join("ingested")).unwrap();
    let word_of: BTreeMap<&str, &str> = ds.tokens.iter().map(|t| (t.token_id.as_str(), t.word.as_str())).collect();
    let (mut mean_err, mut sd_err) = (0.0f64, 0.0f64);
    let mut n_rows = 0;
    let mut check = |v: Vec<f64>| {
        let p = v.len() as f64;
        let m = v.iter().sum::<f64>() / p;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (p - 1.0)).sqrt();
        mean_err = mean_err.max(m.abs());
        sd_err = sd_err.max((sd - 1.0).abs());
        n_rows += 1;
    };
    let mut constant = true;
    for m in ["I", "II", "III"] {
        let (_, c) = read_contours(&out.join(format!("contours_{m}.csv"))).unwrap();
        let mut first: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (i, id) in c.row_ids.iter().enumerate() {
            let row = c.row_vec(i);
            if m == "II" {
                let w = word_of[id.as_str()];
                match first.get(w) {
                    Some(r) => constant &= *r == row,
                    None => {
                        first.insert(w, row.clone());
                    }
                }
            }
            check(row);
        }
    }
    for r in csv_rows(&out.join("gold_contours.csv")) {
        check(r.iter().filter(|(k, _)| k.as_str() != "tone_pattern").map(|(_, v)| v.parse().unwrap()).collect());
    }
    outcome(
        mean_err < 1e-10 && sd_err < 1e-10 && constant,
        format!(
            "{n_rows} rows: max |mean| {mean_err:.1e}, max |sd−1| {sd_err:.1e} (< 1e-10); method II constant within word: {constant}"
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let _ = std::io::stdout().write_all(b"\n");
    let mut results: Vec<(&str, Outcome)> = vec![
        ("spline oracle equivalence", spline_oracle()),
        ("basis correctness", basis_oracle()),
        ("penalty limits", penalty_limits()),
        ("AR(1) whitening", ar1_whitening()),
        ("exact-recovery mapping", exact_recovery()),
    ];
    for (name, o) in &results {
        report(name, o);
    }

    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    let t0 = Instant::now();
    run_ok(bin().arg("synth").arg(format!("--output={}", data.display())));
    // identical configs: same relative paths, run from two sibling directories
    let all_in = |dir: &str| {
        let cwd = root.join(format!("run_{dir}"));
        std::fs::create_dir_all(&cwd).unwrap();
        run_ok(bin().current_dir(&cwd).args(["all", "--input=../data", "--output=out"]));
        std::fs::rename(cwd.join("out"), root.join(dir)).unwrap();
    };
    all_in("out1");
    let secs = t0.elapsed().as_secs_f64();
    all_in("out2");

    let tail: Vec<(&str, Outcome)> = vec![
        ("end-to-end ordering", end_to_end(root, secs)),
        ("AIC importance", aic_importance(root)),
        ("centroid identity", centroid_identity(root)),
        ("prototype recovery", prototype_recovery(root)),
        ("determinism", determinism(root)),
        ("normalization invariants", normalization(root)),
    ];
    for (name, o) in &tail {
        report(name, o);
    }
    results.extend(tail);
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
