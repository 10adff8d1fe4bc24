//! Acceptance suite. Runs the ten primary criteria, prints one PASS/FAIL line
//! per criterion and exits non-zero if any fails.
//!
//! Oracles here are written independently of the library: brute-force n-gram
//! matching, exhaustive midpoint search, hand-rolled subgradient and finite
//! difference checks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qe_core::chrf::{chrf_score, ChrfParams};
use qe_core::corpus::{self, generate_synthetic, Direction, SplitSpec, SynthEffects, SynthSpec};
use qe_core::eval::{self, GroupBy};
use qe_core::features::{self, EncodedMatrix, EncodingScheme, FeatureRow};
use qe_core::forest::{self, best_split, CartParams, GbtParams, SplitCriterion};
use qe_core::linear::{self, LassoParams};
use qe_core::mlp::{self, MlpParams};
use qe_core::model::{self, ModelConfig, ModelKind};
use qe_core::tokenizer::BpeVocab;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- 1. ChrF

fn grams_of(items: &[String], k: usize) -> Vec<String> {
    if items.len() < k {
        return Vec::new();
    }
    (0..=items.len() - k).map(|i| items[i..i + k].join("\u{1}")).collect()
}

/// Matches by pulling each candidate gram out of a pool of reference grams.
fn clipped_matches(cand: &[String], reference: &[String]) -> usize {
    let mut pool = reference.to_vec();
    let mut hits = 0;
    for g in cand {
        if let Some(p) = pool.iter().position(|x| x == g) {
            pool.swap_remove(p);
            hits += 1;
        }
    }
    hits
}

/// Sentence ChrF on the 0..1 scale.
fn oracle_chrf(reference: &str, candidate: &str, max_char_n: usize, word_n: usize, beta: f64) -> f64 {
    let chars = |s: &str| s.chars().filter(|c| !c.is_whitespace()).map(String::from).collect::<Vec<_>>();
    let words = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let (rc, cc, rw, cw) = (chars(reference), chars(candidate), words(reference), words(candidate));
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut orders = 0.0;
    let levels = (1..=max_char_n).map(|k| (&rc, &cc, k)).chain((1..=word_n).map(|k| (&rw, &cw, k)));
    for (r, c, k) in levels {
        let (rg, cg) = (grams_of(r, k), grams_of(c, k));
        if rg.is_empty() && cg.is_empty() {
            continue;
        }
        orders += 1.0;
        let m = clipped_matches(&cg, &rg) as f64;
        if !cg.is_empty() {
            p_sum += m / cg.len() as f64;
        }
        if !rg.is_empty() {
            r_sum += m / rg.len() as f64;
        }
    }
    if orders == 0.0 {
        return 0.0;
    }
    let (p, r) = (p_sum / orders, r_sum / orders);
    let b2 = beta * beta;
    if b2 * p + r == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / (b2 * p + r)
    }
}

fn random_text(rng: &mut ChaCha8Rng, alphabet: &[char], max_len: usize) -> String {
    let len = rng.random_range(0..=max_len);
    (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
}

fn criterion_chrf() -> Outcome {
    let t = Instant::now();
    let mut rng = rng(1);
    let alphabet: Vec<char> = "abcde ab  fé日".chars().collect();
    let mut pairs: Vec<(String, String)> = Vec::new();
    while pairs.len() < 50 {
        let r = random_text(&mut rng, &alphabet, 40);
        if r.is_empty() {
            continue;
        }
        // Half the candidates are edits of the reference so matches are common.
        let c = if rng.random_bool(0.5) {
            let mut c: Vec<char> = r.chars().collect();
            for _ in 0..rng.random_range(0..5) {
                let i = rng.random_range(0..c.len());
                c[i] = alphabet[rng.random_range(0..alphabet.len())];
            }
            c.into_iter().collect()
        } else {
            random_text(&mut rng, &alphabet, 40)
        };
        pairs.push((r, c));
    }
    let edge: [(&str, &str); 10] = [
        ("the cat sat", "the cat sat"),
        ("abc", "xyz"),
        ("abc", ""),
        ("a", "a"),
        ("cat", "cta"),
        ("a b c", "abc"),
        ("aaaa", "aa"),
        ("日本語", "日本"),
        ("ab", "abababab"),
        ("abc def", "   "),
    ];
    pairs.extend(edge.iter().map(|(r, c)| (r.to_string(), c.to_string())));

    let plain = ChrfParams::default();
    let plus = ChrfParams::chrf_plus_plus();
    let mut worst = 0.0f64;
    for (r, c) in &pairs {
        for p in [&plain, &plus] {
            let got = chrf_score(r, c, p).map_err(|e| format!("{r:?}/{c:?}: {e}"))? / 100.0;
            let want = oracle_chrf(r, c, p.max_char_n, p.word_n, p.beta);
            worst = worst.max((got - want).abs());
        }
    }
    check(worst <= 1e-6, || format!("max |chrf - oracle| = {worst:e}"))?;
    let same = chrf_score("the cat sat", "the cat sat", &plain).unwrap();
    let disjoint = chrf_score("abc", "xyz", &plain).unwrap();
    check(same == 100.0 && disjoint == 0.0, || format!("identical {same}, disjoint {disjoint}"))?;
    within(t.elapsed(), Duration::from_secs(1))?;
    Ok(format!("{} pairs x 2 variants, max deviation {worst:.1e}", pairs.len()))
}

// ---------------------------------------------------------------- 2. tokenizer

fn criterion_tokenizer() -> Outcome {
    let t = Instant::now();
    let vocab = BpeVocab::toy();
    let mut rng = rng(2);
    let pool: Vec<char> = "the quick brown fox  jumps\t\nÀéжω日本🙂,.!0123456789 "
        .chars()
        .collect();
    for _ in 0..200 {
        let s = random_text(&mut rng, &pool, 60);
        let back = vocab.decode(&vocab.encode(&s));
        check(back.as_deref() == Some(s.as_str()), || format!("round trip failed for {s:?}"))?;
    }

    let letters: Vec<char> = "etaoinshr dlu".chars().collect();
    let mut cases = 0;
    while cases < 50 {
        let text = random_text(&mut rng, &letters, 50);
        let ids = vocab.encode(&text);
        if ids.len() < 2 {
            continue;
        }
        let i = rng.random_range(0..ids.len() - 1);
        let left = vocab.decode_bytes(&ids[i..=i]).unwrap();
        let right = vocab.decode_bytes(&ids[i + 1..=i + 1]).unwrap();
        if vocab.rank_of(&[left.clone(), right.clone()].concat()).is_some() {
            continue;
        }
        let bigger = vocab.with_merge(&left, &right).map_err(|e| e.to_string())?;
        let others: Vec<String> = (0..5).map(|_| random_text(&mut rng, &letters, 50)).collect();
        for s in std::iter::once(&text).chain(&others) {
            let (before, after) = (vocab.count_tokens(s), bigger.count_tokens(s));
            check(after <= before, || format!("merge raised {s:?} from {before} to {after} tokens"))?;
            check(bigger.decode(&bigger.encode(s)).as_deref() == Some(s.as_str()), || {
                format!("round trip failed after merge for {s:?}")
            })?;
        }
        cases += 1;
    }
    within(t.elapsed(), Duration::from_secs(1))?;
    Ok("200 round trips, 50 merge cases".into())
}

// ---------------------------------------------------------------- 3. splits

#[derive(Debug, Clone, Copy, PartialEq)]
struct OracleSplit {
    feature: usize,
    threshold: f64,
    n_left: usize,
    gain: f64,
}

fn sse(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

enum Mode {
    Variance { min_leaf: usize, min_gain: f64 },
    SecondOrder { lambda: f64, gamma: f64, min_child_weight: f64 },
}

/// Tries every midpoint of every feature; the first candidate wins unless a
/// later one is better by more than 1e-9 relative.
fn oracle_split(columns: &[Vec<f64>], targets: &[f64], hess: &[f64], mode: &Mode) -> Option<OracleSplit> {
    let mut best: Option<OracleSplit> = None;
    for (j, col) in columns.iter().enumerate() {
        let mut distinct = col.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        for w in distinct.windows(2) {
            let mid = (w[0] + w[1]) / 2.0;
            let threshold = if mid < w[1] { mid } else { w[0] };
            let left: Vec<usize> = (0..col.len()).filter(|&i| col[i] <= threshold).collect();
            let right: Vec<usize> = (0..col.len()).filter(|&i| col[i] > threshold).collect();
            let pick = |idx: &[usize], v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
            let (gain, scale) = match *mode {
                Mode::Variance { min_leaf, min_gain } => {
                    if left.len() < min_leaf || right.len() < min_leaf {
                        continue;
                    }
                    let parent = sse(targets);
                    let gain = parent - sse(&pick(&left, targets)) - sse(&pick(&right, targets));
                    if gain <= min_gain + 1e-9 * parent.max(1.0) {
                        continue;
                    }
                    (gain, parent.max(1.0))
                }
                Mode::SecondOrder { lambda, gamma, min_child_weight } => {
                    let sum = |idx: &[usize], v: &[f64]| idx.iter().map(|&i| v[i]).sum::<f64>();
                    let (gl, hl) = (sum(&left, targets), sum(&left, hess));
                    let (gr, hr) = (sum(&right, targets), sum(&right, hess));
                    if hl < min_child_weight || hr < min_child_weight {
                        continue;
                    }
                    let score = |g: f64, h: f64| g * g / (h + lambda);
                    let parts = score(gl, hl) + score(gr, hr);
                    let gain = 0.5 * (parts - score(gl + gr, hl + hr)) - gamma;
                    let scale = parts.max(1.0);
                    if gain <= 1e-9 * scale {
                        continue;
                    }
                    (gain, scale)
                }
            };
            let cand = OracleSplit {
                feature: j,
                threshold,
                n_left: left.len(),
                gain,
            };
            if best.is_none_or(|b| gain - b.gain > 1e-9 * scale.max(b.gain.abs())) {
                best = Some(cand);
            }
        }
    }
    best
}

fn same_split(got: Option<(usize, f64, usize, f64)>, want: Option<OracleSplit>, found: &mut usize) -> bool {
    *found += usize::from(want.is_some());
    match (got, want) {
        (None, None) => true,
        (Some((f, t, n, g)), Some(w)) => {
            f == w.feature && t == w.threshold && n == w.n_left && (g - w.gain).abs() <= 1e-9 * w.gain.abs().max(1.0)
        }
        _ => false,
    }
}

fn root_of(tree: &forest::Tree<f64>) -> Option<(usize, f64, usize, f64)> {
    match &tree.nodes[0] {
        forest::Node::Split {
            feature,
            threshold,
            left,
            gain,
            ..
        } => {
            let n_left = match &tree.nodes[*left] {
                forest::Node::Split { n_samples, .. } | forest::Node::Leaf { n_samples, .. } => *n_samples,
            };
            Some((*feature, *threshold, n_left, *gain))
        }
        forest::Node::Leaf { .. } => None,
    }
}

fn criterion_splits() -> Outcome {
    let t = Instant::now();
    let mut rng = rng(3);
    let (mut compared, mut found) = (0, 0);
    for inst in 0..100 {
        let n = rng.random_range(2..=12);
        let d = rng.random_range(1..=3);
        // A coarse grid forces duplicate values and tied gains.
        let coarse = inst % 2 == 0;
        let value = |rng: &mut ChaCha8Rng| {
            if coarse {
                f64::from(rng.random_range(0..5)) * 0.5
            } else {
                rng.random_range(-3.0..3.0)
            }
        };
        let columns: Vec<Vec<f64>> = (0..d).map(|_| (0..n).map(|_| value(&mut rng)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..6))).collect();
        let grad: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let hess: Vec<f64> = (0..n).map(|_| rng.random_range(0.25..2.0)).collect();
        let ones = vec![1.0; n];

        let min_leaf = rng.random_range(1..=3);
        let min_gain = if rng.random_bool(0.3) { 0.5 } else { 0.0 };
        let var_mode = Mode::Variance { min_leaf, min_gain };
        let crit_v = SplitCriterion::Variance {
            min_leaf,
            min_split_gain: min_gain,
        };
        let (lambda, gamma, mcw) = (
            [0.0, 0.5, 1.0][rng.random_range(0..3)],
            [0.0, 0.05][rng.random_range(0..2)],
            [0.0, 0.5, 1.5][rng.random_range(0..3)],
        );
        let so_mode = Mode::SecondOrder {
            lambda,
            gamma,
            min_child_weight: mcw,
        };
        let crit_s = SplitCriterion::SecondOrder {
            lambda,
            gamma,
            min_child_weight: mcw,
        };

        for (j, col) in columns.iter().enumerate() {
            let single = std::slice::from_ref(col);
            let got_v = best_split(col, &y, None, &crit_v).map(|s| (0, s.threshold, s.n_left, s.gain));
            let want_v = oracle_split(single, &y, &ones, &var_mode);
            check(same_split(got_v, want_v, &mut found), || {
                format!("instance {inst} feature {j} variance: got {got_v:?}, oracle {want_v:?}")
            })?;
            let got_s = best_split(col, &grad, Some(&hess), &crit_s).map(|s| (0, s.threshold, s.n_left, s.gain));
            let want_s = oracle_split(single, &grad, &hess, &so_mode);
            check(same_split(got_s, want_s, &mut found), || {
                format!("instance {inst} feature {j} second order: got {got_s:?}, oracle {want_s:?}")
            })?;
            compared += 2;
        }

        // Whole-node search across features, through the tree learners.
        let rows: Vec<Vec<f64>> = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        let names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        let m = EncodedMatrix::from_rows(&rows, y.clone(), names).map_err(|e| e.to_string())?;
        let cart = forest::fit_cart(
            &m,
            &CartParams {
                max_depth: 1,
                min_leaf,
                min_split_gain: min_gain,
            },
        )
        .map_err(|e| e.to_string())?;
        let want = oracle_split(&columns, &y, &ones, &var_mode);
        check(same_split(root_of(&cart), want, &mut found), || {
            format!("instance {inst} cart root: got {:?}, oracle {want:?}", root_of(&cart))
        })?;

        let base = 2.5;
        let gbt = forest::fit_gbt(
            &m,
            &GbtParams {
                n_rounds: 1,
                learning_rate: 1.0,
                lambda,
                gamma,
                max_depth: 1,
                min_child_weight: mcw,
                base_score: Some(base),
                seed: 0,
            },
        )
        .map_err(|e| e.to_string())?;
        let g0: Vec<f64> = y.iter().map(|v| base - v).collect();
        let want = oracle_split(&columns, &g0, &ones, &so_mode);
        check(same_split(root_of(&gbt.trees[0]), want, &mut found), || {
            format!("instance {inst} gbt root: got {:?}, oracle {want:?}", root_of(&gbt.trees[0]))
        })?;
        compared += 2;
    }
    within(t.elapsed(), Duration::from_secs(5))?;
    Ok(format!("100 instances, {compared} comparisons, {found} with a split"))
}

// ---------------------------------------------------------------- 4. GBT

fn criterion_gbt() -> Outcome {
    let one = EncodedMatrix::from_rows(&[vec![0.0]], vec![5.0], vec!["x".into()]).map_err(|e| e.to_string())?;
    let model = forest::fit_gbt(
        &one,
        &GbtParams {
            n_rounds: 1,
            learning_rate: 1.0,
            lambda: 1.0,
            max_depth: 0,
            base_score: Some(3.0),
            ..GbtParams::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let leaf = match model.trees[0].nodes[..] {
        [forest::Node::Leaf { value, .. }] => value,
        _ => return Err("single-sample tree is not a single leaf".into()),
    };
    let pred = forest::predict_gbt(&model, &one).map_err(|e| e.to_string())?[0];
    check(leaf == 1.0 && pred == 4.0, || format!("leaf {leaf}, prediction {pred}; expected 1 and 4"))?;

    let mut rng = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(10..60);
        let d = rng.random_range(1..4);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * 3.0 + rng.random_range(-1.0..1.0)).collect();
        let names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        let m = EncodedMatrix::from_rows(&rows, y.clone(), names.clone()).map_err(|e| e.to_string())?;
        let depth = rng.random_range(1..5);
        let gbt = forest::fit_gbt(
            &m,
            &GbtParams {
                n_rounds: 1,
                learning_rate: 1.0,
                lambda: 0.0,
                gamma: 0.0,
                max_depth: depth,
                min_child_weight: 1.0,
                base_score: None,
                seed: 0,
            },
        )
        .map_err(|e| e.to_string())?;
        let mean = y.iter().sum::<f64>() / n as f64;
        let resid = EncodedMatrix::from_rows(&rows, y.iter().map(|v| v - mean).collect(), names)
            .map_err(|e| e.to_string())?;
        let cart = forest::fit_cart(
            &resid,
            &CartParams {
                max_depth: depth,
                min_leaf: 1,
                min_split_gain: 0.0,
            },
        )
        .map_err(|e| e.to_string())?;
        let a = forest::predict_gbt(&gbt, &m).map_err(|e| e.to_string())?;
        let b = forest::predict_tree(&cart, &resid).map_err(|e| e.to_string())?;
        for (p, q) in a.iter().zip(&b) {
            worst = worst.max((p - (q + mean)).abs());
        }
    }
    check(worst <= 1e-9, || format!("GBT vs CART on residuals differ by {worst:e}"))?;
    Ok(format!("leaf 1, prediction 4; 20 reductions to CART, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 5. Lasso

fn standardized_problem(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = rng.random_range(1..=10);
    let n = rng.random_range(d + 5..=50);
    let mut cols: Vec<Vec<f64>> = (0..d).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    for c in &mut cols {
        let m = c.iter().sum::<f64>() / n as f64;
        let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
        c.iter_mut().for_each(|v| *v = (*v - m) / sd);
    }
    let truth: Vec<f64> = (0..d)
        .map(|_| if rng.random_bool(0.5) { rng.random_range(-3.0..3.0) } else { 0.0 })
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| 1.5 + (0..d).map(|j| cols[j][i] * truth[j]).sum::<f64>() + rng.random_range(-1.0..1.0))
        .collect();
    let rows = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    (rows, y)
}

/// Least squares with intercept by Gaussian elimination on the augmented
/// normal equations.
fn oracle_ols(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let d = rows[0].len() + 1;
    let mut a = vec![vec![0.0; d + 1]; d];
    for (r, &t) in rows.iter().zip(y) {
        let x: Vec<f64> = r.iter().copied().chain([1.0]).collect();
        for i in 0..d {
            for j in 0..d {
                a[i][j] += x[i] * x[j];
            }
            a[i][d] += x[i] * t;
        }
    }
    for c in 0..d {
        let p = (c..d).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        for r in 0..d {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=d {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    (0..d - 1).map(|i| a[i][d] / a[i][i]).collect()
}

fn criterion_lasso() -> Outcome {
    let mut rng = rng(5);
    let tight = |lambda: f64| LassoParams {
        lambda,
        max_iter: 1_000_000,
        tol: 1e-13,
    };
    let (mut kkt, mut ols_gap) = (0.0f64, 0.0f64);
    for p in 0..20 {
        let (rows, y) = standardized_problem(&mut rng);
        let (n, d) = (rows.len(), rows[0].len());
        let names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        let m = EncodedMatrix::from_rows(&rows, y.clone(), names).map_err(|e| e.to_string())?;
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let null = (0..d)
            .map(|j| (rows.iter().zip(&y).map(|(r, t)| r[j] * (t - y_mean)).sum::<f64>() / n as f64).abs())
            .fold(0.0, f64::max);

        let lambda = null * rng.random_range(0.05..0.9);
        let fit = linear::fit_lasso(&m, &tight(lambda)).map_err(|e| e.to_string())?;
        let resid: Vec<f64> = rows
            .iter()
            .zip(&y)
            .map(|(r, t)| t - fit.intercept - r.iter().zip(&fit.weights).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        for j in 0..d {
            let corr = rows.iter().zip(&resid).map(|(r, e)| r[j] * e).sum::<f64>() / n as f64;
            let w = fit.weights[j];
            let v = if w != 0.0 {
                (corr - lambda * w.signum()).abs()
            } else {
                (corr.abs() - lambda).max(0.0)
            };
            kkt = kkt.max(v);
        }
        let intercept_grad = resid.iter().sum::<f64>() / n as f64;
        kkt = kkt.max(intercept_grad.abs());

        let zero = linear::fit_lasso(&m, &tight(0.0)).map_err(|e| e.to_string())?;
        let ols = linear::fit_ols(&m).map_err(|e| e.to_string())?;
        let exact = oracle_ols(&rows, &y);
        for j in 0..d {
            ols_gap = ols_gap.max((zero.weights[j] - ols.weights[j]).abs());
            ols_gap = ols_gap.max((zero.weights[j] - exact[j]).abs());
        }

        let above = linear::fit_lasso(&m, &tight(null * 1.0001 + 1e-12)).map_err(|e| e.to_string())?;
        check(above.weights.iter().all(|&w| w == 0.0), || {
            format!("problem {p}: weights {:?} above the null lambda", above.weights)
        })?;
    }
    check(kkt <= 1e-6, || format!("KKT violation {kkt:e}"))?;
    check(ols_gap <= 1e-6, || format!("lambda = 0 differs from OLS by {ols_gap:e}"))?;
    Ok(format!("20 problems, KKT {kkt:.1e}, OLS gap {ols_gap:.1e}, null lambda all zero"))
}

// ---------------------------------------------------------------- 6. MLP

fn loss_at(model: &qe_core::mlp::MlpModel<f64>, x: &[f64], y: f64) -> f64 {
    let e = mlp::forward(model, x).expect("width") - y;
    0.5 * e * e
}

fn param(m: &mut qe_core::mlp::MlpModel<f64>, layer: usize, bias: bool, k: usize) -> &mut f64 {
    if bias {
        &mut m.layers[layer].bias[k]
    } else {
        &mut m.layers[layer].weights[k]
    }
}

/// Central differences over every weight and bias, in the library's flat
/// order: per layer, weights row-major, then biases.
fn numeric_gradient(model: &qe_core::mlp::MlpModel<f64>, x: &[f64], y: f64, h: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut probe = model.clone();
    for l in 0..model.layers.len() {
        for bias in [false, true] {
            let len = if bias { model.layers[l].bias.len() } else { model.layers[l].weights.len() };
            for k in 0..len {
                let orig = *param(&mut probe, l, bias, k);
                *param(&mut probe, l, bias, k) = orig + h;
                let up = loss_at(&probe, x, y);
                *param(&mut probe, l, bias, k) = orig - h;
                let down = loss_at(&probe, x, y);
                *param(&mut probe, l, bias, k) = orig;
                out.push((up - down) / (2.0 * h));
            }
        }
    }
    out
}

fn criterion_mlp() -> Outcome {
    let mut rng = rng(6);
    let shapes: [&[usize]; 3] = [&[5], &[6, 4], &[3, 3, 3]];
    let mut worst = 0.0f64;
    let mut rejected = 0;
    let mut draws = 0;
    while draws < 20 {
        let width = rng.random_range(2..=6);
        let hidden = shapes[draws % 3].to_vec();
        let mut model = mlp::init_mlp::<f64>(
            width,
            &MlpParams {
                hidden_layers: hidden,
                seed: draws as u64,
                ..MlpParams::default()
            },
        );
        for layer in &mut model.layers {
            layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        model.output_offset = rng.random_range(-1.0..1.0);
        model.output_scale = rng.random_range(0.5..2.0);
        let x: Vec<f64> = (0..width).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = rng.random_range(-2.0..2.0);
        let pre = model.hidden_pre_activations(&x).map_err(|e| e.to_string())?;
        if pre.iter().any(|z| z.abs() < 1e-6) {
            rejected += 1;
            continue;
        }
        let analytic = model.gradient(&x, y).map_err(|e| e.to_string())?;
        let numeric = numeric_gradient(&model, &x, y, 1e-5);
        check(analytic.len() == numeric.len(), || "gradient length differs from parameter count".into())?;
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-8));
        }
        let lib = mlp::grad_check(&model, &x, y).map_err(|e| e.to_string())?;
        worst = worst.max(lib);
        draws += 1;
    }
    check(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("20 draws ({rejected} redrawn near a kink), max relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- 7-8. synthetic

fn synthetic_split(seed: u64) -> Result<(Vec<FeatureRow>, Vec<FeatureRow>), String> {
    let (records, meta) = generate_synthetic(&SynthSpec {
        n_languages: 24,
        rows_per_language: 120,
        noise_sd: 8.0,
        seed,
    })
    .map_err(|e| e.to_string())?;
    let rows = features::build_rows(&records, &meta, &BpeVocab::toy()).map_err(|e| e.to_string())?;
    let (_, test) = corpus::split(&records, &SplitSpec { seed, ..SplitSpec::default() }, None).map_err(|e| e.to_string())?;
    let test_ids: std::collections::HashSet<String> = test.into_iter().map(|r| r.id).collect();
    Ok(rows.into_iter().partition(|r| !test_ids.contains(&r.id)))
}

fn criterion_hierarchy() -> Outcome {
    let t = Instant::now();
    let (train, test) = synthetic_split(42)?;
    let cfg = ModelConfig::default().with_seed(42);
    let mut r2 = BTreeMap::new();
    for kind in ModelKind::ALL {
        let m = model::train::<f64>(kind, &train, &cfg).map_err(|e| e.to_string())?;
        let rep = eval::evaluate(&m, &test, "all").map_err(|e| e.to_string())?;
        r2.insert(kind, rep.r2);
    }
    let [ols, lasso, rf, gbt, mlp] = ModelKind::ALL.map(|k| r2[&k]);
    let summary = format!("GBT {gbt:.3}, RF {rf:.3}, MLP {mlp:.3}, OLS {ols:.3}, Lasso {lasso:.3}");
    check(gbt >= rf && rf >= mlp, || format!("ordering broken: {summary}"))?;
    check(mlp >= ols.max(lasso), || format!("ordering broken: {summary}"))?;
    check((ols - lasso).abs() <= 0.02, || format!("OLS and Lasso differ: {summary}"))?;
    check(gbt - ols >= 0.15, || format!("gap GBT - OLS = {:.3} < 0.15: {summary}", gbt - ols))?;
    within(t.elapsed(), Duration::from_secs(60))?;
    Ok(summary)
}

fn criterion_importance() -> Outcome {
    let (train, _) = synthetic_split(42)?;
    let cfg = ModelConfig::default().with_seed(42);
    let m = model::train::<f64>(ModelKind::Gbt, &train, &cfg).map_err(|e| e.to_string())?;
    let imp = m.importance().map_err(|e| e.to_string())?;
    let total: f64 = imp.iter().map(|e| e.weight).sum();
    check(imp[0].feature == "joshi_class", || {
        format!("top feature is {} ({:.3})", imp[0].feature, imp[0].weight)
    })?;
    check((total - 1.0).abs() <= 1e-9, || format!("importances sum to {total}"))?;
    check(imp.len() == 9, || format!("{} features ranked", imp.len()))?;
    Ok(format!(
        "joshi_class {:.3}, next {} {:.3}, sum - 1 = {:.1e}",
        imp[0].weight,
        imp[1].feature,
        imp[1].weight,
        total - 1.0
    ))
}

// ---------------------------------------------------------------- 9. marginals

fn criterion_marginals() -> Outcome {
    let fx = SynthEffects::shipped();
    let family = fx.families[0].name.clone();
    let (ref_f, cand_f) = (2.5, 2.5);
    // One row per (region, joshi class); nothing else varies, no noise.
    let mut rows = Vec::new();
    for (ri, region) in fx.regions.iter().enumerate() {
        for joshi in 1..=6u8 {
            let meta = corpus::LanguageMeta {
                code: format!("l{ri}{joshi}"),
                script: "Latn".into(),
                family: family.clone(),
                region: region.name.clone(),
                joshi_class: joshi,
            };
            let target = fx.planted_mean(&meta, ref_f, cand_f).ok_or("region missing from tables")?;
            rows.push(FeatureRow {
                id: format!("r{ri}-{joshi}"),
                direction: Direction::XxToEnglish,
                lang_code: meta.code.clone(),
                joshi_class: joshi,
                region: region.name.clone(),
                family: family.clone(),
                script: "Latn".into(),
                ref_fertility: ref_f,
                cand_fertility: cand_f,
                ref_tokens: 50,
                cand_tokens: 50,
                unsegmented: false,
                target_chrf: target,
            });
        }
    }
    let actual: Vec<f64> = rows.iter().map(|r| r.target_chrf).collect();
    let report = eval::marginal_means(&rows, &actual, GroupBy::Region, None).map_err(|e| e.to_string())?;

    // Offset of a region: its effect plus its interaction averaged over classes.
    let offset = |ri: usize| fx.regions[ri].effect + (0..6).map(|j| fx.interaction[j][ri]).sum::<f64>() / 6.0;
    let base_idx = 0;
    let base_mean = report
        .rows
        .iter()
        .find(|r| r.level == fx.regions[base_idx].name)
        .ok_or("baseline region missing")?
        .mean_actual;
    let mut worst = 0.0f64;
    for (ri, region) in fx.regions.iter().enumerate() {
        let row = report.rows.iter().find(|r| r.level == region.name).ok_or("region missing")?;
        let want = offset(ri) - offset(base_idx);
        worst = worst.max((row.mean_actual - base_mean - want).abs());
    }
    check(worst <= 1e-9, || format!("region offsets recovered to {worst:e}"))?;

    let enc = features::fit_encoder(&rows, EncodingScheme::TargetOrderedOrdinal).map_err(|e| e.to_string())?;
    let (m, _) = enc.encode_matrix::<f64>(&rows);
    let tree = forest::fit_cart(
        &m,
        &CartParams {
            max_depth: 32,
            min_leaf: 1,
            min_split_gain: 0.0,
        },
    )
    .map_err(|e| e.to_string())?;
    let pred = forest::predict_tree(&tree, &m).map_err(|e| e.to_string())?;
    let fitted = eval::marginal_means(&rows, &pred, GroupBy::Region, None).map_err(|e| e.to_string())?;
    let gap = fitted
        .rows
        .iter()
        .map(|r| (r.mean_predicted - r.mean_actual).abs())
        .fold(0.0, f64::max);
    check(gap <= 1e-9, || format!("exact-fit predicted vs actual differ by {gap:e}"))?;
    Ok(format!(
        "{} regions, offsets within {worst:.1e}, exact fit within {gap:.1e}",
        fx.regions.len()
    ))
}

// ---------------------------------------------------------------- 10. determinism

fn qe(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_qe"))
        .args(args)
        .env("QE_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("qe {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable").flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn pipeline(data: &Path, out: &Path, threads: &str) -> Result<(), String> {
    let (d, o) = (data.to_str().unwrap(), out.to_str().unwrap());
    let synth = out.join("synth");
    qe(&["synth", "--languages", "12", "--rows", "40", "--seed", "3", "-o", synth.to_str().unwrap()], threads)?;
    qe(&["train", "--data", d, "--model", "all", "--direction", "each", "--cv", "3", "--seed", "7", "-o", o], threads)?;
    qe(&["evaluate", "--data", d, "-o", o], threads)?;
    qe(&["importance", "-o", o], threads)?;
    qe(&["marginals", "--data", d, "--group-by", "family", "-o", o], threads)?;
    qe(&["predict", "--data", d, "-o", o], threads)?;
    Ok(())
}

fn criterion_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    qe(&["synth", "--languages", "12", "--rows", "40", "--seed", "3", "-o", data.to_str().unwrap()], "1")?;
    let runs = [("first", "1"), ("rerun", "1"), ("eight", "8")];
    let mut snaps = Vec::new();
    for (name, threads) in runs {
        let out = tmp.path().join(name);
        pipeline(&data, &out, threads)?;
        snaps.push(snapshot(&out));
    }
    let base = &snaps[0];
    check(base.len() > 40, || format!("only {} artifacts", base.len()))?;
    for (snap, (name, threads)) in snaps.iter().zip(runs).skip(1) {
        check(snap.keys().eq(base.keys()), || format!("{name} run wrote a different file set"))?;
        for (path, bytes) in snap {
            check(base[path] == *bytes, || {
                format!("{} differs in the {name} run (QE_THREADS={threads})", path.display())
            })?;
        }
    }
    Ok(format!("{} files identical across reruns and QE_THREADS 1 vs 8", base.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("ChrF oracle equivalence", criterion_chrf),
        ("tokenizer laws", criterion_tokenizer),
        ("split oracle equivalence", criterion_splits),
        ("GBT analytic leaf", criterion_gbt),
        ("Lasso KKT", criterion_lasso),
        ("MLP gradient check", criterion_mlp),
        ("model hierarchy", criterion_hierarchy),
        ("planted importance", criterion_importance),
        ("marginal recovery", criterion_marginals),
        ("pipeline determinism", criterion_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name}: {detail} [{:.2?}]", i + 1, t.elapsed());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
