// Acceptance suite. Runs without the libtest harness so every criterion
// prints one PASS/FAIL/SKIP line; the process fails if any criterion fails.
//
//   cargo test -p readapt --test acceptance

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use half::bf16;
use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use readapt::evalkit::{exact_match_anywhere, rouge_l_recall};
use readapt::merge::compose_with;
use readapt::peft::{densify_dora, DoraModule, LoraModule};
use readapt::retrieval::{Bm25Index, Bm25Params, Passage};
use readapt::spectra::svd::{svd, to_matrix};
use readapt::spectra::{
    compress, explained_variance, param_report_with_total, param_sweep, select_rank, CompressOptions,
};
use readapt::{
    apply_delta, extract_delta, load_checkpoint, save_checkpoint, Checkpoint, DType, DeltaAdapter, ExtractOptions,
    NamedTensor, TensorData,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

// ---------------------------------------------------------------------------
// ULP distance

fn ordered_f32(x: f32) -> i64 {
    let b = x.to_bits() as i32;
    i64::from(if b < 0 { i32::MIN - b } else { b })
}

fn ordered_bf16(x: bf16) -> i64 {
    let b = x.to_bits() as i16;
    i64::from(if b < 0 { i16::MIN - b } else { b })
}

/// Largest per-element distance in units in the last place of the storage dtype.
fn max_ulps(a: &NamedTensor, b: &NamedTensor) -> Option<i64> {
    match (a.data(), b.data()) {
        (TensorData::F32(x), TensorData::F32(y)) => {
            Some(x.iter().zip(y).map(|(p, q)| (ordered_f32(*p) - ordered_f32(*q)).abs()).max().unwrap_or(0))
        }
        (TensorData::BF16(x), TensorData::BF16(y)) => {
            Some(x.iter().zip(y).map(|(p, q)| (ordered_bf16(*p) - ordered_bf16(*q)).abs()).max().unwrap_or(0))
        }
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Synthetic checkpoints: a base Φ and a fine-tuned Θ = Φ + small update.

fn random_pair(rng: &mut ChaCha8Rng, f32_only: bool) -> (Checkpoint, Checkpoint) {
    let count = rng.random_range(1..=6);
    let mut base = Vec::new();
    let mut tuned = Vec::new();
    for i in 0..count {
        let shape = if rng.random_bool(0.2) {
            vec![rng.random_range(1..=64)]
        } else {
            vec![rng.random_range(1..=64), rng.random_range(1..=64)]
        };
        let len: usize = shape.iter().product();
        let dtype = if f32_only || rng.random_bool(0.5) { DType::F32 } else { DType::BF16 };
        let scale = 10f64.powf(rng.random_range(-2.0..1.0));
        let phi: Vec<f32> = (0..len).map(|_| (gauss(rng) * scale) as f32).collect();
        let theta: Vec<f32> = phi.iter().map(|p| p + (gauss(rng) * scale * 0.02) as f32).collect();
        let name = format!("model.layers.{i}.weight");
        base.push(NamedTensor::new(&name, shape.clone(), TensorData::from_f32(phi, dtype)).unwrap());
        tuned.push(NamedTensor::new(&name, shape, TensorData::from_f32(theta, dtype)).unwrap());
    }
    (Checkpoint::from_tensors(base).unwrap(), Checkpoint::from_tensors(tuned).unwrap())
}

fn round_trip_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0;
    let mut elements = 0;
    for case in 0..50 {
        let (phi, theta) = random_pair(&mut rng, false);
        let delta = extract_delta(&phi, &theta, &ExtractOptions::default()).map_err(|e| e.to_string())?;
        let back = apply_delta(&phi, &delta, 1.0, true).map_err(|e| e.to_string())?;
        for t in theta.tensors() {
            let got = back.get(t.name()).ok_or("tensor lost")?;
            let u = max_ulps(got, t).ok_or_else(|| format!("case {case}: dtype changed for {}", t.name()))?;
            ensure(u <= 1, || format!("case {case}: {} off by {u} ulp", t.name()))?;
            worst = worst.max(u);
            elements += t.len();
        }
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!("50 checkpoints, {elements} elements, max {worst} ulp, {:.2} s", start.elapsed().as_secs_f64()))
}

fn partial_adaptation_endpoints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_rel = 0f64;
    let mut cancelling = 0;
    for case in 0..50 {
        let (phi, theta) = random_pair(&mut rng, case % 2 == 0);
        let delta = extract_delta(&phi, &theta, &ExtractOptions::default()).map_err(|e| e.to_string())?;
        let at = |beta: f64| compose_with(&phi, &[(&delta, beta)], None, true).map_err(|e| e.to_string());

        let zero = at(0.0)?;
        for t in phi.tensors() {
            ensure(zero.get(t.name()).unwrap().bitwise_eq(t), || format!("case {case}: beta=0 changed {}", t.name()))?;
        }
        let one = at(1.0)?;
        for t in theta.tensors() {
            let u = max_ulps(one.get(t.name()).unwrap(), t).ok_or("dtype changed")?;
            ensure(u <= 1, || format!("case {case}: beta=1 {} off by {u} ulp", t.name()))?;
        }
        let half = at(0.5)?;
        for (p, q) in phi.tensors().zip(theta.tensors()) {
            if p.dtype() != DType::F32 {
                continue;
            }
            let got = half.get(p.name()).unwrap().to_f32();
            for ((g, a), b) in got.iter().zip(p.to_f32().iter()).zip(q.to_f32().iter()) {
                let want = (f64::from(*a) + f64::from(*b)) / 2.0;
                // Relative to the operand scale: Θ−Φ is rounded once when the
                // delta is stored, so a midpoint that nearly cancels carries
                // an error proportional to |Θ−Φ|, not to the midpoint itself.
                let scale = f64::from(a.abs().max(b.abs())).max(f64::from(f32::MIN_POSITIVE));
                let rel = (f64::from(*g) - want).abs() / scale;
                ensure(rel <= 1e-6, || format!("case {case}: beta=0.5 gives {g}, want {want} (rel {rel:e})"))?;
                worst_rel = worst_rel.max(rel);
                if (f64::from(*g) - want).abs() > 1e-6 * want.abs() {
                    cancelling += 1;
                }
            }
        }
    }
    Ok(format!(
        "50 pairs; beta=0 bitwise, beta=1 within 1 ulp, beta=0.5 max rel {worst_rel:.2e} \
         ({cancelling} near-cancelling elements exceed 1e-6 of the midpoint itself)"
    ))
}

// ---------------------------------------------------------------------------
// Eckart–Young

fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| gauss(rng))
}

/// Random rank-`k` approximations of `a`: Gaussian factor pairs, projections
/// onto random subspaces, and perturbed truncated SVDs.
fn baseline_error(
    a: &DMatrix<f64>,
    k: usize,
    kind: usize,
    rng: &mut ChaCha8Rng,
    top: (&DMatrix<f64>, &[f64], &DMatrix<f64>),
) -> f64 {
    let (m, n) = a.shape();
    let approx = match kind % 3 {
        0 => {
            let b = random_matrix(rng, m, k);
            let c = random_matrix(rng, k, n);
            // Best scalar multiple of the random product.
            let p = &b * &c;
            let s = a.dot(&p) / p.norm_squared().max(f64::MIN_POSITIVE);
            p * s
        }
        1 => {
            let q = random_matrix(rng, m, k).qr().q();
            &q * (q.transpose() * a)
        }
        _ => {
            // Perturbed truncated SVD: jitter the leading factors, keep rank k.
            let (u, sv, vt) = top;
            let eps = 1e-3;
            let uk = u.columns(0, k) + random_matrix(rng, m, k) * eps;
            let vk = vt.rows(0, k) + random_matrix(rng, k, n) * eps;
            uk * DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&sv[..k])) * vk
        }
    };
    (a - approx).norm()
}

fn eckart_young() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_rel = 0f64;
    let mut comparisons = 0;
    for case in 0..100 {
        let (m, n) = (rng.random_range(4..=64), rng.random_range(4..=64));
        let values: Vec<f32> = (0..m * n).map(|_| gauss(&mut rng) as f32).collect();
        let t = NamedTensor::from_f32("d", vec![m, n], values).unwrap();
        let a = to_matrix(&t).unwrap();
        let dec = svd(&t).map_err(|e| e.to_string())?;
        let v = explained_variance(&dec.s).map_err(|e| e.to_string())?;
        let total = a.norm_squared();
        for k in [1, 2, 4] {
            let best = dec.reconstruct(k);
            let err = (&a - &best).norm();
            let predicted = (1.0 - v[k - 1]) * total;
            // At full rank both sides are zero up to rounding; compare against |Δ|² there.
            let denom = if k >= m.min(n) { total } else { predicted };
            let rel = (err * err - predicted).abs() / denom;
            ensure(rel <= 1e-6, || format!("case {case} k={k}: err^2 {} vs (1-v_k)|D|^2 {predicted} (rel {rel:e})", err * err))?;
            worst_rel = worst_rel.max(rel);
            // The slack covers rounding only; at full rank both errors are noise.
            for trial in 0..100 {
                let other = baseline_error(&a, k, trial, &mut rng, (&dec.u, &dec.s, &dec.vt));
                ensure(err <= other * (1.0 + 1e-12) + 1e-12 * total.sqrt(), || {
                    format!("case {case} k={k}: truncation error {err} exceeds baseline {other} (kind {})", trial % 3)
                })?;
                comparisons += 1;
            }
        }
    }
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "100 matrices, {comparisons} baselines beaten, max rel identity error {worst_rel:.2e}, {:.2} s",
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// Rank selection

fn brute_force_rank(sigma: &[f64], tau: f64) -> usize {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    for k in 1..=sigma.len() {
        let head: f64 = sigma[..k].iter().map(|s| s * s).sum();
        if k == sigma.len() || head / total >= tau {
            return k;
        }
    }
    unreachable!()
}

fn rank_selection() -> Outcome {
    let v = explained_variance(&[2.0, 1.0, 1.0]).map_err(|e| e.to_string())?;
    ensure(select_rank(&v, 0.5) == 1, || "sigma=[2,1,1], tau=0.5 should give k=1".into())?;
    ensure(select_rank(&v, 0.9) == 3, || "sigma=[2,1,1], tau=0.9 should give k=3".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let taus: Vec<f64> = (1..=40).map(|i| i as f64 / 40.0).collect();
    for case in 0..1000 {
        let len = rng.random_range(1..=40);
        let mut sigma: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..10.0f64).powi(rng.random_range(1..4))).collect();
        sigma.sort_by(|a, b| b.total_cmp(a));
        if sigma[0] == 0.0 {
            sigma[0] = 1.0;
        }
        let v = explained_variance(&sigma).map_err(|e| e.to_string())?;
        let mut prev = 0;
        for &tau in &taus {
            let k = select_rank(&v, tau);
            let oracle = brute_force_rank(&sigma, tau);
            // The oracle sums directly; allow it to differ only where v_k sits within rounding of tau.
            if k != oracle {
                let near = (v[k.min(oracle) - 1] - tau).abs() < 1e-12;
                ensure(near, || format!("case {case} tau {tau}: k={k}, oracle {oracle}"))?;
            }
            ensure(k == 1 || v[k - 2] < tau, || format!("case {case}: k={k} is not minimal at tau {tau}"))?;
            ensure(v[k - 1] >= tau || k == len, || format!("case {case}: v_k below tau"))?;
            ensure(k >= prev, || format!("case {case}: rank fell from {prev} to {k} as tau rose to {tau}"))?;
            prev = k;
        }
    }
    Ok("constructed cases and 1000 random spectra: minimal and monotone in tau".into())
}

// ---------------------------------------------------------------------------
// LoRE storage

/// `U diag(sigma) V^T` with Haar-like random orthogonal factors.
fn with_spectrum(rng: &mut ChaCha8Rng, name: &str, m: usize, n: usize, sigma: &[f64]) -> NamedTensor {
    let u = random_matrix(rng, m, m).qr().q();
    let v = random_matrix(rng, n, n).qr().q();
    let mut d = DMatrix::zeros(m, n);
    for (i, s) in sigma.iter().enumerate() {
        d[(i, i)] = *s;
    }
    let a = u * d * v.transpose();
    let values = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| a[(i, j)] as f32).collect();
    NamedTensor::from_f32(name, vec![m, n], values).unwrap()
}

fn lore_storage() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..20 {
        let mut tensors = Vec::new();
        let mut spectra = Vec::new();
        for i in 0..4 {
            let (m, n) = (rng.random_range(2..=40), rng.random_range(2..=40));
            let mut sigma: Vec<f64> = (0..m.min(n)).map(|_| rng.random_range(0.05..5.0)).collect();
            sigma.sort_by(|a, b| b.total_cmp(a));
            let name = format!("layers.{i}.weight");
            tensors.push(with_spectrum(&mut rng, &name, m, n, &sigma));
            spectra.push((m, n, sigma));
        }
        let bias_len = rng.random_range(1..=40);
        tensors.push(NamedTensor::from_f32("layers.bias", vec![bias_len], vec![0.1; bias_len]).unwrap());
        let delta = DeltaAdapter::new(tensors, "", "", BTreeMap::new()).unwrap();
        let reference = delta.total_elements() * 3;

        let tau = rng.random_range(0.1..0.95);
        let lore = compress(&delta, &CompressOptions::new(tau)).map_err(|e| e.to_string())?;
        let report = param_report_with_total(&lore, reference);
        // Hand count from the constructed spectra.
        let mut expected = bias_len;
        for (m, n, sigma) in &spectra {
            let total: f64 = sigma.iter().map(|s| s * s).sum();
            let mut acc = 0.0;
            let mut k = sigma.len();
            for (i, s) in sigma.iter().enumerate() {
                acc += s * s;
                if acc / total >= tau {
                    k = i + 1;
                    break;
                }
            }
            expected += if k * (m + n) >= m * n { m * n } else { k * (m + n) };
        }
        ensure(report.lore_params == expected, || {
            format!("case {case} tau {tau:.3}: report {} params, hand count {expected}", report.lore_params)
        })?;
        let percent = 100.0 * expected as f64 / reference as f64;
        ensure((report.percent - percent).abs() < 1e-12, || format!("case {case}: percent {}", report.percent))?;

        let taus: Vec<f64> = (1..=20).map(|i| i as f64 / 20.0).collect();
        let curve = param_sweep(&delta, &taus, &CompressOptions::default(), reference).map_err(|e| e.to_string())?;
        ensure(curve.windows(2).all(|w| w[0].percent <= w[1].percent), || {
            format!("case {case}: sweep not monotone: {:?}", curve.iter().map(|p| p.percent).collect::<Vec<_>>())
        })?;
    }
    Ok("20 synthetic deltas: counts exact, tau sweep non-decreasing".into())
}

// ---------------------------------------------------------------------------
// DoRA

fn tensor_from(name: &str, m: &DMatrix<f64>) -> NamedTensor {
    let (r, c) = m.shape();
    let values = (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| m[(i, j)] as f32).collect();
    NamedTensor::from_f32(name, vec![r, c], values).unwrap()
}

fn dora_densification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0f64;
    let mut worst_zero = 0f64;
    for case in 0..50 {
        let w = random_matrix(&mut rng, 16, 16);
        let a = random_matrix(&mut rng, 4, 16) * 0.1;
        let b = random_matrix(&mut rng, 16, 4) * 0.1;
        let magnitude: Vec<f32> = (0..16).map(|_| rng.random_range(0.5..2.0)).collect();
        let wt = tensor_from("w", &w);
        let lora = LoraModule::new("w", tensor_from("a", &a), tensor_from("b", &b), 8.0).unwrap();
        let delta = densify_dora(&DoraModule::new(lora, magnitude.clone()).unwrap(), &wt).map_err(|e| e.to_string())?;
        let merged: Vec<f64> =
            wt.to_f32().iter().zip(delta.to_f32().iter()).map(|(x, d)| f64::from(x + d)).collect();
        for (i, m) in magnitude.iter().enumerate() {
            let norm = merged[i * 16..(i + 1) * 16].iter().map(|x| x * x).sum::<f64>().sqrt();
            let rel = (norm - f64::from(*m)).abs() / f64::from(*m);
            ensure(rel <= 1e-6, || format!("case {case} row {i}: norm {norm} vs magnitude {m}"))?;
            worst = worst.max(rel);
        }

        let native: Vec<f32> = (0..16).map(|i| w.row(i).norm() as f32).collect();
        let zero = LoraModule::new(
            "w",
            NamedTensor::zeros("a", vec![4, 16], DType::F32).unwrap(),
            NamedTensor::zeros("b", vec![16, 4], DType::F32).unwrap(),
            8.0,
        )
        .unwrap();
        let d0 = densify_dora(&DoraModule::new(zero, native).unwrap(), &wt).map_err(|e| e.to_string())?;
        let ratio = readapt::frobenius_norm(&d0) / readapt::frobenius_norm(&wt);
        ensure(ratio < 1e-5, || format!("case {case}: zero update gives |delta|/|W| = {ratio:e}"))?;
        worst_zero = worst_zero.max(ratio);
    }
    Ok(format!("50 fixtures 16x16: max rel norm error {worst:.2e}, zero-update ratio {worst_zero:.2e}"))
}

// ---------------------------------------------------------------------------
// Metrics

fn dp_lcs(a: &[&str], b: &[&str]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
        }
    }
    t[a.len()][b.len()]
}

fn window_match(hay: &[&str], needle: &[&str]) -> bool {
    if needle.is_empty() {
        return false;
    }
    (0..hay.len()).any(|s| s + needle.len() <= hay.len() && (0..needle.len()).all(|i| hay[s + i] == needle[i]))
}

const EPISODES_RESPONSE: &str = "There are a total of 291 episodes in the original Japanese version of Dragon Ball Z. \
However, the episode count can vary depending on the version and the country.";

fn metric_oracles() -> Outcome {
    const VOCAB: [&str; 6] = ["a", "b", "c", "d", "e", "f"];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut em_hits = 0;
    for case in 0..1000 {
        let rlen = rng.random_range(0..=30);
        let reference: Vec<&str> = (0..rlen).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect();
        let mut response: Vec<&str> = (0..rng.random_range(0..=30)).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect();
        if case % 3 == 0 && rlen > 0 && rlen <= 30 {
            // Plant the reference so exact match fires on a third of the cases.
            let at = rng.random_range(0..=response.len());
            let mut planted = response[..at].to_vec();
            planted.extend(&reference);
            planted.extend(&response[at..]);
            planted.truncate(planted.len().max(rlen).min(60));
            response = planted;
        }
        let (rs, ps) = (reference.join(" "), response.join(" "));
        let want = if rlen == 0 { 0.0 } else { dp_lcs(&reference, &response) as f64 / rlen as f64 };
        let got = rouge_l_recall(&rs, &ps);
        ensure(got == want, || format!("case {case}: rouge {got} vs DP {want}"))?;
        let em = exact_match_anywhere(&rs, &ps);
        ensure(em == if window_match(&response, &reference) { 1.0 } else { 0.0 }, || format!("case {case}: EM {em}"))?;
        if em == 1.0 {
            em_hits += 1;
            ensure(got == 1.0, || format!("case {case}: EM=1 but rouge {got}"))?;
        }
    }
    let em = exact_match_anywhere("291", EPISODES_RESPONSE);
    let rl = rouge_l_recall("291", EPISODES_RESPONSE);
    ensure(em == 1.0 && rl == 1.0, || format!("episode-count fixture: EM {em}, R-L {rl}"))?;
    Ok(format!("1000 pairs match DP LCS exactly ({em_hits} with EM=1), episode-count fixture EM=1 R-L=1"))
}

// ---------------------------------------------------------------------------
// BM25

fn bm25_exactness() -> Outcome {
    let docs = [
        Passage::new("d1", "The cat sat on the mat."),
        Passage::new("d2", "The dog sat."),
        Passage::new("d3", "Cats and dogs!"),
    ];
    let index = Bm25Index::build(&docs, Bm25Params { k1: 1.5, b: 0.75 }).map_err(|e| e.to_string())?;
    ensure(index.avgdl() == 4.0, || format!("avgdl {}", index.avgdl()))?;
    ensure(index.df("the") == 2 && index.df("cat") == 1 && index.df("sat") == 2, || "df mismatch".into())?;

    // N = 3, lengths 6, 3, 3, avgdl 4. K(d) = 1.5 (0.25 + 0.75 len / 4).
    let idf_1 = (1.0f64 + 2.5 / 1.5).ln();
    let idf_2 = (1.0f64 + 1.5 / 2.5).ln();
    let (k_d1, k_d2) = (1.5 * 1.375, 1.5 * 0.8125);
    let sat = |k: f64| 2.5 / (1.0 + k);
    let cases: [(&str, Vec<(&str, f64)>); 3] = [
        ("cat sat", vec![("d1", idf_1 * sat(k_d1) + idf_2 * sat(k_d1)), ("d2", idf_2 * sat(k_d2))]),
        ("the", vec![("d1", idf_2 * 2.0 * 2.5 / (2.0 + k_d1)), ("d2", idf_2 * sat(k_d2))]),
        ("dogs", vec![("d3", idf_1 * sat(1.5 * 0.8125))]),
    ];
    for (q, want) in &cases {
        let got = index.query(q, 10);
        ensure(got.len() == want.len(), || format!("`{q}`: {} hits, want {}", got.len(), want.len()))?;
        let mut sorted = want.clone();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        for (h, (id, s)) in got.iter().zip(&sorted) {
            ensure(h.id == *id && (h.score - s).abs() <= 1e-9, || format!("`{q}`: got {} {}, want {id} {s}", h.id, h.score))?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut corpus: Vec<Passage> = (0..30)
        .map(|i| Passage::new(format!("p{i:02}"), ["cat sat", "dog sat", "the cat", "mat"][i % 4]))
        .collect();
    let reference: Vec<_> = Bm25Index::build(&corpus, Bm25Params::default()).unwrap().query("cat sat mat", 30);
    for _ in 0..20 {
        corpus.shuffle(&mut rng);
        let again = Bm25Index::build(&corpus, Bm25Params::default()).unwrap().query("cat sat mat", 30);
        ensure(again == reference, || "ranking changed under corpus permutation".into())?;
    }
    Ok("3-document fixture within 1e-9; 20 corpus permutations give identical rankings".into())
}

// ---------------------------------------------------------------------------
// Serialization

fn random_tensor(rng: &mut ChaCha8Rng, i: usize) -> NamedTensor {
    let ndim = rng.random_range(0..=3);
    let shape: Vec<usize> = (0..ndim).map(|_| rng.random_range(1..=12)).collect();
    let len: usize = shape.iter().product();
    let dtype = DType::ALL[i % 3];
    let bytes: Vec<u8> = (0..len * dtype.size()).map(|_| rng.random()).collect();
    let data = TensorData::from_le_bytes(dtype, &bytes).unwrap();
    NamedTensor::new(format!("t{i:04}.{}", dtype.as_str()), shape, data).unwrap()
}

fn serialization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tensors: Vec<NamedTensor> = (0..1000).map(|i| random_tensor(&mut rng, i)).collect();
    let ckpt = Checkpoint::from_tensors(tensors.clone()).unwrap();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let single = dir.path().join("all.safetensors");
    let sharded = dir.path().join("sharded/model.safetensors.index.json");
    save_checkpoint(&ckpt, &single, None).map_err(|e| e.to_string())?;
    save_checkpoint(&ckpt, &sharded, Some(16 * 1024)).map_err(|e| e.to_string())?;
    let shards = std::fs::read_dir(dir.path().join("sharded")).unwrap().count() - 1;
    for path in [single, sharded] {
        let back = load_checkpoint(&path).map_err(|e| e.to_string())?;
        ensure(back.len() == 1000, || format!("{}: {} tensors", path.display(), back.len()))?;
        for t in &tensors {
            let got = back.get(t.name()).ok_or_else(|| format!("{} missing", t.name()))?;
            ensure(got.bitwise_eq(t) && got.dtype() == t.dtype(), || format!("{} differs after reload", t.name()))?;
        }
        ensure(back.digest() == ckpt.digest(), || "digest changed".into())?;
    }
    Ok(format!("1000 tensors (F32/F16/BF16, raw bit patterns) bitwise, unsharded and {shards} shards"))
}

// ---------------------------------------------------------------------------
// Optional real-model check

fn real_model() -> Option<Outcome> {
    let base = std::env::var_os("READAPT_BASE_MODEL")?;
    let instruct = std::env::var_os("READAPT_INSTRUCT_MODEL")?;
    Some((|| {
        let start = Instant::now();
        let phi = load_checkpoint(&base).map_err(|e| e.to_string())?;
        let theta = load_checkpoint(&instruct).map_err(|e| e.to_string())?;
        let opts = ExtractOptions {
            skip_unmatched: true,
            ..ExtractOptions::default()
        };
        let delta = extract_delta(&phi, &theta, &opts).map_err(|e| e.to_string())?;
        let lore = compress(&delta, &CompressOptions::new(0.5)).map_err(|e| e.to_string())?;
        let report = param_report_with_total(&lore, phi.total_elements());
        // Expected range for 7-8B pairs, with 5 points of slack on each side.
        ensure((14.2..=35.2).contains(&report.percent), || format!("LoRE fraction {:.2}%", report.percent))?;
        Ok(format!("LoRE fraction {:.2}% in {:.0} s", report.percent, start.elapsed().as_secs_f64()))
    })())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("round_trip_identity", round_trip_identity),
        ("partial_adaptation_endpoints", partial_adaptation_endpoints),
        ("eckart_young", eckart_young),
        ("rank_selection", rank_selection),
        ("lore_storage", lore_storage),
        ("dora_densification", dora_densification),
        ("metric_oracles", metric_oracles),
        ("bm25_exactness", bm25_exactness),
        ("serialization", serialization),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    match real_model() {
        None => println!("SKIP real_model_lore_fraction: set READAPT_BASE_MODEL and READAPT_INSTRUCT_MODEL to run"),
        Some(Ok(detail)) => println!("PASS real_model_lore_fraction: {detail}"),
        Some(Err(why)) => {
            failed += 1;
            println!("FAIL real_model_lore_fraction: {why}");
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
