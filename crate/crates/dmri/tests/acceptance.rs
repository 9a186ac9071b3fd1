//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Every criterion is evaluated and printed even when an earlier one
//! fails. The process exits zero so the report is always produced; set
//! `ACCEPTANCE_STRICT=1` to turn any FAIL into a nonzero exit.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use dmri::core::design::{select_subset, Model, SelectOptions};
use dmri::core::dti::{fit_dti, tensor_scalars, FitMethod, Tensor};
use dmri::core::jsd::jsd;
use dmri::core::mppca::{denoise_mppca, mp_threshold, PatchConfig};
use dmri::core::phantom::{kspace_downsample, kspace_downsample_factor, make_phantom, PhantomSpec, Upsample};
use dmri::core::reliability::{
    aggregate_cov, cov_pair, cov_within_subject, scn_build, scn_mae, scn_repeatability, RegionStat, RegionStats, RegionalTable,
};
use dmri::core::sh::{sh_design_matrix, ShFitter};
use dmri::core::sphere::{fibonacci_hemisphere, icosphere};
use dmri::core::volume::identity_affine;
use dmri::core::{Mask, Volume4D};
use dmri::pipeline::{run_pipeline, PipelineConfig};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() {
    let criteria: Vec<(&str, Duration, fn() -> Outcome)> = vec![
        ("exact DTI recovery", Duration::from_secs(5), exact_recovery),
        ("design quality", Duration::from_secs(30), design_quality),
        ("SH counts and exactness", Duration::MAX, sh_counts),
        ("JSD properties", Duration::MAX, jsd_properties),
        ("MPPCA statistics", Duration::from_secs(120), mppca_statistics),
        ("denoised DTI error ordering", Duration::from_secs(120), dti_error_ordering),
        ("noise moments", Duration::MAX, noise_moments),
        ("CoV closed form", Duration::MAX, cov_closed_form),
        ("SCN suite", Duration::MAX, scn_suite),
        ("k-space augmentation", Duration::MAX, kspace),
        ("end-to-end determinism", Duration::MAX, determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let mut o = f();
        let took = start.elapsed();
        if took > budget {
            o.pass = false;
            o.detail += &format!("; over the {} s budget", budget.as_secs());
        }
        failed += usize::from(!o.pass);
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("{status} {:>2} {name}: {} [{:.2} s]", i + 1, o.detail, took.as_secs_f64());
    }
    println!("{failed} of 11 criteria failed");
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

/// FA from the eigenvalue definition.
fn fa_closed_form(l: [f64; 3]) -> f64 {
    let num = (l[0] - l[1]).powi(2) + (l[1] - l[2]).powi(2) + (l[2] - l[0]).powi(2);
    (0.5 * num / (l[0] * l[0] + l[1] * l[1] + l[2] * l[2])).sqrt()
}

fn single_tensor_spec() -> PhantomSpec {
    serde_json::from_value(json!({
        "dims": [8, 8, 8],
        "regions": [{"label": 1, "shape": {"box": {"min": [0, 0, 0], "max": [8, 8, 8]}},
            "tissue": {"tensor": {"eigen": {"eigenvalues": [1.7e-3, 0.3e-3, 0.3e-3], "v1": [0.48, 0.6, 0.64]}}, "s0": 1000.0}}],
        "scheme": {"shells": {"b0": 1, "shells": [{"bvalue": 1000, "directions": 60}]}}
    }))
    .unwrap()
}

fn exact_recovery() -> Outcome {
    let p = make_phantom(&single_tensor_spec(), 0).unwrap();
    let cands: Vec<[f64; 3]> = p.scheme.directed_indices().iter().map(|&i| p.scheme.bvecs()[i]).collect();
    let sel = select_subset(&cands, 6, Model::Dti, SelectOptions { seed: 1, ..Default::default() }).unwrap();
    let mut idx = vec![0];
    idx.extend(sel.indices.iter().map(|&i| p.scheme.directed_indices()[i]));
    let scheme = p.scheme.subset(&idx).unwrap();
    let vol = p.dwi.select_volumes(&idx).unwrap();
    let mask = Mask::full([8, 8, 8]);
    let map = fit_dti(&vol, &scheme, &mask, FitMethod::Wls).unwrap();
    let mut worst: f64 = 0.0;
    for v in 0..512 {
        let (a, b): (&Tensor, &Tensor) = (map.tensor(v).unwrap(), p.truth.tensor(v).unwrap());
        for c in 0..6 {
            worst = worst.max((a.0[c] - b.0[c]).abs());
        }
    }
    let fa = tensor_scalars(&map).fa;
    let expected = fa_closed_form([1.7e-3, 0.3e-3, 0.3e-3]);
    let fa_err = fa.data().iter().map(|f| (f - expected).abs()).fold(0.0, f64::max);
    outcome(
        worst < 1e-9 && fa_err < 1e-9,
        format!(
            "cond {:.4}; max |ΔD| {worst:.2e} (tol 1e-9); FA {:.7} vs closed form {expected:.7}, |Δ| {fa_err:.2e} (tol 1e-9)",
            sel.condition_number, fa.data()[0]
        ),
    )
}

fn design_quality() -> Outcome {
    let cands = icosphere(3);
    assert_eq!(cands.len(), 642);
    let opts = SelectOptions { seed: 5, ..Default::default() };
    let a = select_subset(&cands, 6, Model::Dti, opts).unwrap();
    let b = select_subset(&cands, 6, Model::Dti, opts).unwrap();
    let same = a == b;
    outcome(
        a.condition_number <= 1.40 && same,
        format!(
            "cond {:.4} (≤ 1.40; brute-force reference ≈ 1.323); repeat run identical: {same}",
            a.condition_number
        ),
    )
}

fn sh_counts() -> Outcome {
    let dirs = fibonacci_hemisphere(90);
    let c4 = sh_design_matrix(&dirs, 4).unwrap().cols();
    let c6 = sh_design_matrix(&dirs, 6).unwrap().cols();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for (order, k) in [(4, 15), (6, 28)] {
        let sel = select_subset(&dirs, k, Model::Sh(order), SelectOptions { seed: 2, restarts: 4, iterations: 500 }).unwrap();
        let sub: Vec<[f64; 3]> = sel.indices.iter().map(|&i| dirs[i]).collect();
        let design = sh_design_matrix(&sub, order).unwrap();
        let coeffs: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let signal: Vec<f64> = (0..k).map(|r| (0..k).map(|c| design.as_matrix()[(r, c)] * coeffs[c]).sum()).collect();
        let fit = ShFitter::new(&sub, order, 0.0).unwrap().fit(&signal);
        for r in 0..k {
            let pred: f64 = (0..k).map(|c| design.as_matrix()[(r, c)] * fit[c]).sum();
            worst = worst.max((pred - signal[r]).abs());
        }
    }
    outcome(
        c4 == 15 && c6 == 28 && worst < 1e-8,
        format!("columns order 4: {c4}, order 6: {c6}; interpolation residual {worst:.2e} (tol 1e-8)"),
    )
}

fn jsd_properties() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut draw = || -> Vec<f64> { (0..362).map(|_| rng.gen_range(0.0..1.0)).collect() };
    let p = draw();
    let identity = jsd(&p, &p).unwrap();
    let mut a = vec![0.0; 362];
    let mut b = vec![0.0; 362];
    a[..181].fill(1.0);
    b[181..].fill(1.0);
    let disjoint = jsd(&a, &b).unwrap();
    let mut violations = 0;
    for _ in 0..1000 {
        let (x, y, z) = (draw(), draw(), draw());
        let (xy, yz, xz) = (jsd(&x, &y).unwrap(), jsd(&y, &z).unwrap(), jsd(&x, &z).unwrap());
        if xz > xy + yz + 1e-12 {
            violations += 1;
        }
    }
    outcome(
        identity == 0.0 && (disjoint - 1.0).abs() < 1e-12 && violations == 0,
        format!("identity {identity:.1e}; disjoint {disjoint:.12}; triangle violations {violations}/1000"),
    )
}

/// Descending eigenvalues of `XᵀX / N`.
fn spectrum(x: &DMatrix<f64>) -> Vec<f64> {
    let s = x.transpose() * x / x.nrows() as f64;
    let mut e: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| b.total_cmp(a));
    e
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn mppca_statistics() -> Outcome {
    // unit noise, 125 patch voxels x 90 volumes
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let mut sigma_ok = 0;
    for _ in 0..100 {
        let (_, s2) = mp_threshold(&spectrum(&gaussian(125, 90, &mut rng)), 125).unwrap();
        if (0.9..=1.1).contains(&s2.sqrt()) {
            sigma_ok += 1;
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let mut rank_ok = 0;
    for _ in 0..100 {
        let scores = gaussian(125, 3, &mut rng) * 10.0;
        let q = gaussian(90, 3, &mut rng).qr().q();
        let x = scores * q.transpose() + gaussian(125, 90, &mut rng);
        if mp_threshold(&spectrum(&x), 125).unwrap().0 == 3 {
            rank_ok += 1;
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let dims = [10, 10, 10, 30];
    let n: usize = dims.iter().product();
    let data: Vec<f64> = (0..n).map(|_| 5.0 + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
    let vol = Volume4D::new(dims, [1.0; 3], identity_affine([1.0; 3]), data).unwrap();
    let (out, _) = denoise_mppca(&vol, &PatchConfig::default()).unwrap();
    let var = |d: &[f64]| {
        let m = d.iter().sum::<f64>() / d.len() as f64;
        d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d.len() as f64
    };
    let reduction = 1.0 - var(out.data()) / var(vol.data());
    outcome(
        sigma_ok >= 95 && rank_ok >= 95 && reduction >= 0.75,
        format!(
            "σ within ±10%: {sigma_ok}/100 (≥ 95); rank 3 exact: {rank_ok}/100 (≥ 95); constant+noise variance reduction {:.1}% (≥ 75%)",
            100.0 * reduction
        ),
    )
}

fn value(rows: &[dmri::tables::ReportRow], method: &str, metric: &str, region: &str) -> f64 {
    rows.iter().find(|r| r.method == method && r.metric == metric && r.region == region).map(|r| r.value).unwrap_or(f64::NAN)
}

fn dti_error_ordering() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    // two anisotropic compartments; σ = S0 / 20
    let cfg: PipelineConfig = serde_json::from_value(json!({
        "seed": 11,
        "output_dir": dir.path().join("t1"),
        "input": {"phantom": {"dims": [16, 16, 16], "spacing": [2.0, 2.0, 2.0],
            "regions": [
                {"label": 1, "shape": {"box": {"min": [0, 0, 0], "max": [8, 16, 16]}},
                 "tissue": {"tensor": {"eigen": {"eigenvalues": [1.7e-3, 0.3e-3, 0.3e-3], "v1": [0.6, 0.8, 0.0]}}, "s0": 100.0}},
                {"label": 2, "shape": {"box": {"min": [8, 0, 0], "max": [16, 16, 16]}},
                 "tissue": {"tensor": {"eigen": {"eigenvalues": [1.1e-3, 0.7e-3, 0.6e-3], "v1": [0.0, 0.6, 0.8], "v2": [1.0, 0.0, 0.0]}}, "s0": 100.0}}],
            "scheme": {"shells": {"b0": 1, "shells": [{"bvalue": 1000, "directions": 90}]}},
            "noise": {"model": "rician", "sigma": 5.0}}},
        "denoisers": [{"kind": "mppca"}],
        "subsets": [{"model": "dti", "k": 6}],
        "metrics": ["fa_mae", "md_mae", "ad_mae", "rd_mae", "v1_angle"]
    }))
    .unwrap();
    let rows = match run_pipeline(&cfg) {
        Ok(s) => s.rows,
        Err(e) => return outcome(false, format!("pipeline error: {e}")),
    };
    let get = |m: &str, metric: &str| value(&rows, m, metric, "all");
    let (fa_raw, fa_mp) = (get("raw", "dti6_FA_mae"), get("mppca", "dti6_FA_mae"));
    let (v1_raw, v1_mp) = (get("raw", "dti6_v1_angle"), get("mppca", "dti6_v1_angle"));
    let wm_raw = value(&rows, "raw", "dti6_FA_mae", "1");
    let others: Vec<String> = ["MD", "AD", "RD"]
        .iter()
        .map(|s| {
            let m = format!("dti6_{s}_mae");
            format!("{s} {:.4}→{:.4}", get("raw", &m), get("mppca", &m))
        })
        .collect();
    outcome(
        fa_mp < fa_raw && v1_mp < v1_raw,
        format!(
            "FA MAE raw {fa_raw:.4} vs MPPCA {fa_mp:.4}; V1 raw {v1_raw:.2}° vs MPPCA {v1_mp:.2}°; anisotropic-compartment raw FA MAE {wm_raw:.4}; µm²/ms {}",
            others.join(", ")
        ),
    )
}

fn noise_moments() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    // label 3 is pure free water: at b = 2000 its signal is ~0.25 against σ = 8
    let cfg: PipelineConfig = serde_json::from_value(json!({
        "seed": 5,
        "output_dir": dir.path().join("m"),
        "input": {"phantom": {"dims": [16, 16, 16], "spacing": [2.0, 2.0, 2.0],
            "regions": [
                {"label": 1, "shape": {"box": {"min": [0, 0, 0], "max": [10, 16, 16]}},
                 "tissue": {"tensor": {"eigen": {"eigenvalues": [1.7e-3, 0.3e-3, 0.3e-3], "v1": [1.0, 0.0, 0.0]}}, "s0": 100.0}},
                {"label": 3, "shape": {"box": {"min": [10, 0, 0], "max": [16, 16, 16]}},
                 "tissue": {"tensor": {"components": [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]}, "s0": 100.0, "f_iso": 1.0}}],
            "scheme": {"shells": {"b0": 2, "shells": [{"bvalue": 1000, "directions": 30}, {"bvalue": 2000, "directions": 30}]}},
            "noise": {"model": "rician", "sigma": 8.0}}},
        "denoisers": [{"kind": "mppca"}],
        "moments": {"region": 3, "bvalue": 2000}
    }))
    .unwrap();
    let rows = match run_pipeline(&cfg) {
        Ok(s) => s.rows,
        Err(e) => return outcome(false, format!("pipeline error: {e}")),
    };
    let get = |m: &str, stat: &str| value(&rows, m, &format!("moments_b2000_{stat}"), "3");
    let (rv, rs) = (get("raw", "variance"), get("raw", "skewness"));
    let (dv, ds) = (get("mppca", "variance"), get("mppca", "skewness"));
    outcome(
        rs >= 0.3 && dv < rv && ds < rs,
        format!("raw variance {rv:.3}, skew {rs:.3} (≥ 0.3); MPPCA variance {dv:.3}, skew {ds:.3}"),
    )
}

fn stats(pairs: &[(u32, f64)]) -> RegionStats {
    pairs.iter().map(|&(l, m)| (l, RegionStat { mean: m, count: 1 })).collect()
}

fn cov_closed_form() -> Outcome {
    let c = cov_pair(1.0, 1.2).unwrap();
    let closed = 100.0 / 11.0;

    let (s1, s2) = (stats(&[(1, 0.41), (2, 0.77), (3, 1.3)]), stats(&[(1, 0.44), (2, 0.70), (3, 1.1)]));
    let base = cov_within_subject(&s1, &s2).unwrap();
    let scale_exact = [0.25, 2.0, 1024.0].iter().all(|&k| {
        let scale = |s: &RegionStats| -> RegionStats { s.iter().map(|(&l, r)| (l, RegionStat { mean: r.mean * k, count: r.count })).collect() };
        cov_within_subject(&scale(&s1), &scale(&s2)).unwrap() == base
    });

    // 3 subjects; classes WM = {1, 2}, GM = {10, 11, 12}
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let ids = [1u32, 2, 10, 11, 12];
    let sessions: Vec<[Vec<f64>; 2]> =
        (0..3).map(|_| [0, 1].map(|_| ids.iter().map(|_| rng.gen_range(0.3..0.9)).collect())).collect();
    let per_subject: Vec<BTreeMap<u32, f64>> = sessions
        .iter()
        .map(|[a, b]| {
            let sa = ids.iter().zip(a).map(|(&l, &m)| (l, RegionStat { mean: m, count: 1 })).collect();
            let sb = ids.iter().zip(b).map(|(&l, &m)| (l, RegionStat { mean: m, count: 1 })).collect();
            cov_within_subject(&sa, &sb).unwrap()
        })
        .collect();
    let mut agg_err: f64 = 0.0;
    for class in [&[1u32, 2][..], &[10, 11, 12]] {
        let mut total = 0.0;
        for [a, b] in &sessions {
            let mut sum = 0.0;
            for r in class {
                let j = ids.iter().position(|x| x == r).unwrap();
                let mean = (a[j] + b[j]) / 2.0;
                let sd = (((a[j] - mean).powi(2) + (b[j] - mean).powi(2)) / 2.0).sqrt();
                sum += 100.0 * sd / mean;
            }
            total += sum / class.len() as f64;
        }
        agg_err = agg_err.max((aggregate_cov(&per_subject, class).unwrap() - total / 3.0).abs());
    }
    outcome(
        (c - closed).abs() < 1e-10 && scale_exact && agg_err < 1e-10,
        format!("CoV(1.0, 1.2) = {c:.10}% (9.0909…, tol 1e-10); dyadic scale invariance exact: {scale_exact}; aggregate vs enumeration {agg_err:.1e}"),
    )
}

fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn scn_suite() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let table = RegionalTable { regions: (1..=6).collect(), rows: (0..5).map(|_| (0..6).map(|_| rng.gen_range(0.2..1.0)).collect()).collect() };
    let scn = scn_build(&table).unwrap();
    let col = |j: usize| table.rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
    let mut pearson_err: f64 = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            let want = if i == j { 1.0 } else { brute_pearson(&col(i), &col(j)) };
            pearson_err = pearson_err.max((scn.get(i, j) - want).abs());
        }
    }

    let other = scn_build(&RegionalTable {
        regions: (1..=6).collect(),
        rows: (0..5).map(|_| (0..6).map(|_| rng.gen_range(0.2..1.0)).collect()).collect(),
    })
    .unwrap();
    let mut sum = 0.0;
    for i in 0..6 {
        for j in i + 1..6 {
            sum += (scn.get(i, j) - other.get(i, j)).abs();
        }
    }
    let hand = sum / 15.0;
    let mae_err = (scn_mae(&scn, &other).unwrap() - hand).abs();
    let rep_err = (scn_repeatability(&scn, &other).unwrap() - hand).abs();

    let mut dup = table.clone();
    dup.regions.push(7);
    for r in &mut dup.rows {
        r.push(r[2]);
    }
    let d = scn_build(&dup).unwrap().get(2, 6);
    outcome(
        pearson_err < 1e-12 && mae_err < 1e-15 && rep_err < 1e-15 && d == 1.0,
        format!("Pearson vs brute force {pearson_err:.1e} (tol 1e-12); scn_mae {mae_err:.1e}, repeatability {rep_err:.1e} vs enumeration; duplicated region r = {d}"),
    )
}

fn kspace() -> Outcome {
    let vol = |n: [usize; 3], data: Vec<f64>| Volume4D::new([n[0], n[1], n[2], 1], [1.25; 3], identity_affine([1.25; 3]), data).unwrap();
    let white = |n: [usize; 3], seed: u64| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        vol(n, (0..n.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    let max_diff = |a: &Volume4D, b: &Volume4D| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

    let v = white([9, 8, 7], 3);
    let id = max_diff(&kspace_downsample(&v, [1.25; 3], Upsample::ZeroFill).unwrap(), &v);

    let n = 32;
    let cosine = vol(
        [n; 3],
        (0..n * n * n)
            .map(|i| {
                let (x, y, z) = (i % n, (i / n) % n, i / (n * n));
                let t = |k: usize, c: usize| (2.0 * std::f64::consts::PI * (k * c) as f64 / n as f64).cos();
                1.0 + t(3, x) * t(2, y) + 0.5 * t(5, z)
            })
            .collect(),
    );
    let band = max_diff(&kspace_downsample_factor(&cosine, 2.0, Upsample::ZeroFill).unwrap(), &cosine);

    let w = white([48; 3], 4);
    let var = |d: &[f64]| {
        let m = d.iter().sum::<f64>() / d.len() as f64;
        d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / d.len() as f64
    };
    let ratio = var(kspace_downsample_factor(&w, 2.0, Upsample::ZeroFill).unwrap().data()) / var(w.data());
    outcome(
        id < 1e-9 && band < 1e-6 && (ratio - 0.125).abs() <= 0.2 * 0.125,
        format!("identity {id:.1e} (tol 1e-9); band-limited {band:.1e} (tol 1e-6); white-noise variance ratio {ratio:.4} (1/8 ± 20%)"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "seed": 42,
        "output_dir": "out",
        "input": {"phantom": {"dims": [12, 12, 8], "spacing": [2.0, 2.0, 2.0],
            "regions": [
                {"label": 1, "shape": {"box": {"min": [0, 0, 0], "max": [6, 12, 8]}},
                 "tissue": {"tensor": {"eigen": {"eigenvalues": [1.7e-3, 0.3e-3, 0.3e-3], "v1": [0.0, 0.6, 0.8]}}, "s0": 100.0}},
                {"label": 2, "shape": {"box": {"min": [6, 0, 0], "max": [12, 12, 8]}},
                 "tissue": {"tensor": {"components": [8e-4, 8e-4, 8e-4, 0.0, 0.0, 0.0]}, "s0": 100.0, "f_iso": 0.1}}],
            "scheme": {"shells": {"b0": 2, "shells": [{"bvalue": 1000, "directions": 32}, {"bvalue": 2000, "directions": 32}]}},
            "noise": {"model": "rician", "sigma": 6.0}}},
        "augment": {"factor": 1.5},
        "denoisers": [{"kind": "mppca", "radius": 1}],
        "subsets": [{"model": "dti", "k": 6}, {"model": "sh", "order": 4, "shell": 2000}],
        "moments": {"region": 2, "bvalue": 2000}
    });
    std::fs::write(dir.path().join("run.json"), cfg.to_string()).unwrap();
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let status = Command::new(env!("CARGO_BIN_EXE_dmri"))
            .current_dir(dir.path())
            .args(["run", "--config", "run.json"])
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(false, format!("run failed: {}", String::from_utf8_lossy(&status.stderr).trim()));
        }
        let report = std::fs::read(dir.path().join("out/report.csv")).unwrap();
        let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/manifest.json")).unwrap()).unwrap();
        outputs.push((report, manifest));
    }
    let same_report = outputs[0].0 == outputs[1].0;
    let same_hashes = outputs[0].1["outputs"] == outputs[1].1["outputs"] && outputs[0].1["config_sha256"] == outputs[1].1["config_sha256"];
    let rows = outputs[0].0.iter().filter(|&&b| b == b'\n').count() - 1;
    outcome(
        same_report && same_hashes,
        format!("{rows} report rows; report.csv byte-identical: {same_report}; manifest hashes identical: {same_hashes}"),
    )
}

