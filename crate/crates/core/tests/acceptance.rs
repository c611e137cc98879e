//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::Path;
use std::time::Instant;

use mgrbm::cli::run_with_io;
use mgrbm::features::pca_fit;
use mgrbm::io::{read_frames, write_features};
use mgrbm::math::symmetric_eigen;
use mgrbm::model::{mgrbm_from_grbm, GrbmParams, ModelKind, ModelParams, RbmParams};
use mgrbm::model_file::load_model;
use mgrbm::oracle::{enumerate_joint, exact_loglik, exact_model_stats, finite_diff_grad, random_model, sample_dataset};
use mgrbm::training::{gradient, init_params, max_trace_deviation, positive_stats, train, train_with_hook, TrainConfig};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn relative_error(a: &ndarray::ArrayD<f64>, b: &ndarray::ArrayD<f64>) -> f64 {
    let diff = (a - b).mapv(|x| x * x).sum().sqrt();
    let scale = a.mapv(|x| x * x).sum().sqrt().max(b.mapv(|x| x * x).sum().sqrt());
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}

fn gradient_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for seed in 1..=5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grbm = {
            let ModelParams::Grbm(mut g) = random_model(ModelKind::Grbm, 3, 1, 4, 1.0, &mut rng).unwrap() else {
                unreachable!()
            };
            g.sigma.mapv_inplace(|_| rng.random_range(0.5..2.0));
            ModelParams::from(g)
        };
        let models = [
            random_model(ModelKind::Rbm, 4, 1, 3, 1.0, &mut rng).unwrap(),
            grbm,
            random_model(ModelKind::Mgrbm, 2, 2, 3, 0.5, &mut rng).unwrap(),
        ];
        for model in models {
            let data = match model.kind() {
                ModelKind::Rbm => Array2::from_shape_simple_fn((64, 4), || rng.random_range(0..2) as f64),
                _ => gaussian_matrix(64, model.visible_dim(), &mut rng),
            };
            let pos = positive_stats(&model, data.view()).unwrap();
            let neg = exact_model_stats(&model).unwrap();
            let analytic = gradient(&pos, &neg).unwrap();
            let fd = finite_diff_grad(&model, data.view(), 1e-5).unwrap();
            for ((group, a), (_, f)) in analytic.0.groups.iter().zip(&fd.0.groups) {
                let rel = relative_error(a, f);
                if rel > worst {
                    worst = rel;
                    worst_at = format!("{} {} seed {seed}", model.kind(), group.name());
                }
            }
        }
    }
    Outcome { pass: worst <= 1e-6, detail: format!("worst group relative error {worst:.2e} ({worst_at}), limit 1e-6") }
}

fn gibbs_stationarity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = Array2::from_shape_simple_fn((2, 2), || rng.random_range(-1.0..1.0));
    let model = RbmParams::new(
        w,
        Array1::from_shape_simple_fn(2, || rng.random_range(-1.0..1.0)),
        Array1::from_shape_simple_fn(2, || rng.random_range(-1.0..1.0)),
    )
    .unwrap();
    let table = enumerate_joint(&model).unwrap();
    let model = ModelParams::from(model);
    let mut counts = vec![0u64; table.entries.len()];
    let mut v = Array1::from_shape_simple_fn(2, || rng.random_range(0..2) as f64);
    for _ in 0..1000 {
        v = model.gibbs_sweep(v.view(), &mut rng).unwrap().1;
    }
    let sweeps = 1_000_000u64;
    for _ in 0..sweeps {
        let (h, v_next) = model.gibbs_sweep(v.view(), &mut rng).unwrap();
        counts[table.index_of(v.as_slice().unwrap(), h.as_slice().unwrap())] += 1;
        v = v_next;
    }
    let tv = 0.5
        * table
            .entries
            .iter()
            .enumerate()
            .map(|(i, (_, _, p))| (counts[i] as f64 / sweeps as f64 - p).abs())
            .sum::<f64>();
    Outcome { pass: tv <= 0.01, detail: format!("total variation {tv:.5} over 10^6 sweeps, limit 0.01") }
}

fn reduction_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_energy = 0.0f64;
    let mut worst_post = 0.0f64;
    for _ in 0..100 {
        let nv = rng.random_range(1..=8);
        let nh = rng.random_range(1..=8);
        let g = GrbmParams::new(
            gaussian_matrix(nv, nh, &mut rng),
            Array1::from_shape_simple_fn(nv, || rng.random_range(-2.0..2.0)),
            Array1::from_shape_simple_fn(nh, || rng.random_range(-2.0..2.0)),
            Array1::from_shape_simple_fn(nv, || rng.random_range(0.3..3.0)),
        )
        .unwrap();
        let m = ModelParams::from(mgrbm_from_grbm(&g));
        let g = ModelParams::from(g);
        let vs = gaussian_matrix(1000, nv, &mut rng);
        let hs = Array2::from_shape_simple_fn((1000, nh), || rng.random_range(0..2) as f64);
        for (v, h) in vs.rows().into_iter().zip(hs.rows()) {
            let d = (g.energy(v, h).unwrap() - m.energy(v, h).unwrap()).abs();
            worst_energy = worst_energy.max(d);
        }
        let pg = g.hidden_posterior_batch(vs.view()).unwrap();
        let pm = m.hidden_posterior_batch(vs.view()).unwrap();
        worst_post = worst_post.max((&pg - &pm).iter().fold(0.0f64, |acc, x| acc.max(x.abs())));
    }
    Outcome {
        pass: worst_energy <= 1e-12 && worst_post <= 1e-12,
        detail: format!("max |dE| {worst_energy:.2e}, max |dP(h|v)| {worst_post:.2e}, limit 1e-12"),
    }
}

struct SeedResult {
    grbm_recovery: f64,
    mgrbm_recovery: f64,
    mgrbm_ll: f64,
    flat_ll: f64,
    trace_dev: f64,
    trace_checks: usize,
}

fn recovery_seed(seed: u64) -> SeedResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = TrainConfig { epochs: 200, seed, ..TrainConfig::default() };
    let recovery = |init: &ModelParams, trained: &ModelParams, generator: &ModelParams, test: &Array2<f64>| {
        let l0 = exact_loglik(init, test.view()).unwrap();
        let l1 = exact_loglik(trained, test.view()).unwrap();
        let lg = exact_loglik(generator, test.view()).unwrap();
        ((l1 - l0) / (lg - l0), l1)
    };

    let grbm_gen = random_model(ModelKind::Grbm, 6, 1, 5, 1.0, &mut rng).unwrap();
    let train_set = sample_dataset(&grbm_gen, 5000, 1000, 10, &mut rng).unwrap().data;
    let test = sample_dataset(&grbm_gen, 5000, 1000, 10, &mut rng).unwrap().data;
    let init = init_params(ModelKind::Grbm, 6, 1, 5, &mut rng).unwrap();
    let (trained, _) = train(&init, train_set.view(), &config).unwrap();
    let (grbm_recovery, _) = recovery(&init, &trained, &grbm_gen, &test);

    let mgrbm_gen = random_model(ModelKind::Mgrbm, 3, 3, 5, 0.5, &mut rng).unwrap();
    let train_set = sample_dataset(&mgrbm_gen, 5000, 1000, 10, &mut rng).unwrap().data;
    let test = sample_dataset(&mgrbm_gen, 5000, 1000, 10, &mut rng).unwrap().data;
    let init = init_params(ModelKind::Mgrbm, 3, 3, 5, &mut rng).unwrap();
    let mut trace_dev = 0.0f64;
    let mut trace_checks = 0;
    let (trained, _) = train_with_hook(&init, train_set.view(), &config, |_, m| {
        if let ModelParams::Mgrbm(p) = m {
            trace_dev = trace_dev.max(max_trace_deviation(p));
            trace_checks += 1;
        }
        None
    })
    .unwrap();
    let (mgrbm_recovery, mgrbm_ll) = recovery(&init, &trained, &mgrbm_gen, &test);

    let flat_init = init_params(ModelKind::Grbm, 9, 1, 5, &mut rng).unwrap();
    let (flat, _) = train(&flat_init, train_set.view(), &config).unwrap();
    let flat_ll = exact_loglik(&flat, test.view()).unwrap();

    SeedResult { grbm_recovery, mgrbm_recovery, mgrbm_ll, flat_ll, trace_dev, trace_checks }
}

fn recovery_and_trace() -> (Outcome, Outcome) {
    let results: Vec<SeedResult> = std::thread::scope(|s| {
        let handles: Vec<_> = (1..=5u64).map(|seed| s.spawn(move || recovery_seed(seed))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut lines = Vec::new();
    for (seed, r) in (1..).zip(&results) {
        lines.push(format!(
            "      seed {seed}: grbm {:.3}, mgrbm {:.3}, mgrbm ll {:.4} vs flat grbm {:.4}",
            r.grbm_recovery, r.mgrbm_recovery, r.mgrbm_ll, r.flat_ll
        ));
    }
    let grbm_ok = results.iter().filter(|r| r.grbm_recovery >= 0.9).count();
    let mgrbm_ok = results.iter().filter(|r| r.mgrbm_recovery >= 0.9).count();
    let wins = results.iter().filter(|r| r.mgrbm_ll > r.flat_ll).count();
    let recovery = Outcome {
        pass: grbm_ok >= 4 && mgrbm_ok >= 4 && wins >= 4,
        detail: format!(
            "recovery >= 90%: grbm {grbm_ok}/5, mgrbm {mgrbm_ok}/5; mgrbm beats flat grbm {wins}/5 (need 4/5 each)\n{}",
            lines.join("\n")
        ),
    };
    let dev = results.iter().fold(0.0f64, |acc, r| acc.max(r.trace_dev));
    let checks: usize = results.iter().map(|r| r.trace_checks).sum();
    let trace = Outcome {
        pass: dev <= 1e-10 && checks == 5 * 200,
        detail: format!("max |trace(B_i) - d| {dev:.2e} over {checks} epoch checks, limit 1e-10"),
    };
    (recovery, trace)
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let argv: Vec<String> = std::iter::once("mgrbm").chain(args.iter().copied()).map(String::from).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with_io(&argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Frames with smooth temporal structure: per-dimension AR(1) plus a
/// shared low-rank component.
fn synthetic_frames(frames: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = gaussian_matrix(3, dim, &mut rng);
    let mut out = Array2::zeros((frames, dim));
    let mut state = Array1::<f64>::zeros(dim);
    let mut latent = Array1::<f64>::zeros(3);
    for t in 0..frames {
        latent = latent.mapv(|x| 0.9 * x) + Array1::from_shape_simple_fn(3, || -> f64 { StandardNormal.sample(&mut rng) });
        state = state.mapv(|x| 0.7 * x) + Array1::from_shape_simple_fn(dim, || -> f64 { StandardNormal.sample(&mut rng) });
        out.row_mut(t).assign(&(&state + &latent.dot(&mix)));
    }
    out
}

fn paper_configuration() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames.fmat");
    write_features(&frames, synthetic_frames(200, 39, 5).view()).unwrap();
    let mut notes = Vec::new();
    let mut pass = true;
    for (kind, expect) in [("grbm", "351 visible"), ("mgrbm", "39 units × 9 dims")] {
        let model_path = dir.path().join(format!("{kind}.model"));
        let mut args = vec!["train", "--frames", s(&frames), "--out", s(&model_path)];
        if kind == "mgrbm" {
            args.extend(["--model", "mgrbm"]);
        }
        let (code, _, err) = cli(&args);
        if code != 0 {
            return Outcome { pass: false, detail: format!("{kind} train failed: {err}") };
        }
        let file = load_model(&model_path).unwrap();
        let shape = match &file.model {
            ModelParams::Mgrbm(p) => format!("{} units × {} dims", p.units(), p.dim()),
            m => format!("{} visible", m.visible_dim()),
        };
        let hidden = file.model.hidden_dim();
        pass &= shape == expect && hidden == 1024;
        notes.push(format!("{kind} {shape} / {hidden} hidden"));

        let feats = dir.path().join(format!("{kind}.feat"));
        let (code, _, err) = cli(&["extract", "--model", s(&model_path), "--frames", s(&frames), "--out", s(&feats)]);
        if code != 0 {
            return Outcome { pass: false, detail: format!("{kind} extract failed: {err}") };
        }
        let f = read_frames(&feats).unwrap();
        pass &= f.dim() == 1024 && f.frames() == 200;

        let pca = dir.path().join(format!("{kind}.pca"));
        let (code, report, err) = cli(&["pca-fit", "--features", s(&feats), "--dim", "39", "--out", s(&pca)]);
        if code != 0 {
            return Outcome { pass: false, detail: format!("{kind} pca-fit failed: {err}") };
        }
        let report = report.trim().to_string();
        pass &= report_has_coverage(&report);
        notes.push(format!("{}-dim features, \"{report}\"", f.dim()));
    }
    Outcome { pass, detail: notes.join("; ") }
}

/// True when the report carries a one-decimal percentage such as `91.8%`.
fn report_has_coverage(report: &str) -> bool {
    report.split_whitespace().any(|word| {
        word.strip_suffix('%').is_some_and(|num| {
            let parts: Vec<&str> = num.split('.').collect();
            parts.len() == 2 && parts[1].len() == 1 && num.parse::<f64>().is_ok_and(|x| (0.0..=100.0).contains(&x))
        })
    })
}

fn pca_planted_spectrum() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sym = {
        let a = gaussian_matrix(10, 10, &mut rng);
        &a + &a.t()
    };
    let (_, rotation) = symmetric_eigen(sym.view());
    let planted: Vec<f64> = (1..=10).rev().map(f64::from).collect();
    let scale = Array1::from_iter(planted.iter().map(|l| l.sqrt()));
    let z = gaussian_matrix(100_000, 10, &mut rng) * &scale.insert_axis(Axis(0));
    let data = z.dot(&rotation.t()) + 3.0;
    let pca = pca_fit(data.view(), 5).unwrap();
    let worst = pca
        .eigenvalues
        .iter()
        .zip(&planted)
        .map(|(got, want)| (got - want).abs() / want)
        .fold(0.0f64, f64::max);
    // top five of 10..1 sum to 40 of 55
    let want = planted[..5].iter().sum::<f64>() / planted.iter().sum::<f64>();
    let cov_err = (pca.coverage - want).abs() / want;
    Outcome {
        pass: worst <= 0.03 && cov_err <= 0.01,
        detail: format!(
            "worst eigenvalue error {:.2}% (limit 3%), top-5 coverage {:.4} vs analytic 40/55 = {want:.4} \
             ({:.2}%, limit 1%; 45/55 = {:.4} is the top-6 share)",
            worst * 100.0,
            pca.coverage,
            cov_err * 100.0,
            45.0 / 55.0
        ),
    }
}

fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let names = ["synth.fmat", "m.model", "feat.fmat", "p.pca", "red.fmat"];
    let paths: Vec<String> = names.iter().map(|n| s(&dir.join(n)).to_string()).collect();
    let [synth, model, feat, pca, red] = [&paths[0], &paths[1], &paths[2], &paths[3], &paths[4]].map(String::as_str);
    let steps: [&[&str]; 5] = [
        &["synth", "--kind", "grbm", "--units", "6", "--hidden", "4", "--n", "400", "--seed", "21", "--out", synth],
        &[
            "train", "--frames", synth, "--out", model, "--context", "3", "--hidden", "16", "--epochs", "15", "--batch",
            "32", "--seed", "21", "--workers", "2",
        ],
        &["extract", "--model", model, "--frames", synth, "--out", feat],
        &["pca-fit", "--features", feat, "--dim", "5", "--out", pca],
        &["pca-apply", "--pca", pca, "--features", feat, "--out", red],
    ];
    for args in steps {
        let (code, _, err) = cli(args);
        assert_eq!(code, 0, "{args:?}: {err}");
    }
    names.iter().zip(&paths).map(|(n, p)| (n.to_string(), std::fs::read(p).unwrap())).collect()
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let first = pipeline(dir.path());
    let second = pipeline(dir.path());
    let differing: Vec<&str> =
        first.iter().zip(&second).filter(|(a, b)| a.1 != b.1).map(|(a, _)| a.0.as_str()).collect();
    Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} artifacts byte-identical across two runs", first.len())
        } else {
            format!("differing artifacts: {}", differing.join(", "))
        },
    }
}

fn report(n: usize, name: &str, started: Instant, outcome: &Outcome) -> bool {
    println!(
        "[{n}] {name}: {} ({:.1}s) {}",
        if outcome.pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64(),
        outcome.detail
    );
    outcome.pass
}

fn main() {
    let mut all = true;
    let t = Instant::now();
    all &= report(1, "gradient oracle", t, &gradient_oracle());
    let t = Instant::now();
    all &= report(2, "gibbs stationarity", t, &gibbs_stationarity());
    let t = Instant::now();
    all &= report(3, "reduction equivalence", t, &reduction_equivalence());
    let t = Instant::now();
    let (recovery, trace) = recovery_and_trace();
    all &= report(4, "synthetic recovery", t, &recovery);
    all &= report(5, "trace constraint", t, &trace);
    let t = Instant::now();
    all &= report(6, "default configuration", t, &paper_configuration());
    let t = Instant::now();
    all &= report(7, "pca planted spectrum", t, &pca_planted_spectrum());
    let t = Instant::now();
    all &= report(8, "end-to-end determinism", t, &end_to_end_determinism());
    if !all {
        std::process::exit(1);
    }
}
