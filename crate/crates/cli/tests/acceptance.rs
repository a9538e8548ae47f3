//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line straight to
//! stdout (bypassing the harness capture, so the lines show up in plain
//! `cargo test` output) and then asserts the criterion.
//!
//! The trained-model criteria share one 300-epoch run on the default
//! synthetic benchmark. Realized values are frozen below as regression
//! fixtures; they depend on the floating-point path of the build, so a
//! different CPU or compiler can move them slightly.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use featgen::dataset::{
    make_synthetic, ClassVectors, FeatureTable, InputMode, SyntheticData, SyntheticSpec,
};
use featgen::episodic::{evaluate, run_episode, EvalConfig, EvalResult};
use featgen::losses::{
    bce, bce_const, cce, cce_sigmoid, cdl, cosine_similarity, discriminator_loss, generator_loss, one_hot, LossWeights,
    CDL_EPS,
};
use featgen::models::{decode_checkpoint, encode_checkpoint, Activation, LayerSpec, Mlp, MlpSpec, ModelBundle};
use featgen::numerics::{
    grad_check, leaky_relu, leaky_relu_backward, matmul, matmul_backward, sigmoid, sigmoid_backward, softmax,
    softmax_backward, BatchNorm, GradCheck, Matrix, Mode, Rng,
};
use featgen::training::{train, TrainConfig, TrainMetrics, Trainer};

const GRAD_STEP: f64 = 1e-3;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 5;
const GRAD_BUDGET: Duration = Duration::from_secs(120);

const IDENTITY_TOL: f64 = 1e-6;
const SUM_ULPS: u32 = 4;

const EPOCHS: usize = 300;
const MAX_EPOCHS: usize = 1000;
const LR: f32 = 1e-4;
const MIN_CDL_DROP: f64 = 0.5;
const TRAIN_BUDGET: Duration = Duration::from_secs(15 * 60);
const EPISODES: usize = 600;
const LAMBDA: f32 = 0.5;
const GEOMETRY_MIN_FRACTION: f64 = 0.8;
const ABLATION_SEEDS: u64 = 3;
const RESUME_STEPS: usize = 50;

// Regression fixtures from the first oracle run (seed 0).
const FIXTURE_FINAL_CDL: f64 = 0.379_762_709_140_777_6;
const FIXTURE_CDL_TOL: f64 = 1e-4;
const FIXTURE_ACC: [(usize, f64, f64); 2] = [(1, 46.3689, 48.4844), (5, 71.9844, 72.4622)];
const FIXTURE_ACC_TOL: f64 = 1e-2;

fn report(pass: bool, criterion: &str, detail: &str) {
    let line = format!("{} {criterion}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

struct Trained {
    data: SyntheticData,
    bundle: ModelBundle,
    metrics: TrainMetrics,
    elapsed: Duration,
}

fn train_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: EPOCHS,
        lr: LR,
        seed,
        ..TrainConfig::default()
    }
}

fn benchmark() -> &'static SyntheticData {
    static DATA: OnceLock<SyntheticData> = OnceLock::new();
    DATA.get_or_init(|| make_synthetic(&SyntheticSpec::default(), 0).unwrap())
}

fn trained() -> &'static Trained {
    static MODEL: OnceLock<Trained> = OnceLock::new();
    MODEL.get_or_init(|| {
        let data = benchmark().clone();
        let start = Instant::now();
        let (bundle, metrics) = train(&data.train, &data.semantics, &train_cfg(0)).unwrap();
        Trained {
            data,
            bundle,
            metrics,
            elapsed: start.elapsed(),
        }
    })
}

fn eval_cfg(shot: usize, seed: u64) -> EvalConfig {
    EvalConfig {
        shot,
        episodes: EPISODES,
        lambda: LAMBDA,
        seed,
        ..EvalConfig::default()
    }
}

fn arms(t: &Trained, cfg: &EvalConfig) -> (EvalResult, EvalResult) {
    let base = evaluate(&t.data.test, None, None, &cfg.baseline()).unwrap();
    let aug = evaluate(&t.data.test, Some(&t.data.semantics), Some(&t.bundle), cfg).unwrap();
    (base, aug)
}

/// `a` above `b` with disjoint 95% intervals.
fn clearly_above(a: &EvalResult, b: &EvalResult) -> bool {
    a.accuracy - a.ci95 > b.accuracy + b.ci95
}

// ---------------------------------------------------------------- gradients

fn gauss(rng: &mut Rng, r: usize, c: usize) -> Matrix<f64> {
    rng.gaussian(0.0, 1.0, r, c).unwrap().cast::<f64>()
}

fn weighted(m: &Matrix<f64>, w: &Matrix<f64>) -> f64 {
    m.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
}

fn mat(r: usize, c: usize, v: &[f64]) -> Matrix<f64> {
    Matrix::from_vec(r, c, v.to_vec()).unwrap()
}

fn check(f: impl FnMut(&[f64]) -> f64, point: &[f64], analytic: &[f64]) -> GradCheck {
    grad_check(f, point, analytic, GRAD_STEP, None)
}

fn layer_checks(seed: u64) -> Vec<(&'static str, GradCheck)> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();

    // linear layer: weight, bias, and input through a one-layer network
    let spec = MlpSpec {
        layers: vec![LayerSpec {
            in_dim: 6,
            out_dim: 3,
            batchnorm: false,
            activation: Activation::None,
        }],
    };
    let mut net = Mlp::<f64>::init(&spec, &mut rng).unwrap();
    let x = gauss(&mut rng, 5, 6);
    let w = gauss(&mut rng, 5, 3);
    let fwd = net.forward_eval(&x).unwrap();
    let (dx, grads) = net.backward(&fwd, &w, true).unwrap();
    let flat_grad: Vec<f64> = grads.unwrap().blocks.concat();
    let params = net.flat_params();
    let mut probe = net.clone();
    out.push((
        "linear params",
        check(
            |v| {
                probe.set_flat_params(v).unwrap();
                weighted(&probe.forward_eval(&x).unwrap().logits, &w)
            },
            &params,
            &flat_grad,
        ),
    ));
    out.push((
        "linear input",
        check(|v| weighted(&net.forward_eval(&mat(5, 6, v)).unwrap().logits, &w), x.as_slice(), dx.as_slice()),
    ));
    net.set_flat_params(&params).unwrap();

    let (a, b, w) = (gauss(&mut rng, 4, 6), gauss(&mut rng, 6, 3), gauss(&mut rng, 4, 3));
    let (da, db) = matmul_backward(&a, &b, &w).unwrap();
    out.push(("matmul lhs", check(|v| weighted(&matmul(&mat(4, 6, v), &b).unwrap(), &w), a.as_slice(), da.as_slice())));
    out.push(("matmul rhs", check(|v| weighted(&matmul(&a, &mat(6, 3, v)).unwrap(), &w), b.as_slice(), db.as_slice())));

    // stay 0.1 away from the kink so every stencil point is on one piece
    let z = gauss(&mut rng, 5, 4).map(|v| if v.abs() < 0.1 { v + v.signum() * 0.1 } else { v });
    let w = gauss(&mut rng, 5, 4);
    let dz = leaky_relu_backward(&z, &w, 0.2).unwrap();
    out.push(("leaky relu", check(|v| weighted(&leaky_relu(&mat(5, 4, v), 0.2), &w), z.as_slice(), dz.as_slice())));
    let ds = sigmoid_backward(&sigmoid(&z), &w).unwrap();
    out.push(("sigmoid", check(|v| weighted(&sigmoid(&mat(5, 4, v)), &w), z.as_slice(), ds.as_slice())));
    let dp = softmax_backward(&softmax(&z), &w).unwrap();
    out.push(("softmax", check(|v| weighted(&softmax(&mat(5, 4, v)), &w), z.as_slice(), dp.as_slice())));

    for mode in [Mode::Train, Mode::Eval] {
        let (n, d) = (16, 4);
        let x = gauss(&mut rng, n, d).map(|v| 2.0 * v + 0.5);
        let w = gauss(&mut rng, n, d);
        let mut bn = BatchNorm::<f64>::new(d);
        for j in 0..d {
            bn.gamma[j] = 0.7 + 0.2 * j as f64;
            bn.beta[j] = -0.3 + 0.1 * j as f64;
            bn.running_mean[j] = 0.2 * j as f64;
            bn.running_var[j] = 0.5 + 0.3 * j as f64;
        }
        let (_, cache, _) = bn.normalize(&x, mode).unwrap();
        let g = bn.backward(&cache, &w).unwrap();
        let name_x = if mode == Mode::Train { "batchnorm train input" } else { "batchnorm eval input" };
        out.push((name_x, check(|v| weighted(&bn.normalize(&mat(n, d, v), mode).unwrap().0, &w), x.as_slice(), g.d_input.as_slice())));
        let mut probe = bn.clone();
        let gb: Vec<f64> = g.d_gamma.iter().chain(&g.d_beta).copied().collect();
        let point: Vec<f64> = bn.gamma.iter().chain(&bn.beta).copied().collect();
        let name_p = if mode == Mode::Train { "batchnorm train gamma/beta" } else { "batchnorm eval gamma/beta" };
        out.push((
            name_p,
            check(
                |v| {
                    probe.gamma.copy_from_slice(&v[..d]);
                    probe.beta.copy_from_slice(&v[d..]);
                    weighted(&probe.normalize(&x, mode).unwrap().0, &w)
                },
                &point,
                &gb,
            ),
        ));
    }
    out
}

fn loss_checks(seed: u64) -> Vec<(&'static str, GradCheck)> {
    let mut rng = Rng::new(1000 + seed);
    let mut out = Vec::new();
    let (n, c) = (5, 4);
    let z = gauss(&mut rng, n, c).map(|v| 1.5 * v);
    let labels: Vec<usize> = (0..n).map(|i| (i * 3 + seed as usize) % c).collect();
    let t = one_hot::<f64>(&labels, c).unwrap();

    let g = cce(&softmax(&z), &t).unwrap().grad;
    out.push(("cce (softmax logits)", check(|v| cce(&softmax(&mat(n, c, v)), &t).unwrap().value, z.as_slice(), g.as_slice())));
    let g = cce_sigmoid(&sigmoid(&z), &t).unwrap().grad;
    out.push(("cce (sigmoid logits)", check(|v| cce_sigmoid(&sigmoid(&mat(n, c, v)), &t).unwrap().value, z.as_slice(), g.as_slice())));

    let targets: Vec<f64> = (0..n * c).map(|i| ((i + seed as usize) % 2) as f64).collect();
    let g = bce(sigmoid(&z).as_slice(), &targets).unwrap().grad;
    out.push(("bce", check(|v| bce(sigmoid(&mat(n, c, v)).as_slice(), &targets).unwrap().value, z.as_slice(), g.as_slice())));

    let (a, b) = (gauss(&mut rng, 4, 6), gauss(&mut rng, 4, 6));
    let g = cdl(&a, &b, CDL_EPS).unwrap().grad;
    out.push(("cosine distance", check(|v| cdl(&mat(4, 6, v), &b, CDL_EPS).unwrap().value, a.as_slice(), g.as_slice())));

    let (zr, zf) = (gauss(&mut rng, 1, 6), gauss(&mut rng, 1, 6));
    let dl = discriminator_loss(sigmoid(&zr).as_slice(), sigmoid(&zf).as_slice()).unwrap();
    let g: Vec<f64> = dl.real.grad.as_slice().iter().chain(dl.fake.grad.as_slice()).copied().collect();
    let point: Vec<f64> = zr.as_slice().iter().chain(zf.as_slice()).copied().collect();
    out.push((
        "discriminator loss",
        check(
            |v| discriminator_loss(sigmoid(&mat(1, 6, &v[..6])).as_slice(), sigmoid(&mat(1, 6, &v[6..])).as_slice()).unwrap().value,
            &point,
            &g,
        ),
    ));

    // generator loss as a function of the generated features, the
    // discriminator logits, and the classifier logits together
    let (m, d, k) = (4, 6, 3);
    let x = gauss(&mut rng, m, d);
    let te = gauss(&mut rng, m, d);
    let zd = gauss(&mut rng, m, 1);
    let zc = gauss(&mut rng, m, k);
    let ys: Vec<usize> = (0..m).map(|i| (i + seed as usize) % k).collect();
    let w = LossWeights::default();
    let gl = generator_loss(&x, &te, sigmoid(&zd).as_slice(), &softmax(&zc), &ys, &w, false).unwrap();
    let analytic: Vec<f64> = [gl.d_generated.as_slice(), gl.d_disc_logits.as_slice(), gl.d_class_logits.as_slice()].concat();
    let point: Vec<f64> = [x.as_slice(), zd.as_slice(), zc.as_slice()].concat();
    out.push((
        "generator loss",
        check(
            |v| {
                let (xs, rest) = v.split_at(m * d);
                let (ds, cs) = rest.split_at(m);
                generator_loss(&mat(m, d, xs), &te, sigmoid(&mat(m, 1, ds)).as_slice(), &softmax(&mat(m, k, cs)), &ys, &w, false)
                    .unwrap()
                    .total
            },
            &point,
            &analytic,
        ),
    ));
    out
}

#[test]
fn gradient_correctness() {
    let start = Instant::now();
    let mut worst = (0.0f64, "", 0u64);
    let mut skipped = 0;
    for seed in 0..GRAD_SEEDS {
        for (name, r) in layer_checks(seed).into_iter().chain(loss_checks(seed)) {
            skipped += r.skipped;
            if r.max_rel_err >= worst.0 {
                worst = (r.max_rel_err, name, seed);
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst.0 <= GRAD_TOL && skipped == 0 && elapsed < GRAD_BUDGET;
    report(
        pass,
        "gradient correctness",
        &format!(
            "worst relative error {:.2e} ({} seed {}) <= {GRAD_TOL:e} at h = {GRAD_STEP:e} over {GRAD_SEEDS} seeds, {:.1}s",
            worst.0,
            worst.1,
            worst.2,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// ------------------------------------------------------------------ losses

fn ulps_apart(a: f32, b: f32) -> u32 {
    let key = |v: f32| {
        let bits = v.to_bits() as i64;
        if bits < 0x8000_0000 { bits } else { 0x8000_0000 - bits }
    };
    (key(a) - key(b)).unsigned_abs() as u32
}

#[test]
fn loss_identities() {
    let mut failures = Vec::new();
    let mut expect = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > IDENTITY_TOL {
            failures.push(format!("{name} = {got} (want {want})"));
        }
    };
    let ln2 = std::f64::consts::LN_2;
    let mut rng = Rng::new(3);
    for _ in 0..20 {
        let a = rng.gaussian(0.0, 1.0, 1, 8).unwrap();
        // build a vector orthogonal to a
        let r = rng.gaussian(0.0, 1.0, 1, 8).unwrap();
        let proj = featgen::numerics::dot(r.row(0), a.row(0)) / featgen::numerics::dot(a.row(0), a.row(0));
        let perp = r.zip_map(&a, |ri, ai| ri - proj * ai).unwrap();
        let eps = CDL_EPS as f32;
        expect("CDL(a, a)", f64::from(cdl(&a, &a, eps).unwrap().value), 0.0);
        expect("CDL(a, perp a)", f64::from(cdl(&a, &perp, eps).unwrap().value), 1.0);
        expect("CDL(a, -a)", f64::from(cdl(&a, &a.scale(-1.0), eps).unwrap().value), 2.0);
    }
    let p = Matrix::from_rows(&[[0.5f32, 0.5]]).unwrap();
    let t = Matrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
    expect("CCE([0.5, 0.5], [1, 0])", f64::from(cce(&p, &t).unwrap().value), ln2);
    let d = discriminator_loss(&[0.5f32; 4], &[0.5f32; 4]).unwrap();
    expect("discriminator loss at P = 0.5", f64::from(d.value), 2.0 * ln2);
    expect("BCE(0.5, 1)", f64::from(bce_const(&[0.5f32], 1.0).unwrap().value), ln2);

    let mut worst_ulps = 0;
    for seed in 0..100 {
        let mut rng = Rng::new(seed);
        let x = rng.gaussian(0.0, 1.0, 8, 16).unwrap();
        let te = rng.gaussian(0.0, 1.0, 8, 16).unwrap();
        let dz = sigmoid(&rng.gaussian(0.0, 2.0, 8, 1).unwrap());
        let pc = softmax(&rng.gaussian(0.0, 2.0, 8, 5).unwrap());
        let ys: Vec<usize> = (0..8).map(|i| (i + seed as usize) % 5).collect();
        let g = generator_loss(&x, &te, dz.as_slice(), &pc, &ys, &LossWeights::default(), false).unwrap();
        worst_ulps = worst_ulps.max(ulps_apart(g.total, g.cosine + g.discriminator + g.classifier));
    }
    if worst_ulps > SUM_ULPS {
        failures.push(format!("generator loss differs from its component sum by {worst_ulps} ulps"));
    }
    let pass = failures.is_empty();
    report(
        pass,
        "loss identities",
        &if pass {
            format!("CDL 0/1/2, CCE ln 2, discriminator 2 ln 2 within {IDENTITY_TOL:e}; generator sum within {worst_ulps} ulps")
        } else {
            failures.join("; ")
        },
    );
    assert!(pass);
}

// ------------------------------------------------------- trained-model runs

#[test]
fn lambda_zero_equivalence() {
    let t = trained();
    let mut mismatched = 0;
    for shot in [1, 5] {
        let cfg = EvalConfig { lambda: 0.0, ..eval_cfg(shot, 0) };
        let (base, aug) = arms(t, &cfg);
        mismatched += base.predictions.iter().zip(&aug.predictions).filter(|(a, b)| a != b).count();
        mismatched += usize::from(base.per_episode != aug.per_episode);
    }
    let pass = mismatched == 0;
    report(
        pass,
        "lambda = 0 equivalence",
        &format!("{mismatched} of {} episodes differ from the baseline (1-shot and 5-shot)", 2 * EPISODES),
    );
    assert!(pass);
}

#[test]
fn training_convergence() {
    let t = trained();
    let (initial, fin) = (t.metrics.initial_cdl_to_true, t.metrics.final_cdl_to_true());
    let drop = 1.0 - fin / initial;
    let fixture_ok = (fin - FIXTURE_FINAL_CDL).abs() <= FIXTURE_CDL_TOL;
    let pass = EPOCHS <= MAX_EPOCHS && drop >= MIN_CDL_DROP && t.elapsed <= TRAIN_BUDGET && fixture_ok;
    report(
        pass,
        "training convergence",
        &format!(
            "train-class CDL {initial:.4} -> {fin:.4} ({:.1}% drop, need >= {:.0}%) in {EPOCHS} epochs at lr {LR:e}, {:.1}s; fixture {FIXTURE_FINAL_CDL:.6} {}",
            100.0 * drop,
            100.0 * MIN_CDL_DROP,
            t.elapsed.as_secs_f64(),
            if fixture_ok { "matches" } else { "MISMATCH" }
        ),
    );
    assert!(pass);
}

#[test]
fn few_shot_gain() {
    let t = trained();
    let mut gains = Vec::new();
    let mut detail = Vec::new();
    let mut fixture_ok = true;
    let mut separated = false;
    for (shot, base_fix, aug_fix) in FIXTURE_ACC {
        let (base, aug) = arms(t, &eval_cfg(shot, 0));
        fixture_ok &= (base.accuracy - base_fix).abs() <= FIXTURE_ACC_TOL && (aug.accuracy - aug_fix).abs() <= FIXTURE_ACC_TOL;
        if shot == 1 {
            separated = clearly_above(&aug, &base);
        }
        gains.push(aug.accuracy - base.accuracy);
        detail.push(format!(
            "{shot}-shot {:.2}+-{:.2} -> {:.2}+-{:.2} (gain {:+.2})",
            base.accuracy,
            base.ci95,
            aug.accuracy,
            aug.ci95,
            aug.accuracy - base.accuracy
        ));
    }
    let pass = separated && gains[0] > gains[1] && fixture_ok;
    report(
        pass,
        "few-shot gain",
        &format!(
            "{}; 1-shot CIs disjoint: {separated}, 1-shot gain > 5-shot gain: {}, fixtures {}",
            detail.join(", "),
            gains[0] > gains[1],
            if fixture_ok { "match" } else { "MISMATCH" }
        ),
    );
    assert!(pass);
}

fn cosine_distance_sum(centroids: &Matrix, classes: &[u32], means: &ClassVectors) -> f64 {
    classes
        .iter()
        .enumerate()
        .map(|(i, &l)| 1.0 - f64::from(cosine_similarity(centroids.row(i), means.get(l).unwrap())))
        .sum()
}

#[test]
fn centroid_geometry() {
    let t = trained();
    let cfg = eval_cfg(1, 0);
    let mut closer = 0;
    for e in 0..EPISODES {
        let aug = run_episode(&t.data.test, Some(&t.data.semantics), Some(&t.bundle), &cfg, e).unwrap();
        let base = run_episode(&t.data.test, None, None, &cfg.baseline(), e).unwrap();
        assert_eq!(aug.episode, base.episode);
        let classes = &aug.episode.classes;
        if cosine_distance_sum(&aug.centroids, classes, &t.data.means) < cosine_distance_sum(&base.centroids, classes, &t.data.means) {
            closer += 1;
        }
    }
    let fraction = closer as f64 / EPISODES as f64;
    let pass = fraction >= GEOMETRY_MIN_FRACTION;
    report(
        pass,
        "centroid geometry",
        &format!(
            "augmented centroids closer to the class means in {closer}/{EPISODES} 1-shot episodes ({:.1}%, need >= {:.0}%)",
            100.0 * fraction,
            100.0 * GEOMETRY_MIN_FRACTION
        ),
    );
    assert!(pass);
}

#[test]
fn alpha_ablation_direction() {
    let data = benchmark();
    let mut results = Vec::new();
    for alpha in [0.0f32, 1.0] {
        let cfg = TrainConfig {
            mode: InputMode::Blend,
            alpha,
            ..train_cfg(0)
        };
        let (bundle, _) = train(&data.train, &data.semantics, &cfg).unwrap();
        let ecfg = EvalConfig {
            input_mode: InputMode::Blend,
            alpha,
            ..eval_cfg(1, 0)
        };
        results.push(evaluate(&data.test, Some(&data.semantics), Some(&bundle), &ecfg).unwrap());
    }
    let (visual, textual) = (&results[0], &results[1]);
    let pass = clearly_above(textual, visual);
    report(
        pass,
        "alpha ablation direction",
        &format!(
            "alpha 1: {:.2}+-{:.2}, alpha 0: {:.2}+-{:.2} (margin {:+.2}, CIs disjoint: {pass})",
            textual.accuracy,
            textual.ci95,
            visual.accuracy,
            visual.ci95,
            textual.accuracy - visual.accuracy
        ),
    );
    assert!(pass);
}

#[test]
fn loss_ablation_ordering() {
    let data = benchmark();
    let arms: [(&str, LossWeights); 3] = [
        ("classifier+discriminator", LossWeights { cosine: 0.0, ..LossWeights::default() }),
        ("cosine+discriminator", LossWeights { classifier: 0.0, ..LossWeights::default() }),
        ("classifier+cosine", LossWeights { discriminator: 0.0, ..LossWeights::default() }),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for seed in 0..ABLATION_SEEDS {
        let ecfg = eval_cfg(1, seed);
        let full = if seed == 0 {
            let t = trained();
            arms_accuracy(&t.bundle, data, &ecfg)
        } else {
            let (bundle, _) = train(&data.train, &data.semantics, &train_cfg(seed)).unwrap();
            arms_accuracy(&bundle, data, &ecfg)
        };
        let mut row = format!("seed {seed}: full {full:.2}");
        for (name, weights) in &arms {
            let cfg = TrainConfig {
                loss_weights: *weights,
                ..train_cfg(seed)
            };
            let (bundle, _) = train(&data.train, &data.semantics, &cfg).unwrap();
            let acc = arms_accuracy(&bundle, data, &ecfg);
            pass &= full >= acc;
            row.push_str(&format!(", {name} {acc:.2}"));
        }
        detail.push(row);
    }
    report(pass, "loss ablation ordering", &detail.join("; "));
    assert!(pass, "the full objective is not the best 1-shot arm on every seed");
}

fn arms_accuracy(bundle: &ModelBundle, data: &SyntheticData, cfg: &EvalConfig) -> f64 {
    evaluate(&data.test, Some(&data.semantics), Some(bundle), cfg).unwrap().accuracy
}

// ----------------------------------------------------------- serialization

#[test]
fn serialization_round_trips() {
    let data = benchmark();
    let mut failures = Vec::new();

    for (name, table) in [("train", &data.train), ("test", &data.test)] {
        let bytes = table.encode().unwrap();
        let back = FeatureTable::decode(&bytes).unwrap();
        if &back != table || back.encode().unwrap() != bytes {
            failures.push(format!("FGF1 {name}"));
        }
    }
    for (name, cv) in [("semantics", &data.semantics), ("means", &data.means)] {
        let bytes = cv.encode().unwrap();
        let back = ClassVectors::decode(&bytes).unwrap();
        if &back != cv || back.encode().unwrap() != bytes {
            failures.push(format!("FGS1 {name}"));
        }
    }

    // interrupt mid-epoch, round-trip the checkpoint, and resume
    let cfg = TrainConfig { epochs: 2, ..train_cfg(9) };
    let mut straight = Trainer::new(&data.train, &data.semantics, cfg.clone()).unwrap();
    straight.run_steps(RESUME_STEPS).unwrap();
    let split = 23;
    let mut first = Trainer::new(&data.train, &data.semantics, cfg.clone()).unwrap();
    first.run_steps(split).unwrap();
    let bytes = encode_checkpoint(&first.bundle).unwrap();
    let restored = decode_checkpoint(&bytes).unwrap();
    if restored != first.bundle || encode_checkpoint(&restored).unwrap() != bytes {
        failures.push("FGCK checkpoint".into());
    }
    let mut resumed = Trainer::resume(restored, &data.train, &data.semantics, cfg).unwrap();
    resumed.run_steps(RESUME_STEPS - split).unwrap();
    if encode_checkpoint(&resumed.bundle).unwrap() != encode_checkpoint(&straight.bundle).unwrap() {
        failures.push(format!("resume after {split} of {RESUME_STEPS} steps"));
    }

    let pass = failures.is_empty();
    report(
        pass,
        "serialization",
        &if pass {
            format!("FGF1, FGS1, FGCK round-trip bit-exactly; resume at step {split} matches {RESUME_STEPS} uninterrupted steps bit-exactly")
        } else {
            format!("mismatch in {}", failures.join(", "))
        },
    );
    assert!(pass);
}

// ------------------------------------------------------------- determinism

fn featgen(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_featgen")).args(args).output().unwrap();
    assert!(out.status.success(), "featgen {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn outputs_of(manifest: &Path) -> Vec<PathBuf> {
    fs::read_to_string(manifest)
        .unwrap()
        .lines()
        .filter_map(|l| l.strip_prefix("# output: "))
        .map(PathBuf::from)
        .collect()
}

#[test]
fn manifest_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s);
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let data = p("data");
    let train_f = s(&data.join("train.fgf"));
    let test_f = s(&data.join("test.fgf"));
    let sem = s(&data.join("semantics.txt"));
    let model = s(&p("train").join("model.fgck"));
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("synth", vec!["--per-class".into(), "30".into(), "--visual-dim".into(), "16".into(), "--semantic-dim".into(), "16".into(), "--seed".into(), "4".into()]),
        ("train", vec!["--features".into(), train_f.clone(), "--semantics".into(), sem.clone(), "--epochs".into(), "3".into(), "--batch-size".into(), "64".into()]),
        ("eval", vec!["--checkpoint".into(), model.clone(), "--features".into(), test_f.clone(), "--semantics".into(), sem.clone(), "--shot".into(), "1,5".into(), "--episodes".into(), "50".into()]),
        ("ablate-alpha", vec!["--train-features".into(), train_f, "--test-features".into(), test_f.clone(), "--semantics".into(), sem.clone(), "--alpha".into(), "0,1".into(), "--epochs".into(), "2".into(), "--episodes".into(), "20".into()]),
        ("export-embeddings", vec!["--checkpoint".into(), model, "--features".into(), test_f, "--semantics".into(), sem, "--episodes".into(), "3".into()]),
    ];
    let mut compared = 0;
    let mut differing = Vec::new();
    for (cmd, args) in &runs {
        let first = p(cmd);
        let mut argv: Vec<String> = vec![cmd.to_string()];
        argv.extend(args.iter().cloned());
        argv.extend(["--out-dir".into(), s(&first)]);
        // synth writes into the shared data directory the others read from
        if *cmd == "synth" {
            argv.pop();
            argv.push(s(&data));
        }
        featgen(&argv.iter().map(String::as_str).collect::<Vec<_>>());
        let out_dir = if *cmd == "synth" { data.clone() } else { first };
        let manifest = out_dir.join(format!("{cmd}.manifest"));
        let rerun = p(&format!("{cmd}-rerun"));
        featgen(&[cmd, "--config", &s(&manifest), "--out-dir", &s(&rerun)]);
        for o in outputs_of(&manifest) {
            let again = rerun.join(o.file_name().unwrap());
            compared += 1;
            if fs::read(&o).unwrap() != fs::read(&again).unwrap() {
                differing.push(o.display().to_string());
            }
        }
    }
    let pass = differing.is_empty() && compared > 0;
    report(
        pass,
        "determinism",
        &format!(
            "{compared} output files from synth, train, eval, ablate-alpha, export-embeddings re-run from their manifests; {} differ{}",
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(": {}", differing.join(", ")) }
        ),
    );
    assert!(pass);
}
