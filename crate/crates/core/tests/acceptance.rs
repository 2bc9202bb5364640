//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! (straight to stdout, so it shows even when output is captured) and then
//! asserts the same condition.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use relabel_distill::cli::{evaluate, streams, synth_split, RunConfig, Split, SynthSpec};
use relabel_distill::dataio::{save_model, ImageDataset};
use relabel_distill::explain::{
    distill_loss, explain, relabel, ExplainConfig, LinearStudent, LossWeights, Neighborhood, SaliencyMap,
};
use relabel_distill::metrics::{occlusion_saliency, CurveConfig, MethodScore};
use relabel_distill::numkit::{DenseTensor, Rng};
use relabel_distill::teacher::{cross_entropy_loss, train_teacher, Classifier, TeacherConfig, TeacherModel};
use relabel_distill::vae::{elbo_loss, reconstruction_mse, sample_neighborhood, train_vae, VaeConfig, VaeModel};

const SEED: u64 = 0;
const EVAL_IMAGES: usize = 20;
const OCCLUSION: (usize, usize) = (3, 1);

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("acceptance {id} [{verdict}] {name}: {detail}\n");
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
}

struct Pipeline {
    train: ImageDataset,
    test: ImageDataset,
    teacher: TeacherModel,
    vae: VaeModel,
    teacher_time: Duration,
}

/// Shapes models trained exactly as `rld train-teacher` / `rld train-vae`
/// would at the default flags and seed 0.
fn pipeline() -> &'static Pipeline {
    static CELL: OnceLock<Pipeline> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = SynthSpec::default();
        let train = synth_split(SEED, spec, Split::Train).unwrap();
        let test = synth_split(SEED, spec, Split::Test).unwrap();
        let start = Instant::now();
        let teacher = train_teacher(&train, &TeacherConfig::default(), &mut Rng::derive(SEED, streams::TEACHER)).unwrap();
        let teacher_time = start.elapsed();
        let vae = train_vae(&train, &VaeConfig::default(), &mut Rng::derive(SEED, streams::VAE)).unwrap();
        Pipeline {
            train,
            test,
            teacher,
            vae,
            teacher_time,
        }
    })
}

fn run_config(out_dir: &Path) -> RunConfig {
    RunConfig {
        seed: SEED,
        latent_dim: VaeConfig::default().latent_dim,
        explain: ExplainConfig::default(),
        curve: CurveConfig::default(),
        out_dir: out_dir.to_path_buf(),
    }
}

struct Scores {
    rows: Vec<MethodScore>,
    eval_time: Duration,
}

fn scores() -> &'static Scores {
    static CELL: OnceLock<Scores> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = pipeline();
        let indices: Vec<usize> = (0..EVAL_IMAGES).collect();
        let start = Instant::now();
        let rows = evaluate(&p.teacher, &p.vae, &p.test, &indices, &run_config(Path::new(".")), OCCLUSION, None).unwrap();
        Scores {
            rows,
            eval_time: start.elapsed(),
        }
    })
}

fn row<'a>(rows: &'a [MethodScore], method: &str) -> &'a MethodScore {
    rows.iter().find(|r| r.method == method).unwrap()
}

#[test]
fn c1_gradients_match_finite_differences() {
    let start = Instant::now();
    let floor = 1e-8;
    let mut rng = Rng::seed_from(101);
    let (mut elbo, mut ce, mut distill) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..3 {
        // 16-pixel VAE
        let cfg = VaeConfig {
            latent_dim: 3,
            hidden: 5,
            ..VaeConfig::default()
        };
        let vae = VaeModel::init(16, &cfg, &mut rng).unwrap();
        let x: Vec<f32> = (0..16).map(|_| rng.uniform() as f32).collect();
        let eps: Vec<f32> = (0..3).map(|_| rng.normal() as f32).collect();
        let (_, grads) = elbo_loss(&vae, &x, &eps).unwrap();
        elbo = elbo.max(max_fd_error(
            &vae,
            &grads.to_flat(),
            floor,
            |m, k| flat_slot(m.parameters_mut(), k),
            |m| elbo_loss(m, &x, &eps).unwrap().0,
        ));

        // 16-pixel, 3-class teacher
        let teacher = TeacherModel::init(16, 3, 6, &mut rng).unwrap();
        let label = rng.below(3);
        let (_, grads) = cross_entropy_loss(&teacher, &x, label).unwrap();
        ce = ce.max(max_fd_error(
            &teacher,
            &grads.to_flat(),
            floor,
            |m, k| flat_slot(m.parameters_mut(), k),
            |m| cross_entropy_loss(m, &x, label).unwrap().0,
        ));

        // 10-pixel student over a random 8-sample neighborhood
        let (dim, n) = (10, 8);
        let samples: Vec<f32> = (0..n * dim).map(|_| rng.uniform() as f32).collect();
        let nb = Neighborhood {
            anchor: DenseTensor::zeros(&[1, dim, 1]),
            anchor_class: 0,
            samples: DenseTensor::new(&[n, dim], samples).unwrap(),
            soft_targets: (0..n)
                .map(|_| {
                    let p = rng.uniform();
                    [p, 1.0 - p]
                })
                .collect(),
            hard_labels: (0..n).map(|_| u8::from(rng.uniform() < 0.5)).collect(),
            tau_used: None,
        };
        let w: Vec<f32> = (0..dim).map(|_| rng.normal() as f32 * 0.5).collect();
        let student = LinearStudent::from_weights(DenseTensor::from_slice(&w), 0.2);
        let weights = LossWeights::default();
        let (_, grads) = distill_loss(&student, &nb, weights).unwrap();
        let mut analytic = grads.w.clone();
        analytic.push(grads.b);
        distill = distill.max(max_fd_error(
            &student,
            &analytic,
            floor,
            |s, k| if k < dim { &mut s.w.data_mut()[k] } else { &mut s.b },
            |s| distill_loss(s, &nb, weights).unwrap().0,
        ));
    }
    let elapsed = start.elapsed();
    let worst = elbo.max(ce).max(distill);
    let pass = worst <= 1e-3 && elapsed < Duration::from_secs(10);
    report(
        1,
        "gradient check",
        pass,
        &format!("max rel err elbo {elbo:.2e} ce {ce:.2e} distill {distill:.2e} (limit 1e-3), {:.2}s", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn c2_hard_labels_match_brute_force() {
    let p = pipeline();
    let anchor = p.test.image(0);
    let samples = sample_neighborhood(&p.vae, anchor.data(), 1000, 1.0, &mut Rng::seed_from(7)).unwrap();
    let start = Instant::now();
    let nb = relabel(&p.teacher, &anchor, &samples).unwrap();
    let argmax = |v: &[f64]| {
        let mut best = 0;
        for (i, &x) in v.iter().enumerate() {
            if x > v[best] {
                best = i;
            }
        }
        best
    };
    let anchor_class = argmax(&p.teacher.predict_proba(anchor.data()).unwrap());
    let mismatches = (0..1000)
        .filter(|&i| {
            let class = argmax(&p.teacher.predict_proba(samples.row(i)).unwrap());
            u8::from(class == anchor_class) != nb.hard_labels[i]
        })
        .count();
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && nb.anchor_class == anchor_class && elapsed < Duration::from_secs(5);
    report(
        2,
        "re-label rule",
        pass,
        &format!(
            "{mismatches} mismatches over 1000 samples ({} kept / {} shifted), {:.2}s",
            nb.kept(),
            nb.shifted(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn c3_closed_form_loss() {
    let nb = Neighborhood {
        anchor: DenseTensor::zeros(&[1, 1, 1]),
        anchor_class: 0,
        samples: DenseTensor::zeros(&[1, 1]),
        soft_targets: vec![[1.0, 0.0]],
        hard_labels: vec![1],
        tau_used: None,
    };
    let (loss, _) = distill_loss(&LinearStudent::zeros(1), &nb, LossWeights::new(0.7, 0.3).unwrap()).unwrap();
    let pass = (loss - 0.644975).abs() <= 1e-5;
    report(3, "closed-form loss", pass, &format!("loss {loss:.7} vs 0.644975 (tol 1e-5)"));
    assert!(pass);
}

#[test]
fn c4_beats_random_ordering() {
    let p = pipeline();
    let s = scores();
    let accuracy = p.teacher.accuracy().unwrap();
    let rld = row(&s.rows, "relabel");
    let random = row(&s.rows, "random");
    let total = p.teacher_time + s.eval_time;
    let pass = accuracy >= 0.95
        && rld.deletion_auc < random.deletion_auc - 0.02
        && rld.insertion_auc > random.insertion_auc + 0.02
        && total < Duration::from_secs(300);
    report(
        4,
        "faithfulness vs random",
        pass,
        &format!(
            "{EVAL_IMAGES} images, teacher train acc {accuracy:.3}; deletion {:.4} vs random {:.4}; insertion {:.4} vs random {:.4}; {:.1}s",
            rld.deletion_auc,
            random.deletion_auc,
            rld.insertion_auc,
            random.insertion_auc,
            total.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn c5_comparable_to_occlusion() {
    let s = scores();
    let rld = row(&s.rows, "relabel");
    let occ = row(&s.rows, "occlusion");
    let pass = rld.deletion_auc <= occ.deletion_auc + 0.05;
    report(
        5,
        "deletion vs occlusion",
        pass,
        &format!(
            "relabel {:.4} <= occlusion {:.4} + 0.05 (insertion {:.4} vs {:.4})",
            rld.deletion_auc, occ.deletion_auc, rld.insertion_auc, occ.insertion_auc
        ),
    );
    assert!(pass);
}

/// Share of normalized mass among the top quarter of pixels (by raw value)
/// that sits in the left half.
fn top_quartile_left_share(map: &SaliencyMap) -> f64 {
    let raw = map.raw.data();
    let mut idx: Vec<usize> = (0..raw.len()).collect();
    idx.sort_by(|&a, &b| raw[b].partial_cmp(&raw[a]).unwrap().then(a.cmp(&b)));
    let top = &idx[..raw.len() / 4];
    let norm = map.normalized.data();
    let total: f64 = top.iter().map(|&p| norm[p] as f64).sum();
    let left: f64 = top.iter().filter(|&&p| is_left(p)).map(|&p| norm[p] as f64).sum();
    left / total
}

#[test]
fn c6_planted_feature_localization() {
    let teacher = planted_teacher();
    let vae = planted_vae();
    let anchor = planted_anchor();
    let ex = explain(&teacher, &vae, &anchor, &ExplainConfig::default(), &mut Rng::seed_from(SEED)).unwrap();
    let occ = occlusion_saliency(&teacher, &anchor, OCCLUSION.0, OCCLUSION.1, 0.0).unwrap();
    let rld_share = top_quartile_left_share(&ex.saliency);
    let occ_share = top_quartile_left_share(&occ);
    let pass = rld_share >= 0.6 && occ_share >= 0.6;
    report(
        6,
        "planted left half",
        pass,
        &format!(
            "top-quartile left share relabel {rld_share:.3}, occlusion {occ_share:.3} (min 0.6); neighborhood {} kept / {} shifted",
            ex.neighborhood.kept(),
            ex.neighborhood.shifted()
        ),
    );
    assert!(pass);
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn rld(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_rld"))
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success(), "rld {args:?} failed with {status}");
}

#[test]
fn c7_outputs_are_byte_identical() {
    let p = pipeline();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let teacher = root.join("teacher.rldm");
    let vae = root.join("vae.rldm");
    save_model(&p.teacher.to_archive().unwrap(), &teacher).unwrap();
    save_model(&p.vae.to_archive().unwrap(), &vae).unwrap();
    let (t, v) = (teacher.to_str().unwrap(), vae.to_str().unwrap());

    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let ex = root.join(format!("explain_{run}"));
        let ev = root.join(format!("eval_{run}"));
        for idx in ["0", "5"] {
            rld(&["explain", "--teacher", t, "--vae", v, "--index", idx, "--out-dir", ex.to_str().unwrap()]);
        }
        rld(&["eval", "--teacher", t, "--vae", v, "--out-dir", ev.to_str().unwrap()]);
        runs.push((read_dir_bytes(&ex), read_dir_bytes(&ev)));
    }
    let (a, b) = (&runs[0], &runs[1]);
    let explain_files = a.0.keys().filter(|k| k.ends_with(".pgm") || k.ends_with(".rldm")).count();
    let csvs = a.1.keys().filter(|k| k.ends_with(".csv")).count();
    let summary = String::from_utf8(a.1["summary.txt"].clone()).unwrap();
    let methods: Vec<&str> = summary.lines().skip(1).filter_map(|l| l.split_whitespace().next()).collect();
    let pass = a == b && explain_files == 4 && csvs == 2 * EVAL_IMAGES && methods == ["relabel", "occlusion", "random"];
    report(
        7,
        "determinism",
        pass,
        &format!(
            "explain {} files, eval {csvs} CSVs + summary, identical across runs: {}",
            a.0.len(),
            a == b
        ),
    );
    assert!(pass);
}

#[test]
fn c8_vae_learns() {
    let p = pipeline();
    let losses = p.vae.epoch_losses();
    let (first, last) = (losses[0], *losses.last().unwrap());
    let mse = reconstruction_mse(&p.vae, &p.train, 500).unwrap();
    let pass = last < first && mse < 0.05;
    report(
        8,
        "VAE sanity",
        pass,
        &format!("ELBO epoch 1 {first:.3} -> epoch {} {last:.3}; reconstruction MSE {mse:.4} (limit 0.05)", losses.len()),
    );
    assert!(pass);
}
