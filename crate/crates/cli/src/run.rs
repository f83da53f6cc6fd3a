//! Shared pieces of the subcommands: run manifests, trajectory batches,
//! certificate summaries.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use kcontract::certify::Certificate;
use kcontract::rng::Rng;
use kcontract::sim::{
    detect_equilibrium, integrate, integrate_with_variational, write_trajectory_csv,
    write_volume_csv, SimConfig, Trajectory, VolumeTrace,
};
use kcontract::{GlsModel, Matrix, MetricSpec};

use crate::svg::{line_plot, Series};

/// Tolerance on `|f_cl(e)|` and on the final-10% drift for equilibria.
pub const EQUILIBRIUM_TOL: f64 = 1e-6;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: Option<&Path>, out: &Path, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config: config.map(Path::to_path_buf),
            output_dir: out.to_path_buf(),
            seed,
            version: env!("CARGO_PKG_VERSION"),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    /// Create the output directory and write `manifest.json` into it.
    pub fn write(&self) -> Result<()> {
        fs::create_dir_all(&self.output_dir)
            .with_context(|| format!("cannot create {}", self.output_dir.display()))?;
        write_json(&self.output_dir.join("manifest.json"), self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

pub fn summary(cert: &Certificate) -> String {
    let mut s = format!(
        "k={} mode={} verdict={} metric={}\n  eta1={:.6e} eta2={:.6e} rate={:.6e} worst_margin={:.6e}\n",
        cert.k,
        serde_json::to_value(cert.mode).map_or_else(|_| "?".into(), |v| v.to_string()),
        if cert.is_certified() { "certified" } else { "not-certified" },
        cert.metric,
        cert.eta1,
        cert.eta2,
        cert.rate,
        cert.worst_margin
    );
    if let Some(a) = cert.alpha_k {
        s.push_str(&format!("  alpha_{}={a}\n", cert.k));
    }
    if let (Some(l), Some(r)) = (cert.small_gain_lhs, cert.small_gain_rhs) {
        s.push_str(&format!("  small-gain lhs={l:.6e} rhs={r:.6e}\n"));
    }
    if cert.sampled {
        s.push_str(&format!(
            "  sampled over {} points (sigma1={:.4e}, sigma2={:.4e})\n",
            cert.samples, cert.sigma1, cert.sigma2
        ));
    }
    for note in &cert.notes {
        s.push_str(&format!("  note: {note}\n"));
    }
    s
}

/// Seeded n×k matrix with entries uniform in `[-1, 1)`.
pub fn random_w0(n: usize, k: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..n * k {
        data.push(rng.uniform_in(-1.0, 1.0));
    }
    Matrix::new(n, k, data).expect("n*k entries")
}

pub struct TrajectoryRun {
    pub x0: Vec<f64>,
    pub trajectory: Trajectory,
    pub volume: Option<VolumeTrace>,
    pub equilibrium: Option<Vec<f64>>,
}

#[derive(Serialize)]
pub struct TrajectoryReport {
    pub index: usize,
    pub x0: Vec<f64>,
    pub ok: bool,
    pub error: Option<String>,
    pub final_state: Option<Vec<f64>>,
    pub equilibrium: Option<Vec<f64>>,
    pub steps: Option<usize>,
    pub logvol_start: Option<f64>,
    pub logvol_end: Option<f64>,
}

pub struct Batch {
    pub runs: Vec<Result<TrajectoryRun, String>>,
}

/// Integrate every initial condition in parallel. With `volume = Some(k)`
/// the variational equation is co-integrated from a seeded random W0.
pub fn run_batch(
    model: &GlsModel,
    metric: &MetricSpec,
    initials: &[Vec<f64>],
    volume: Option<usize>,
    cfg: &SimConfig,
) -> Batch {
    let runs = initials
        .par_iter()
        .enumerate()
        .map(|(i, x0)| -> Result<TrajectoryRun, String> {
            let (trajectory, volume) = match volume {
                Some(k) => {
                    let w0 = random_w0(model.n(), k, cfg.seed.wrapping_add(1000 + i as u64));
                    let (t, v) = integrate_with_variational(model, x0, &w0, Some(metric), cfg)
                        .map_err(|e| e.to_string())?;
                    (t, Some(v))
                }
                None => (integrate(model, x0, cfg).map_err(|e| e.to_string())?, None),
            };
            let equilibrium = detect_equilibrium(&trajectory, model, EQUILIBRIUM_TOL)
                .map_err(|e| e.to_string())?;
            Ok(TrajectoryRun {
                x0: x0.clone(),
                trajectory,
                volume,
                equilibrium,
            })
        })
        .collect();
    Batch { runs }
}

impl Batch {
    /// Write `trajectory_<i>.csv`, `volume_<i>.csv` and `trajectories.json`
    /// (1-based indices).
    pub fn write(&self, out: &Path, initials: &[Vec<f64>]) -> Result<Vec<TrajectoryReport>> {
        let mut reports = Vec::new();
        for (i, run) in self.runs.iter().enumerate() {
            let idx = i + 1;
            let report = match run {
                Ok(r) => {
                    let path = out.join(format!("trajectory_{idx}.csv"));
                    write_trajectory_csv(BufWriter::new(fs::File::create(&path)?), &r.trajectory)?;
                    if let Some(v) = &r.volume {
                        let path = out.join(format!("volume_{idx}.csv"));
                        write_volume_csv(BufWriter::new(fs::File::create(&path)?), v)?;
                    }
                    TrajectoryReport {
                        index: idx,
                        x0: r.x0.clone(),
                        ok: true,
                        error: None,
                        final_state: Some(r.trajectory.final_state().to_vec()),
                        equilibrium: r.equilibrium.clone(),
                        steps: Some(r.trajectory.stats.steps),
                        logvol_start: r.volume.as_ref().map(|v| v.logvol[0]),
                        logvol_end: r.volume.as_ref().and_then(|v| v.logvol.last().copied()),
                    }
                }
                Err(e) => TrajectoryReport {
                    index: idx,
                    x0: initials[i].clone(),
                    ok: false,
                    error: Some(e.clone()),
                    final_state: None,
                    equilibrium: None,
                    steps: None,
                    logvol_start: None,
                    logvol_end: None,
                },
            };
            reports.push(report);
        }
        write_json(&out.join("trajectories.json"), &reports)?;
        Ok(reports)
    }

    pub fn ok_runs(&self) -> impl Iterator<Item = (usize, &TrajectoryRun)> {
        self.runs
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().ok().map(|r| (i + 1, r)))
    }

    /// One series per trajectory: the x1–x2 projection when n ≥ 2, otherwise
    /// x1 against time.
    pub fn plot_states(&self, title: &str) -> String {
        let mut series = Vec::new();
        for (idx, run) in self.ok_runs() {
            let traj = &run.trajectory;
            let n = traj.states.first().map_or(0, Vec::len);
            if n >= 2 {
                series.push(Series {
                    label: format!("#{idx}"),
                    points: traj.states.iter().map(|x| (x[0], x[1])).collect(),
                });
            } else {
                series.push(Series {
                    label: format!("#{idx}"),
                    points: traj
                        .times
                        .iter()
                        .zip(&traj.states)
                        .map(|(t, x)| (*t, x[0]))
                        .collect(),
                });
            }
        }
        let two_d = self
            .ok_runs()
            .next()
            .is_some_and(|(_, r)| r.trajectory.states[0].len() >= 2);
        if two_d {
            line_plot(title, "x1", "x2", &series)
        } else {
            line_plot(title, "t", "x1", &series)
        }
    }

    pub fn plot_volumes(&self, title: &str) -> Option<String> {
        let series: Vec<Series> = self
            .ok_runs()
            .filter_map(|(idx, r)| {
                r.volume.as_ref().map(|v| Series {
                    label: format!("#{idx}"),
                    points: v
                        .times
                        .iter()
                        .copied()
                        .zip(v.logvol.iter().copied())
                        .collect(),
                })
            })
            .collect();
        (!series.is_empty()).then(|| line_plot(title, "t", "log |W^(k)|", &series))
    }
}
