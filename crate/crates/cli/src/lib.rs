//! File-level pipeline behind the `monobmd` binary: read a delimited data
//! file, fit, estimate the benchmark dose and its three lower limits, and
//! write a report plus plot-ready grids. Also drives the simulation study
//! from a TOML configuration.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use monobmd::bmd::{estimate_bmd, BmdConfig};
use monobmd::bmdl::{compute_bmdls, BmdlConfig};
use monobmd::model::{fit, DoseResponseData, FitConfig, FittedModel, PosteriorSampler};
use monobmd::parallel::{map_indexed, mix64, stream_rng, Execution};
use monobmd::sim::{run_study, SimConfig, SimResultRow};
use monobmd::splines::de_boor;
use monobmd::stats::percentile;
use monobmd::BmdError;
use serde::{Deserialize, Serialize};

/// Points in the emitted curve grid.
pub const CURVE_POINTS: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("data error: {0}")]
    Data(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    NotEstimable(BmdError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    /// 0 success, 2 data or configuration, 3 estimability, 4 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) | CliError::Config(_) => 2,
            CliError::NotEstimable(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<BmdError> for CliError {
    fn from(e: BmdError) -> Self {
        match e {
            BmdError::BmdNotEstimable { .. }
            | BmdError::BmdlNotEstimable { .. }
            | BmdError::DegenerateSlope(_)
            | BmdError::NonFiniteCovariance => {
                CliError::NotEstimable(e)
            }
            BmdError::DegenerateKnots(_)
            | BmdError::InsufficientData { .. }
            | BmdError::InvalidArgument(_)
            | BmdError::OutOfSupport { .. }
            | BmdError::NoTrueBmd(_) => CliError::Data(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRequest {
    pub data_path: PathBuf,
    pub response_col: String,
    pub exposure_col: String,
    pub covariate_cols: Vec<String>,
    /// Replace the exposure by `ln(1 + x)` before fitting; `x0` and `xmax`
    /// are then on the transformed scale.
    pub log1p_exposure: bool,
    pub p0: f64,
    pub p_plus: f64,
    pub x0: f64,
    pub xmax: Option<f64>,
    pub basis_count: usize,
    #[serde(rename = "boot_M")]
    pub boot_m: usize,
    pub seed: u64,
    /// Two-sided level of the lower limits.
    pub alpha_level: f64,
    pub output_dir: PathBuf,
}

impl AnalysisRequest {
    pub fn new(data_path: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_path: data_path.into(),
            response_col: "y".into(),
            exposure_col: "x".into(),
            covariate_cols: Vec::new(),
            log1p_exposure: false,
            p0: 0.025,
            p_plus: 0.01,
            x0: 0.0,
            xmax: None,
            basis_count: 20,
            boot_m: 1000,
            seed: 1,
            alpha_level: 0.95,
            output_dir: output_dir.into(),
        }
    }

    fn bmd_config(&self) -> BmdConfig {
        BmdConfig { x0: self.x0, xmax: self.xmax, p0: self.p0, p_plus: self.p_plus, ..BmdConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub delta: f64,
    pub delta_below_x0: bool,
    pub pivot: f64,
    pub pivot_iterations: usize,
    pub pivot_bisection: bool,
    pub pivot_sign_changes: Option<usize>,
    pub boot: f64,
    pub boot_samples_used: usize,
    pub boot_failures: usize,
}

/// Contents of `report.json`. Depends only on the request, so reruns are
/// byte-identical; wall-clock times go to `timings.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmdReport {
    pub n: usize,
    pub p0: f64,
    pub p_plus: f64,
    pub x0: f64,
    pub xmax: f64,
    pub level: f64,
    pub bmd: f64,
    pub bmd_iterations: usize,
    pub bmd_bisection: bool,
    pub existence_margin: f64,
    pub bmdl: LimitReport,
    pub sigma_hat: f64,
    pub log_lambda_hat: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    pub log_laml: f64,
    pub var_at_bmd: f64,
    pub u_prime_at_bmd: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub fit_seconds: f64,
    pub bmd_seconds: f64,
    pub bmdl_seconds: f64,
    pub curve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub exposure: f64,
    pub f_hat: f64,
    pub lower_2_5: f64,
    pub upper_97_5: f64,
}

#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub report: BmdReport,
    pub timings: Timings,
    pub curve: Vec<CurvePoint>,
    pub bmd_samples: Vec<f64>,
}

/// Reads the named columns of a headed, comma-delimited file.
pub fn read_data(req: &AnalysisRequest) -> Result<DoseResponseData> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&req.data_path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", req.data_path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError::Data(e.to_string()))?.clone();
    let index = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("column `{name}` not found in {}", req.data_path.display())))
    };
    let yi = index(&req.response_col)?;
    let xi = index(&req.exposure_col)?;
    let zi = req.covariate_cols.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?;

    let (mut y, mut x) = (Vec::new(), Vec::new());
    let mut z = vec![Vec::new(); zi.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        let line = row + 2;
        let num = |i: usize| -> Result<f64> {
            let cell = rec.get(i).unwrap_or("");
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Data(format!("line {line}, column `{}`: `{cell}` is not a finite number", &headers[i])))
        };
        y.push(num(yi)?);
        let xv = num(xi)?;
        if req.log1p_exposure {
            if xv <= -1.0 {
                return Err(CliError::Data(format!("line {line}: exposure {xv} has no log(1 + x)")));
            }
            x.push(xv.ln_1p());
        } else {
            x.push(xv);
        }
        for (col, &i) in z.iter_mut().zip(&zi) {
            col.push(num(i)?);
        }
    }
    Ok(DoseResponseData::new(y, x, z)?)
}

/// Fitted curve and pointwise 2.5/97.5% posterior bands on
/// [`CURVE_POINTS`] evenly spaced exposures.
pub fn curve_grid(model: &FittedModel, lo: f64, hi: f64, draws: usize, seed: u64, exec: Execution) -> Result<Vec<CurvePoint>> {
    let xs: Vec<f64> = (0..CURVE_POINTS).map(|i| lo + (hi - lo) * i as f64 / (CURVE_POINTS - 1) as f64).collect();
    let center = model.params.psi();
    let sampler = PosteriorSampler::new(model, &center);
    let kv = model.exposure_knots();
    // Each draw is centred over the observed exposures like f̂ itself; its
    // level is otherwise only pinned down by the spline ridge.
    let basis_means = model.design.b.row_mean();
    let curves: Vec<Vec<f64>> = map_indexed(draws, exec, |j| {
        let mut rng = stream_rng(seed, j as u64);
        let (mut psi, mut beta_c) = (Vec::new(), Vec::new());
        sampler.sample_beta_c(&mut rng, &mut psi, &mut beta_c);
        let offset: f64 = basis_means.iter().zip(&beta_c).map(|(m, b)| m * b).sum();
        xs.iter().map(|&x| de_boor(x, &beta_c, kv).map(|v| v - offset).unwrap_or(f64::NAN)).collect()
    });
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let column: Vec<f64> = curves.iter().map(|c| c[i]).filter(|v| v.is_finite()).collect();
            let band = |p| percentile(&column, p).ok_or_else(|| CliError::Internal("no finite posterior curves".into()));
            Ok(CurvePoint { exposure: x, f_hat: model.f_hat(x)?, lower_2_5: band(0.025)?, upper_97_5: band(0.975)? })
        })
        .collect()
}

/// Fits, estimates and computes everything `run_analysis` writes, without
/// touching the file system.
pub fn analyze(req: &AnalysisRequest, exec: Execution) -> Result<AnalysisOutput> {
    let data = read_data(req)?;
    let bcfg = req.bmd_config();
    bcfg.validate()?;
    let (lo, hi) = data.exposure_range();
    let xmax = req.xmax.unwrap_or(hi);
    let fit_cfg = FitConfig {
        basis_count: req.basis_count,
        exposure_range: Some((lo.min(req.x0), hi.max(xmax))),
        ..FitConfig::default()
    };

    let t = Instant::now();
    let model = fit(&data, &fit_cfg)?;
    let fit_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let bcfg = BmdConfig { xmax: Some(xmax), ..bcfg };
    let est = estimate_bmd(&model, &bcfg)?;
    let bmd_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let lcfg = BmdlConfig { level: req.alpha_level, boot_samples: req.boot_m, seed: req.seed, ..BmdlConfig::default() };
    let limits = compute_bmdls(&model, &est, &bcfg, &lcfg, exec)?;
    let bmdl_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (glo, ghi) = fit_cfg.exposure_range.unwrap_or((lo, hi));
    let curve = curve_grid(&model, glo, ghi, req.boot_m, mix64(req.seed ^ 0xC0_7E), exec)?;
    let curve_seconds = t.elapsed().as_secs_f64();

    let report = BmdReport {
        n: data.len(),
        p0: req.p0,
        p_plus: req.p_plus,
        x0: req.x0,
        xmax,
        level: req.alpha_level,
        bmd: est.xb_hat,
        bmd_iterations: est.iterations,
        bmd_bisection: est.bisection,
        existence_margin: est.existence_margin,
        bmdl: LimitReport {
            delta: limits.delta.value,
            delta_below_x0: limits.delta.below_x0,
            pivot: limits.pivot.value,
            pivot_iterations: limits.pivot.iterations,
            pivot_bisection: limits.pivot.bisection,
            pivot_sign_changes: limits.pivot_sign_changes,
            boot: limits.boot,
            boot_samples_used: limits.boot_samples_used,
            boot_failures: limits.boot_failures,
        },
        sigma_hat: model.sigma_hat,
        log_lambda_hat: model.params.loglambda.clone(),
        lambda_hat: model.smoothing_parameters(),
        log_laml: model.log_laml,
        var_at_bmd: limits.var_at_xb,
        u_prime_at_bmd: limits.u_prime_at_xb,
        warnings: model.warnings.clone(),
    };
    Ok(AnalysisOutput {
        report,
        timings: Timings { fit_seconds, bmd_seconds, bmdl_seconds, curve_seconds },
        curve,
        bmd_samples: limits.boot_draws,
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(())
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Internal(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Internal(e.to_string()))
}

/// Output file names inside the output directory.
pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const SAMPLES_FILE: &str = "bmd_samples.csv";
pub const SIM_CSV_FILE: &str = "sim_results.csv";
pub const SIM_JSON_FILE: &str = "sim_results.json";

/// Runs [`analyze`] and writes `report.json`, `timings.json`, `curve.csv`
/// and `bmd_samples.csv` into `req.output_dir`.
pub fn run_analysis(req: &AnalysisRequest, exec: Execution) -> Result<AnalysisOutput> {
    let out = analyze(req, exec)?;
    fs::create_dir_all(&req.output_dir)?;
    let dir = &req.output_dir;
    write_atomic(&dir.join(REPORT_FILE), &json(&out.report)?)?;
    write_atomic(&dir.join(TIMINGS_FILE), &json(&out.timings)?)?;
    write_atomic(&dir.join(CURVE_FILE), &csv_bytes(&out.curve)?)?;
    #[derive(Serialize)]
    struct Sample {
        bmd: f64,
    }
    let samples: Vec<Sample> = out.bmd_samples.iter().map(|&bmd| Sample { bmd }).collect();
    write_atomic(&dir.join(SAMPLES_FILE), &csv_bytes(&samples)?)?;
    Ok(out)
}

/// Parses and validates a study configuration.
pub fn load_sim_config(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: SimConfig = toml::from_str(&text).map_err(|e| CliError::Config(e.message().to_string()))?;
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

/// Runs the study described by the TOML file at `config` and writes
/// `sim_results.csv` and `sim_results.json` into `output_dir`.
pub fn run_sim(config: &Path, output_dir: &Path, exec: Execution) -> Result<Vec<SimResultRow>> {
    let cfg = load_sim_config(config)?;
    let rows = run_study(&cfg, exec)?;
    fs::create_dir_all(output_dir)?;
    write_atomic(&output_dir.join(SIM_CSV_FILE), &csv_bytes(&rows)?)?;
    write_atomic(&output_dir.join(SIM_JSON_FILE), &json(&rows)?)?;
    Ok(rows)
}
