//! The five subcommands. Each takes resolved inputs and a validated
//! [`RunConfig`] and returns a report; nothing here touches stdout.
//!
//! Per-input failures are recorded in the report and do not stop the batch.
//! Only configuration and usage problems are returned as `Err`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use tnshield_core::analysis::{
    image_to_rcw, nmi, normalized_l2_dissimilarity, rcw_to_image, tt_svd_slope, SlopeReport,
};
use tnshield_core::detect::{detect as detect_image, DetectionVerdict};
use tnshield_core::formats::{
    cp_als, ht_decompose, tt_svd, tt_svd_traced, tucker_decompose, FormatError, PerturbMode,
    SubtensorSelector,
};
use tnshield_core::quantize::{perturb_quantized, quantize_network, QuantizedNetwork};
use tnshield_core::tensor::norm2;
use tnshield_core::{tnz, DenseTensor, NetworkFormat, RankPolicy, TensorNetwork};

use crate::imageio::{load_image, save_image};
use crate::report::{elapsed_ms, Report, Status};
use crate::{run_batch, CliError, RunConfig};

/// Shared batch settings.
#[derive(Debug, Clone, Copy)]
pub struct BatchOptions {
    pub jobs: usize,
    /// Include wall-clock timings in the report.
    pub timings: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            timings: true,
        }
    }
}

fn require_inputs(inputs: &[PathBuf]) -> Result<(), CliError> {
    if inputs.is_empty() {
        return Err(CliError::Usage("no input files given".into()));
    }
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn is_tnz(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("tnz"))
}

/// `‖a − b‖ / ‖a‖`; the absolute error when `a` is zero.
pub fn relative_error(a: &DenseTensor, b: &DenseTensor) -> f64 {
    let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let na = a.frobenius_norm();
    let nd = norm2(&diff);
    if na == 0.0 {
        nd
    } else {
        nd / na
    }
}

/// Decomposes `t` (decomposition layout) with the configured format.
pub fn decompose(
    t: &DenseTensor,
    cfg: &RunConfig,
    tolerance: f64,
) -> Result<TensorNetwork, CliError> {
    let policy = RankPolicy {
        tolerance,
        ..cfg.rank_policy()
    };
    Ok(match cfg.format {
        NetworkFormat::Tt => {
            let robust = cfg.robust.then_some(&cfg.robust_svd);
            TensorNetwork::Tt(tt_svd(t, &policy, robust)?)
        }
        NetworkFormat::Tucker => TensorNetwork::Tucker(tucker_decompose(t, &policy)?),
        NetworkFormat::Ht => TensorNetwork::Ht(ht_decompose(t, &policy)?),
        NetworkFormat::Cp => TensorNetwork::Cp(cp_als(t, &cfg.cp_options()?)?.tensor),
    })
}

// ---------------------------------------------------------------- compress

/// First decomposition tolerance as a fraction of the end-to-end target,
/// leaving room for the quantization error.
const FIRST_TOLERANCE_FRACTION: f64 = 0.95;
/// Tolerance shrink factor between attempts.
const TOLERANCE_BACKOFF: f64 = 0.7;
const MAX_ATTEMPTS: usize = 6;

#[derive(Debug, Clone, Default, Serialize)]
pub struct CompressTimings {
    pub decompose_ms: f64,
    pub quantize_ms: f64,
    pub encode_ms: f64,
    pub decompress_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Compressed {
    pub quantized: QuantizedNetwork,
    pub bytes: Vec<u8>,
    /// Reconstruction from the dequantized network.
    pub reconstruction: DenseTensor,
    /// `‖t − reconstruction‖ / ‖t‖`.
    pub relative_error: f64,
    /// Tolerance of the final decomposition (`None` for CP).
    pub tolerance_used: Option<f64>,
    pub attempts: usize,
    pub target_met: bool,
    pub timings: CompressTimings,
}

/// Decompose → quantize → encode.
///
/// With a non-zero tolerance ε the target is the end-to-end error after
/// quantization: the decomposition starts at 0.95·ε and tightens until the
/// dequantized reconstruction is within ε (or the attempts run out, which is
/// reported via `target_met`).
pub fn compress_tensor(t: &DenseTensor, cfg: &RunConfig) -> Result<Compressed, CliError> {
    let target = cfg.effective_tolerance();
    let adaptive = target > 0.0 && cfg.format != NetworkFormat::Cp;
    let mut tolerance = if adaptive {
        target * FIRST_TOLERANCE_FRACTION
    } else {
        target
    };
    let plan = cfg.quantizer.plan();
    let mut timings = CompressTimings::default();
    let mut attempt = 0;
    loop {
        attempt += 1;
        let clock = Instant::now();
        let net = decompose(t, cfg, tolerance)?;
        timings.decompose_ms += elapsed_ms(clock);

        let clock = Instant::now();
        let quantized = quantize_network(&net, &plan)?;
        timings.quantize_ms += elapsed_ms(clock);

        let clock = Instant::now();
        let reconstruction = quantized.dequantize()?.reconstruct()?;
        timings.decompress_ms += elapsed_ms(clock);

        let err = relative_error(t, &reconstruction);
        let target_met = target == 0.0 || err <= target;
        if target_met || !adaptive || attempt == MAX_ATTEMPTS {
            let clock = Instant::now();
            let bytes = tnz::encode(&quantized);
            timings.encode_ms = elapsed_ms(clock);
            return Ok(Compressed {
                quantized,
                bytes,
                reconstruction,
                relative_error: err,
                tolerance_used: (cfg.format != NetworkFormat::Cp).then_some(tolerance),
                attempts: attempt,
                target_met: target_met || target == 0.0,
                timings,
            });
        }
        tolerance *= TOLERANCE_BACKOFF;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompressStats {
    pub output: String,
    pub format: NetworkFormat,
    pub shape: Vec<usize>,
    pub ranks: Vec<usize>,
    pub storage_count: usize,
    pub bytes: usize,
    /// Encoded bytes over original 8-bit samples.
    pub compression_ratio: f64,
    /// Normalized ℓ2-dissimilarity of the decompressed image.
    pub dissimilarity: f64,
    pub tolerance_used: Option<f64>,
    pub attempts: usize,
    pub target_met: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompressItem {
    pub input: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub stats: Option<CompressStats>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<CompressTimings>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompressSummary {
    pub total: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub mean_compression_ratio: Option<f64>,
    pub mean_dissimilarity: Option<f64>,
}

fn output_path(input: &Path, dir: Option<&Path>, ext: &str) -> PathBuf {
    match dir {
        Some(d) => d
            .join(input.file_stem().unwrap_or_default())
            .with_extension(ext),
        None => input.with_extension(ext),
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn compress_one(
    input: &Path,
    out: &Path,
    cfg: &RunConfig,
) -> Result<(CompressStats, CompressTimings), CliError> {
    let image = load_image(input)?;
    let t = image_to_rcw(&image)?;
    let c = compress_tensor(&t, cfg)?;
    std::fs::write(out, &c.bytes).map_err(|e| CliError::io(out, e))?;
    let layout = &c.quantized.layout;
    let stats = CompressStats {
        output: display(out),
        format: layout.format,
        shape: layout.shape.clone(),
        ranks: layout.ranks.clone(),
        storage_count: c.quantized.code_count(),
        bytes: c.bytes.len(),
        compression_ratio: c.bytes.len() as f64 / t.len() as f64,
        dissimilarity: c.relative_error,
        tolerance_used: c.tolerance_used,
        attempts: c.attempts,
        target_met: c.target_met,
    };
    Ok((stats, c.timings))
}

pub fn compress(
    inputs: &[PathBuf],
    output_dir: Option<&Path>,
    cfg: &RunConfig,
    opts: BatchOptions,
) -> Result<Report<CompressItem, CompressSummary>, CliError> {
    require_inputs(inputs)?;
    if let Some(d) = output_dir {
        std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }
    let items = run_batch(opts.jobs, inputs, |input| {
        let out = output_path(input, output_dir, "tnz");
        match compress_one(input, &out, cfg) {
            Ok((stats, timings)) => {
                let mut warnings = Vec::new();
                if !stats.target_met {
                    warnings.push(format!(
                        "error {:.4} exceeds target {} after {} attempts",
                        stats.dissimilarity,
                        cfg.effective_tolerance(),
                        stats.attempts
                    ));
                }
                CompressItem {
                    input: display(input),
                    status: Status::Ok,
                    error: None,
                    stats: Some(stats),
                    warnings,
                    timings_ms: opts.timings.then_some(timings),
                }
            }
            Err(e) => CompressItem {
                input: display(input),
                status: Status::Failed,
                error: Some(e.to_string()),
                stats: None,
                warnings: Vec::new(),
                timings_ms: None,
            },
        }
    })?;
    let ok = || items.iter().filter_map(|i| i.stats.as_ref());
    let summary = CompressSummary {
        total: items.len(),
        succeeded: ok().count(),
        failed: items.len() - ok().count(),
        mean_compression_ratio: mean(ok().map(|s| s.compression_ratio)),
        mean_dissimilarity: mean(ok().map(|s| s.dissimilarity)),
    };
    Ok(Report::new("compress", cfg, items, summary))
}

// -------------------------------------------------------------- decompress

/// Reads a TNZ file and returns its network and the reconstruction in image
/// layout.
pub fn read_tnz(path: &Path) -> Result<(QuantizedNetwork, DenseTensor), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let q = tnz::decode(&bytes)?;
    let t = q.dequantize()?.reconstruct()?;
    Ok((q, rcw_to_image(&t)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompressStats {
    pub output: String,
    pub format: NetworkFormat,
    pub shape: Vec<usize>,
    pub ranks: Vec<usize>,
    /// Against the reference image, when one was given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dissimilarity: Option<f64>,
    /// Same, after rounding to 8-bit pixels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saved_dissimilarity: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompressItem {
    pub input: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub stats: Option<DecompressStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CountSummary {
    pub total: usize,
    pub succeeded: usize,
    pub failed: usize,
}

fn decompress_one(
    input: &Path,
    out: &Path,
    reference: Option<&Path>,
) -> Result<DecompressStats, CliError> {
    let (q, image) = read_tnz(input)?;
    save_image(out, &image)?;
    let (mut dissimilarity, mut saved_dissimilarity) = (None, None);
    if let Some(r) = reference {
        let original = load_image(r)?;
        dissimilarity = Some(normalized_l2_dissimilarity(
            std::slice::from_ref(&original),
            std::slice::from_ref(&image),
        )?);
        let saved = load_image(out)?;
        saved_dissimilarity = Some(normalized_l2_dissimilarity(&[original], &[saved])?);
    }
    Ok(DecompressStats {
        output: display(out),
        format: q.layout.format,
        shape: q.layout.shape.clone(),
        ranks: q.layout.ranks.clone(),
        dissimilarity,
        saved_dissimilarity,
    })
}

pub fn decompress(
    inputs: &[PathBuf],
    output_dir: Option<&Path>,
    references: Option<&[PathBuf]>,
    cfg: &RunConfig,
    opts: BatchOptions,
) -> Result<Report<DecompressItem, CountSummary>, CliError> {
    require_inputs(inputs)?;
    if let Some(r) = references {
        if r.len() != inputs.len() {
            return Err(CliError::Usage(format!(
                "{} reference images for {} inputs",
                r.len(),
                inputs.len()
            )));
        }
    }
    if let Some(d) = output_dir {
        std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }
    let indexed: Vec<usize> = (0..inputs.len()).collect();
    let items = run_batch(opts.jobs, &indexed, |&i| {
        let input = &inputs[i];
        let clock = Instant::now();
        let out = output_path(input, output_dir, "png");
        let reference = references.map(|r| r[i].as_path());
        let result = decompress_one(input, &out, reference);
        let ms = elapsed_ms(clock);
        match result {
            Ok(stats) => DecompressItem {
                input: display(input),
                status: Status::Ok,
                error: None,
                stats: Some(stats),
                timings_ms: opts.timings.then_some(ms),
            },
            Err(e) => DecompressItem {
                input: display(input),
                status: Status::Failed,
                error: Some(e.to_string()),
                stats: None,
                timings_ms: None,
            },
        }
    })?;
    let succeeded = items.iter().filter(|i| i.status == Status::Ok).count();
    let summary = CountSummary {
        total: items.len(),
        succeeded,
        failed: items.len() - succeeded,
    };
    Ok(Report::new("decompress", cfg, items, summary))
}

// ----------------------------------------------------------------- analyze

#[derive(Debug, Clone, Serialize)]
pub struct NmiMatrix {
    pub bins: usize,
    pub subtensor_lengths: Vec<usize>,
    /// Symmetric, row-major over subtensors in canonical order.
    pub values: Vec<Vec<f64>>,
    /// Pairs where one side is constant (entropy zero).
    pub degenerate_pairs: Vec<(usize, usize)>,
}

/// Pairwise NMI between all subtensors of `net`.
pub fn nmi_matrix(net: &TensorNetwork, bins: usize) -> Result<NmiMatrix, CliError> {
    let subs = net.subtensors();
    let n = subs.len();
    let mut values = vec![vec![0.0; n]; n];
    let mut degenerate_pairs = Vec::new();
    for i in 0..n {
        for j in i..n {
            let r = nmi(subs[i], subs[j], bins)?;
            values[i][j] = r.value;
            values[j][i] = r.value;
            if r.degenerate {
                degenerate_pairs.push((i, j));
            }
        }
    }
    Ok(NmiMatrix {
        bins,
        subtensor_lengths: subs.iter().map(|s| s.len()).collect(),
        values,
        degenerate_pairs,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeStats {
    pub shape: Vec<usize>,
    /// `None` when the spectrum is too short or flat for a fit.
    pub slope: Option<SlopeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectra: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmi: Option<NmiMatrix>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeItem {
    pub input: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub stats: Option<AnalyzeStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeSummary {
    pub total: usize,
    pub failed: usize,
    /// Inputs whose slope is defined.
    pub slopes: usize,
    pub mean_slope: Option<f64>,
    /// Population standard deviation of the per-input mean slopes.
    pub population_std: Option<f64>,
}

fn analyze_one(input: &Path, with_nmi: bool, cfg: &RunConfig) -> Result<AnalyzeStats, CliError> {
    let (t, net) = if is_tnz(input) {
        let bytes = std::fs::read(input).map_err(|e| CliError::io(input, e))?;
        let net = tnz::decode(&bytes)?.dequantize()?;
        (net.reconstruct()?, Some(net))
    } else {
        (image_to_rcw(&load_image(input)?)?, None)
    };
    let (slope, slope_error) = match tt_svd_slope(&t) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let spectra = if cfg.analysis.spectra {
        Some(tt_svd_traced(&t, &RankPolicy::exact(), None)?.spectra)
    } else {
        None
    };
    let nmi = if with_nmi {
        let net = match net {
            Some(n) => n,
            None => decompose(&t, cfg, cfg.effective_tolerance())?,
        };
        Some(nmi_matrix(&net, cfg.analysis.nmi_bins)?)
    } else {
        None
    };
    Ok(AnalyzeStats {
        shape: t.shape().to_vec(),
        slope,
        slope_error,
        spectra,
        nmi,
    })
}

pub fn analyze(
    inputs: &[PathBuf],
    with_nmi: bool,
    cfg: &RunConfig,
    opts: BatchOptions,
) -> Result<Report<AnalyzeItem, AnalyzeSummary>, CliError> {
    require_inputs(inputs)?;
    let items = run_batch(opts.jobs, inputs, |input| {
        let clock = Instant::now();
        let result = analyze_one(input, with_nmi, cfg);
        let ms = elapsed_ms(clock);
        match result {
            Ok(stats) => AnalyzeItem {
                input: display(input),
                status: Status::Ok,
                error: None,
                stats: Some(stats),
                timings_ms: opts.timings.then_some(ms),
            },
            Err(e) => AnalyzeItem {
                input: display(input),
                status: Status::Failed,
                error: Some(e.to_string()),
                stats: None,
                timings_ms: None,
            },
        }
    })?;
    let slopes: Vec<f64> = items
        .iter()
        .filter_map(|i| i.stats.as_ref()?.slope.as_ref().map(|s| s.mean_slope))
        .collect();
    let mean_slope = mean(slopes.iter().copied());
    let population_std = mean_slope.map(|m| {
        (slopes.iter().map(|s| (s - m).powi(2)).sum::<f64>() / slopes.len() as f64).sqrt()
    });
    let summary = AnalyzeSummary {
        total: items.len(),
        failed: items.iter().filter(|i| i.status == Status::Failed).count(),
        slopes: slopes.len(),
        mean_slope,
        population_std,
    };
    Ok(Report::new("analyze", cfg, items, summary))
}

// ------------------------------------------------------------------ detect

#[derive(Debug, Clone, Serialize)]
pub struct DetectStats {
    #[serde(flatten)]
    pub verdict: DetectionVerdict,
    /// Normalized ℓ2-dissimilarity between the input and its baseline.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbation_dissimilarity: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectItem {
    pub input: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub stats: Option<DetectStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectSummary {
    pub total: usize,
    pub eligible: usize,
    pub flagged: usize,
    pub not_flagged: usize,
    pub ineligible: usize,
    pub failed: usize,
}

fn detect_one(
    input: &Path,
    baseline: Option<&Path>,
    cfg: &RunConfig,
) -> Result<DetectStats, CliError> {
    let image = load_image(input)?;
    let t = image_to_rcw(&image)?;
    let base = baseline.map(load_image).transpose()?;
    let base_rcw = base.as_ref().map(image_to_rcw).transpose()?;
    let verdict = detect_image(&t, &cfg.detection, base_rcw.as_ref())?;
    let perturbation_dissimilarity = match &base {
        Some(b) if b.shape() == image.shape() => {
            normalized_l2_dissimilarity(std::slice::from_ref(b), &[image]).ok()
        }
        _ => None,
    };
    Ok(DetectStats {
        verdict,
        perturbation_dissimilarity,
    })
}

pub fn detect(
    inputs: &[PathBuf],
    baselines: Option<&[PathBuf]>,
    cfg: &RunConfig,
    opts: BatchOptions,
) -> Result<Report<DetectItem, DetectSummary>, CliError> {
    require_inputs(inputs)?;
    if let Some(b) = baselines {
        if b.len() != inputs.len() {
            return Err(CliError::Usage(format!(
                "{} baselines for {} inputs (pair them in order)",
                b.len(),
                inputs.len()
            )));
        }
    }
    let indexed: Vec<usize> = (0..inputs.len()).collect();
    let items = run_batch(opts.jobs, &indexed, |&i| {
        let input = &inputs[i];
        let baseline = baselines.map(|b| b[i].as_path());
        let clock = Instant::now();
        let result = detect_one(input, baseline, cfg);
        let ms = elapsed_ms(clock);
        let (status, error, stats) = match result {
            Ok(s) => (Status::Ok, None, Some(s)),
            Err(e) => (Status::Failed, Some(e.to_string()), None),
        };
        DetectItem {
            input: display(input),
            baseline: baseline.map(display),
            status,
            error,
            timings_ms: (opts.timings && stats.is_some()).then_some(ms),
            stats,
        }
    })?;
    let verdicts: Vec<&DetectionVerdict> = items
        .iter()
        .filter_map(|i| i.stats.as_ref().map(|s| &s.verdict))
        .collect();
    let eligible = verdicts.iter().filter(|v| v.eligible).count();
    let flagged = verdicts.iter().filter(|v| v.flagged).count();
    let summary = DetectSummary {
        total: items.len(),
        eligible,
        flagged,
        not_flagged: eligible - flagged,
        ineligible: verdicts.len() - eligible,
        failed: items.len() - verdicts.len(),
    };
    Ok(Report::new("detect", cfg, items, summary))
}

impl DetectSummary {
    pub fn human(&self) -> String {
        format!(
            "{} images: {} eligible ({} flagged, {} clean), {} ineligible, {} failed",
            self.total, self.eligible, self.flagged, self.not_flagged, self.ineligible, self.failed
        )
    }
}

// ----------------------------------------------------------------- perturb

#[derive(Debug, Clone, Serialize)]
pub struct PerturbItem {
    pub level: f64,
    pub subtensor: usize,
    /// Normalized ℓ2-dissimilarity between the reconstructions before and
    /// after perturbation.
    pub distortion: f64,
    /// The payload is bitwise identical to the input.
    pub payload_equal: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbSummary {
    pub input: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub mode: PerturbMode,
    pub seed: u64,
    /// Distortion is non-decreasing in level across the sweep.
    pub monotone: bool,
}

#[derive(Debug, Clone)]
pub struct PerturbRequest<'a> {
    pub input: &'a Path,
    pub output: Option<&'a Path>,
    pub selector: SubtensorSelector,
    pub levels: &'a [f64],
    pub mode: PerturbMode,
}

pub fn perturb(
    req: &PerturbRequest<'_>,
    cfg: &RunConfig,
    opts: BatchOptions,
) -> Result<Report<PerturbItem, PerturbSummary>, CliError> {
    if req.levels.is_empty() {
        return Err(CliError::Usage("no perturbation levels given".into()));
    }
    if req.output.is_some() && req.levels.len() > 1 {
        return Err(CliError::Usage("--output needs a single --level".into()));
    }
    if let Some(l) = req.levels.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(CliError::Usage(format!(
            "perturbation level must be >= 0, got {l}"
        )));
    }
    let bytes = std::fs::read(req.input).map_err(|e| CliError::io(req.input, e))?;
    let q = tnz::decode(&bytes)?;
    let original = q.dequantize()?.reconstruct()?;
    // an out-of-range selector is a usage error, not a per-level failure
    tnshield_core::formats::resolve_selector(&q.dequantize()?, req.selector, cfg.seed).map_err(
        |e| match e {
            FormatError::InvalidSelector { .. } => CliError::Usage(e.to_string()),
            e => e.into(),
        },
    )?;
    let results = run_batch(opts.jobs, req.levels, |&level| -> Result<_, CliError> {
        let (p, index) = perturb_quantized(
            &q,
            req.selector,
            level,
            req.mode,
            cfg.seed,
            &cfg.quantizer.lloyd,
        )?;
        let rec = p.dequantize()?.reconstruct()?;
        let item = PerturbItem {
            level,
            subtensor: index,
            distortion: relative_error(&original, &rec),
            payload_equal: p == q,
        };
        Ok((item, p))
    })?
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    if let Some(out) = req.output {
        let encoded = tnz::encode(&results[0].1);
        std::fs::write(out, encoded).map_err(|e| CliError::io(out, e))?;
    }
    let items: Vec<PerturbItem> = results.into_iter().map(|(i, _)| i).collect();
    let mut by_level: Vec<&PerturbItem> = items.iter().collect();
    by_level.sort_by(|a, b| a.level.total_cmp(&b.level));
    let summary = PerturbSummary {
        input: display(req.input),
        output: req.output.map(display),
        mode: req.mode,
        seed: cfg.seed,
        monotone: by_level
            .windows(2)
            .all(|w| w[1].distortion >= w[0].distortion),
    };
    Ok(Report::new("perturb", cfg, items, summary))
}
