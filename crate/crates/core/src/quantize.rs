//! 8-bit scalar quantization of tensor-network subtensors.
//!
//! Two codebooks are available: a uniform grid of 256 levels over
//! `[min, max]`, and a Lloyd-Max codebook trained from that grid. Heavy-tailed
//! subtensors (excess kurtosis above 1) default to Lloyd-Max.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::formats::{
    perturb_subtensor, resolve_selector, FormatError, NetworkLayout, PerturbMode,
    SubtensorSelector, TensorNetwork,
};
use crate::tensor::DenseTensor;

pub const LEVELS: usize = 256;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum QuantizeError {
    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("{0} quantizer overrides for {1} subtensors")]
    OverrideCount(usize, usize),

    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Codebook {
    /// Level `k` is `min + k·step`. A zero step encodes a constant array.
    Uniform { min: f64, step: f64 },
    /// Strictly increasing reproduction levels (at most 256).
    Lloyd { levels: Vec<f64>, iterations: u32 },
}

impl Codebook {
    pub fn kind(&self) -> QuantizerKind {
        match self {
            Codebook::Uniform { .. } => QuantizerKind::Uniform,
            Codebook::Lloyd { .. } => QuantizerKind::Lloyd,
        }
    }

    pub fn level(&self, code: u8) -> f64 {
        match self {
            Codebook::Uniform { min, step } => min + f64::from(code) * step,
            Codebook::Lloyd { levels, .. } => levels[code as usize],
        }
    }

    pub fn level_count(&self) -> usize {
        match self {
            Codebook::Uniform { .. } => LEVELS,
            Codebook::Lloyd { levels, .. } => levels.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizerKind {
    Uniform,
    Lloyd,
}

/// One code per scalar plus the codebook that maps codes back to values.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedArray {
    pub codes: Vec<u8>,
    pub codebook: Codebook,
}

impl QuantizedArray {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

fn check_finite(x: &[f64]) -> Result<(), QuantizeError> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(QuantizeError::NonFinite(i)),
        None => Ok(()),
    }
}

fn range(x: &[f64]) -> (f64, f64) {
    x.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// 256 equal steps over `[min, max]`; every element lands within half a step.
pub fn quantize_uniform(x: &[f64]) -> Result<QuantizedArray, QuantizeError> {
    check_finite(x)?;
    if x.is_empty() {
        return Ok(QuantizedArray {
            codes: Vec::new(),
            codebook: Codebook::Uniform {
                min: 0.0,
                step: 0.0,
            },
        });
    }
    let (min, max) = range(x);
    let step = (max - min) / (LEVELS - 1) as f64;
    let codebook = Codebook::Uniform { min, step };
    if step == 0.0 {
        return Ok(QuantizedArray {
            codes: vec![0; x.len()],
            codebook,
        });
    }
    let codes = x
        .iter()
        .map(|&v| {
            let k = ((v - min) / step).round().clamp(0.0, 255.0) as u8;
            // the neighbours can win by an ulp after rounding the grid point
            let mut best = k;
            let mut err = (v - codebook.level(k)).abs();
            for c in [k.saturating_sub(1), k.saturating_add(1)] {
                let e = (v - codebook.level(c)).abs();
                if e < err {
                    best = c;
                    err = e;
                }
            }
            best
        })
        .collect();
    Ok(QuantizedArray { codes, codebook })
}

/// Result of Lloyd-Max training.
#[derive(Debug, Clone, PartialEq)]
pub struct LloydTrace {
    pub quantized: QuantizedArray,
    /// Mean squared distortion after each assignment step.
    pub distortion: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LloydOptions {
    pub max_iter: usize,
    /// Stop once the relative distortion improvement drops below this.
    pub tol: f64,
}

impl Default for LloydOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

/// Index of the nearest level; `levels` must be sorted ascending.
fn nearest(levels: &[f64], v: f64) -> usize {
    let i = levels.partition_point(|&l| l < v);
    if i == 0 {
        0
    } else if i == levels.len() {
        levels.len() - 1
    } else if v - levels[i - 1] <= levels[i] - v {
        i - 1
    } else {
        i
    }
}

pub fn quantize_lloyd(x: &[f64], opts: &LloydOptions) -> Result<QuantizedArray, QuantizeError> {
    Ok(quantize_lloyd_traced(x, opts)?.quantized)
}

/// Lloyd-Max iteration from the uniform grid.
///
/// Arrays with at most 256 distinct values are coded exactly with a codebook
/// of those values. Empty cells keep their level; coinciding levels are
/// merged, so the trained codebook may hold fewer than 256 levels.
pub fn quantize_lloyd_traced(x: &[f64], opts: &LloydOptions) -> Result<LloydTrace, QuantizeError> {
    check_finite(x)?;
    let mut distinct = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() <= LEVELS {
        let codes = x.iter().map(|&v| nearest(&distinct, v) as u8).collect();
        let levels = if distinct.is_empty() {
            vec![0.0]
        } else {
            distinct
        };
        return Ok(LloydTrace {
            quantized: QuantizedArray {
                codes,
                codebook: Codebook::Lloyd {
                    levels,
                    iterations: 0,
                },
            },
            distortion: vec![0.0],
        });
    }

    let (min, max) = range(x);
    let step = (max - min) / (LEVELS - 1) as f64;
    let mut levels: Vec<f64> = (0..LEVELS).map(|k| min + k as f64 * step).collect();
    let mut assign = vec![0usize; x.len()];
    let mut history = Vec::new();
    for _ in 0..opts.max_iter.max(1) {
        let mut d = 0.0;
        for (a, &v) in assign.iter_mut().zip(x) {
            *a = nearest(&levels, v);
            d += (v - levels[*a]).powi(2);
        }
        let d = d / x.len() as f64;
        let converged = match history.last() {
            Some(&prev) => prev == 0.0 || (prev - d) / prev < opts.tol,
            None => d == 0.0,
        };
        history.push(d);
        if converged || history.len() == opts.max_iter.max(1) {
            break;
        }
        let mut sum = vec![0.0; levels.len()];
        let mut count = vec![0usize; levels.len()];
        for (&a, &v) in assign.iter().zip(x) {
            sum[a] += v;
            count[a] += 1;
        }
        for k in 0..levels.len() {
            if count[k] > 0 {
                levels[k] = sum[k] / count[k] as f64;
            }
        }
        levels.sort_by(f64::total_cmp);
        levels.dedup();
    }
    let codes = assign.iter().map(|&a| a as u8).collect();
    Ok(LloydTrace {
        quantized: QuantizedArray {
            codes,
            codebook: Codebook::Lloyd {
                levels,
                iterations: history.len() as u32,
            },
        },
        distortion: history,
    })
}

pub fn dequantize(q: &QuantizedArray) -> Vec<f64> {
    q.codes.iter().map(|&c| q.codebook.level(c)).collect()
}

/// Mean squared roundtrip error.
pub fn distortion(x: &[f64], q: &QuantizedArray) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter()
        .zip(&q.codes)
        .map(|(v, &c)| (v - q.codebook.level(c)).powi(2))
        .sum::<f64>()
        / x.len() as f64
}

/// Sample excess kurtosis `m4/m2² − 3`; zero for constant or empty input.
pub fn excess_kurtosis(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (m2, m4) = x.iter().fold((0.0, 0.0), |(a, b), v| {
        let d2 = (v - mean).powi(2);
        (a + d2, b + d2 * d2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 == 0.0 {
        0.0
    } else {
        m4 / (m2 * m2) - 3.0
    }
}

/// Lloyd-Max when the data is heavy tailed, uniform otherwise.
pub fn choose_quantizer(x: &[f64]) -> QuantizerKind {
    if excess_kurtosis(x) > 1.0 {
        QuantizerKind::Lloyd
    } else {
        QuantizerKind::Uniform
    }
}

/// Quantizer selection for every subtensor of a network.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizerPlan {
    /// Per-subtensor override (`None` keeps the kurtosis heuristic). Empty
    /// means no overrides.
    pub overrides: Vec<Option<QuantizerKind>>,
    /// Applied to every subtensor when no per-subtensor override is given.
    pub force: Option<QuantizerKind>,
    pub lloyd: LloydOptions,
}

impl QuantizerPlan {
    fn kind_for(&self, index: usize, x: &[f64]) -> QuantizerKind {
        self.overrides
            .get(index)
            .copied()
            .flatten()
            .or(self.force)
            .unwrap_or_else(|| choose_quantizer(x))
    }
}

pub fn quantize_array(
    x: &[f64],
    kind: QuantizerKind,
    lloyd: &LloydOptions,
) -> Result<QuantizedArray, QuantizeError> {
    match kind {
        QuantizerKind::Uniform => quantize_uniform(x),
        QuantizerKind::Lloyd => quantize_lloyd(x, lloyd),
    }
}

/// A network with every subtensor coded to 8 bits.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedNetwork {
    pub layout: NetworkLayout,
    pub blocks: Vec<QuantizedArray>,
}

impl QuantizedNetwork {
    /// Number of coded scalars; equals the layout's storage count.
    pub fn code_count(&self) -> usize {
        self.blocks.iter().map(QuantizedArray::len).sum()
    }

    pub fn dequantize(&self) -> Result<TensorNetwork, QuantizeError> {
        let parts = self.blocks.iter().map(dequantize).collect();
        Ok(TensorNetwork::from_parts(&self.layout, parts)?)
    }
}

pub fn quantize_network(
    net: &TensorNetwork,
    plan: &QuantizerPlan,
) -> Result<QuantizedNetwork, QuantizeError> {
    let subs = net.subtensors();
    if !plan.overrides.is_empty() && plan.overrides.len() != subs.len() {
        return Err(QuantizeError::OverrideCount(
            plan.overrides.len(),
            subs.len(),
        ));
    }
    let blocks = subs
        .iter()
        .enumerate()
        .map(|(i, x)| quantize_array(x, plan.kind_for(i, x), &plan.lloyd))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QuantizedNetwork {
        layout: net.layout(),
        blocks,
    })
}

/// Serialized size over the original element count, counting one byte per
/// original 8-bit channel value.
pub fn compression_ratio(q: &QuantizedNetwork, original: &DenseTensor) -> f64 {
    crate::tnz::encoded_len(q) as f64 / original.len() as f64
}

/// Perturbs one block of a quantized network; returns the new network and
/// the index of the perturbed block. Every other block is copied bitwise.
///
/// Additive noise acts on the dequantized values, and the block is then
/// re-coded with its original quantizer kind (level 0 is a bitwise copy).
/// Shuffling permutes the codes with the same stream as
/// [`perturb_subtensor`], so no re-quantization happens.
pub fn perturb_quantized(
    q: &QuantizedNetwork,
    selector: SubtensorSelector,
    noise_level: f64,
    mode: PerturbMode,
    seed: u64,
    lloyd: &LloydOptions,
) -> Result<(QuantizedNetwork, usize), QuantizeError> {
    let net = q.dequantize()?;
    let index = resolve_selector(&net, selector, seed)?;
    let mut out = q.clone();
    match mode {
        PerturbMode::AdditiveUniform if noise_level == 0.0 => {}
        PerturbMode::AdditiveUniform => {
            let p = perturb_subtensor(
                &net,
                SubtensorSelector::Index(index),
                noise_level,
                mode,
                seed,
            )?;
            let kind = q.blocks[index].codebook.kind();
            out.blocks[index] = quantize_array(p.subtensors()[index], kind, lloyd)?;
        }
        PerturbMode::RandomizeSequence => {
            out.blocks[index]
                .codes
                .shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
    }
    Ok((out, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_err(x: &[f64], q: &QuantizedArray) -> f64 {
        x.iter()
            .zip(dequantize(q))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_array_is_exact() {
        let x = vec![3.25; 40];
        let q = quantize_uniform(&x).unwrap();
        assert_eq!(max_err(&x, &q), 0.0);
    }

    #[test]
    fn grid_values_are_exact() {
        let x: Vec<f64> = (0..256).map(f64::from).collect();
        let q = quantize_uniform(&x).unwrap();
        assert_eq!(dequantize(&q), x);
        assert_eq!(q.codes[200], 200);
    }

    #[test]
    fn empty_roundtrip() {
        assert!(dequantize(&quantize_uniform(&[]).unwrap()).is_empty());
        assert!(dequantize(&quantize_lloyd(&[], &LloydOptions::default()).unwrap()).is_empty());
    }

    #[test]
    fn uniform_half_step_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..5000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q = quantize_uniform(&x).unwrap();
        let Codebook::Uniform { step, .. } = q.codebook else {
            panic!()
        };
        assert!(max_err(&x, &q) <= step / 2.0);
        assert!(max_err(&x, &q) <= 2.0 / 510.0);
    }

    #[test]
    fn lloyd_exact_on_few_distinct_values() {
        let x: Vec<f64> = (0..256)
            .map(|k| (k as f64).sqrt())
            .chain([2.0, 3.0])
            .collect();
        let q = quantize_lloyd(&x, &LloydOptions::default()).unwrap();
        assert_eq!(dequantize(&q), x);
    }

    #[test]
    fn lloyd_beats_uniform_on_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..4000)
            .map(|i| if i % 2 == 0 { 0.0 } else { 100.0 } + rng.random_range(-1.0..1.0))
            .collect();
        let u = distortion(&x, &quantize_uniform(&x).unwrap());
        let trace = quantize_lloyd_traced(&x, &LloydOptions::default()).unwrap();
        let l = distortion(&x, &trace.quantized);
        assert!(l < u, "{l} vs {u}");
        assert!((l - trace.distortion.last().unwrap()).abs() <= 1e-12 * u);
        assert!(trace.distortion.windows(2).all(|w| w[1] <= w[0]));
        if let Codebook::Lloyd { levels, .. } = &trace.quantized.codebook {
            assert!(levels.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn lloyd_close_to_uniform_on_uniform_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..20000).map(|_| rng.random_range(0.0..1.0)).collect();
        let u = distortion(&x, &quantize_uniform(&x).unwrap());
        let l = distortion(&x, &quantize_lloyd(&x, &LloydOptions::default()).unwrap());
        assert!(l <= u * 1.05);
    }

    #[test]
    fn kurtosis_selection() {
        let flat: Vec<f64> = (0..1000).map(|k| k as f64).collect();
        assert_eq!(choose_quantizer(&flat), QuantizerKind::Uniform);
        let mut spiky = vec![0.0; 1000];
        spiky[3] = 50.0;
        spiky[700] = -40.0;
        assert_eq!(choose_quantizer(&spiky), QuantizerKind::Lloyd);
        assert_eq!(excess_kurtosis(&[1.0; 5]), 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        assert_eq!(
            quantize_uniform(&[1.0, f64::NAN]),
            Err(QuantizeError::NonFinite(1))
        );
    }

    fn coded_tt() -> QuantizedNetwork {
        let t = DenseTensor::from_fn(vec![6, 3, 5], |i| {
            (i[0] as f64 * 0.9).cos() * 30.0 + i[1] as f64 * 4.0 - (i[2] as f64).powi(2)
        })
        .unwrap();
        let net = TensorNetwork::Tt(
            crate::formats::tt_svd(&t, &crate::formats::RankPolicy::exact(), None).unwrap(),
        );
        quantize_network(&net, &QuantizerPlan::default()).unwrap()
    }

    #[test]
    fn perturb_quantized_level_zero_is_bitwise_copy() {
        let q = coded_tt();
        let (p, i) = perturb_quantized(
            &q,
            SubtensorSelector::Random,
            0.0,
            PerturbMode::AdditiveUniform,
            9,
            &LloydOptions::default(),
        )
        .unwrap();
        assert!(i < q.blocks.len());
        assert_eq!(p, q);
    }

    #[test]
    fn perturb_quantized_touches_one_block() {
        let q = coded_tt();
        let (p, i) = perturb_quantized(
            &q,
            SubtensorSelector::Index(1),
            0.3,
            PerturbMode::AdditiveUniform,
            4,
            &LloydOptions::default(),
        )
        .unwrap();
        assert_eq!(i, 1);
        for (k, (a, b)) in q.blocks.iter().zip(&p.blocks).enumerate() {
            assert_eq!(a == b, k != 1, "block {k}");
        }
        assert_eq!(p.blocks[1].codebook.kind(), q.blocks[1].codebook.kind());
    }

    #[test]
    fn perturb_quantized_shuffle_matches_value_shuffle() {
        let q = coded_tt();
        let mode = PerturbMode::RandomizeSequence;
        let (p, i) = perturb_quantized(
            &q,
            SubtensorSelector::Index(2),
            1.0,
            mode,
            11,
            &LloydOptions::default(),
        )
        .unwrap();
        let reference = perturb_subtensor(
            &q.dequantize().unwrap(),
            SubtensorSelector::Index(i),
            1.0,
            mode,
            11,
        )
        .unwrap();
        assert_eq!(p.dequantize().unwrap(), reference);
    }

    #[test]
    fn perturb_quantized_bad_selector() {
        let q = coded_tt();
        let r = perturb_quantized(
            &q,
            SubtensorSelector::Index(3),
            0.1,
            PerturbMode::AdditiveUniform,
            0,
            &LloydOptions::default(),
        );
        assert!(matches!(
            r,
            Err(QuantizeError::Format(FormatError::InvalidSelector {
                index: 3,
                count: 3
            }))
        ));
    }
}
