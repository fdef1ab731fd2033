//! Evaluation metrics and the analytic convolution cost model.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use crate::checkpoint::load_checkpoint;
use crate::conv::conv_macs;
use crate::dataset::DatasetIndex;
use crate::error::{Error, Result};
use crate::imageio::load_image;
use crate::loss::ssim;
use crate::model::{ModelConfig, SinetParams, Variant, PLAIN_LAYERS};
use crate::scalar::Real;
use crate::tensor::Tensor3;

/// Returned for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

/// `10·log10(peak² / MSE)` over all channels jointly.
pub fn psnr<T: Real>(a: &Tensor3<T>, b: &Tensor3<T>, peak: f64) -> Result<f64> {
    a.check_same_shape(b, "psnr")?;
    let sq = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |acc, (&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            acc + d * d
        });
    let mse = sq / a.len() as f64;
    Ok(psnr_from_mse(mse, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetric {
    pub image: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub images: Vec<ImageMetric>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    /// Sources skipped for lack of a reference.
    pub skipped: Vec<String>,
}

impl MetricReport {
    pub fn from_images(mut images: Vec<ImageMetric>, skipped: Vec<String>) -> Self {
        images.sort_by(|a, b| a.image.cmp(&b.image));
        let n = images.len().max(1) as f64;
        let mean_psnr_db = images.iter().map(|m| m.psnr_db).sum::<f64>() / n;
        let mean_ssim = images.iter().map(|m| m.ssim).sum::<f64>() / n;
        Self {
            images,
            mean_psnr_db,
            mean_ssim,
            skipped,
        }
    }

    /// Header `image,psnr_db,ssim`, then one row per image.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,psnr_db,ssim\n");
        for m in &self.images {
            s.push_str(&format!("{},{},{}\n", m.image, m.psnr_db, m.ssim));
        }
        s
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.images {
            writeln!(f, "image {} psnr {:.4} ssim {:.6}", m.image, m.psnr_db, m.ssim)?;
        }
        for s in &self.skipped {
            writeln!(f, "skipped {s} (no reference)")?;
        }
        write!(
            f,
            "mean psnr {:.4} ssim {:.6} over {} images",
            self.mean_psnr_db,
            self.mean_ssim,
            self.images.len()
        )
    }
}

/// Enhanced output (clamped to `[0, 1]`) compared against `reference`.
pub fn evaluate_image<T: Real>(
    params: &SinetParams<T>,
    name: &str,
    source: &Tensor3<T>,
    reference: &Tensor3<T>,
) -> Result<ImageMetric> {
    let enhanced = params.infer(source)?.clamp_unit();
    Ok(ImageMetric {
        image: name.to_string(),
        psnr_db: psnr(&enhanced, reference, 1.0)?,
        ssim: ssim(&enhanced, reference)?.as_f64(),
    })
}

pub fn evaluate_index(params: &SinetParams<f32>, index: &DatasetIndex) -> Result<MetricReport> {
    let skipped: Vec<String> = index
        .unpaired_sources()
        .into_iter()
        .map(|p| {
            log::warn!("skipping {}: no reference image", p.display());
            p.display().to_string()
        })
        .collect();
    let pairs = index.complete_pairs();
    if pairs.is_empty() {
        return Err(Error::Dataset("no paired images to evaluate".into()));
    }
    let images = pairs
        .par_iter()
        .map(|(stem, src, rf)| {
            let s: Tensor3<f32> = load_image(src)?;
            let r: Tensor3<f32> = load_image(rf)?;
            if !s.same_shape(&r) {
                return Err(Error::Dataset(format!("{stem}: source and reference differ in size")));
            }
            evaluate_image(params, stem, &s, &r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_images(images, skipped))
}

/// Loads a checkpoint and evaluates it on `<dir>/raw` vs `<dir>/reference`.
pub fn evaluate_dir(checkpoint: &Path, dataset_dir: &Path) -> Result<MetricReport> {
    let params: SinetParams<f32> = load_checkpoint(checkpoint)?;
    let index = DatasetIndex::scan(dataset_dir)?;
    evaluate_index(&params, &index)
}

/// One convolution executed by a forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopsEstimate {
    pub height: usize,
    pub width: usize,
    pub layers: Vec<LayerCost>,
    /// Sum of convolution MACs.
    pub macs: u64,
    /// `2 × macs`.
    pub flops: u64,
    /// Bias adds, residual add/subtract and shrinkage evaluations.
    pub elementwise_ops: u64,
}

impl fmt::Display for FlopsEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "resolution {}x{}", self.width, self.height)?;
        writeln!(f, "conv layers {}", self.layers.len())?;
        writeln!(f, "MACs {}", self.macs)?;
        writeln!(f, "FLOPs {} ({:.3} G, 2 x MACs)", self.flops, self.flops as f64 / 1e9)?;
        write!(f, "elementwise ops {}", self.elementwise_ops)
    }
}

/// Convolutions executed by one sparse block: iteration 0 applies only the
/// input projection; later iterations add `W_d` and `W_u`. A tied block
/// computes its input projection once.
pub fn sparse_block_layers(
    c: usize,
    k: usize,
    ks: usize,
    iterations: usize,
    tied: bool,
    h: usize,
    w: usize,
    prefix: &str,
) -> Vec<LayerCost> {
    let mut layers = Vec::new();
    let mut push = |name: String, cin: usize, cout: usize| {
        layers.push(LayerCost {
            name,
            in_channels: cin,
            out_channels: cout,
            macs: conv_macs(h, w, cin, cout, ks),
        })
    };
    if tied && iterations > 0 {
        push(format!("{prefix}.w_u(input)"), c, k);
    }
    for it in 0..iterations {
        if !tied {
            push(format!("{prefix}.iter{it}.w_in"), c, k);
        }
        if it > 0 {
            push(format!("{prefix}.iter{it}.w_d"), k, c);
            push(format!("{prefix}.iter{it}.w_u"), c, k);
        }
    }
    layers
}

/// Multiply-accumulate count for one forward pass on an `height × width`
/// image.
pub fn flops_estimate(config: &ModelConfig, height: usize, width: usize) -> FlopsEstimate {
    let (h, w) = (height, width);
    let k = config.k_filters;
    let ks = config.kernel_size;
    let t = config.iterations;
    let variant = config.variant;
    let c = variant.branch_channels();
    let hw = (h * w) as u64;
    let mut layers = Vec::new();
    let mut elementwise = 0u64;
    for b in 0..variant.branch_count() {
        let prefix = format!("branch{b}");
        match variant {
            Variant::Ds1PlainConvs => {
                for l in 0..PLAIN_LAYERS {
                    let cin = if l == 0 { c } else { k };
                    layers.push(LayerCost {
                        name: format!("{prefix}.plain{l}"),
                        in_channels: cin,
                        out_channels: k,
                        macs: conv_macs(h, w, cin, k, ks),
                    });
                    elementwise += hw * k as u64;
                }
            }
            _ => {
                let tied = variant == Variant::Ds2TiedLcsc;
                layers.extend(sparse_block_layers(c, k, ks, t, tied, h, w, &prefix));
                // shrinkage each iteration; residual add and subtract after the first
                elementwise += hw * k as u64 * (t as u64 + 2 * t.saturating_sub(1) as u64);
            }
        }
        layers.push(LayerCost {
            name: format!("{prefix}.recon"),
            in_channels: k,
            out_channels: c,
            macs: conv_macs(h, w, k, c, ks),
        });
        elementwise += hw * c as u64;
    }
    let macs = layers.iter().map(|l| l.macs).sum();
    FlopsEstimate {
        height,
        width,
        layers,
        macs,
        flops: 2 * macs,
        elementwise_ops: elementwise,
    }
}
