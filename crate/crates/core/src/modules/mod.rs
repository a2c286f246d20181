//! The operator pool: reference implementations of every ISP algorithm the
//! search can choose from, each described by a [`ModuleDescriptor`].
//!
//! Parameters always travel in normalised `[0, 1]` space ([`ParamVector`])
//! and are mapped affinely onto each parameter's physical range when an
//! operator runs.

pub mod bm3d;
pub mod demosaic;
pub mod denoise;
mod differentiable;
pub mod learned;
pub mod tone;
pub mod white_balance;

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

pub use differentiable::{AnalyticCache, AnalyticOp};
pub use learned::{LearnedKind, LearnedModules};

use crate::error::{Error, Result};
use crate::image::{Domain, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleId {
    BilateralBayer,
    MedianBayer,
    NlmBayer,
    LearnedBayerDenoiser,
    Laplacian,
    Nearest,
    Bilinear,
    LearnedDemosaic,
    Bilateral,
    Median,
    Nlm,
    Bm3d,
    LearnedSrgbDenoiser,
    Gamma,
    Reinhard,
    Crysisengine,
    Filmic,
    Manual,
    Whitepatch,
    Grayworld,
    Linear,
    Quadratic,
    Skip,
}

impl ModuleId {
    /// The 22 algorithms of the pool, in pool order (skip excluded).
    pub const ALGORITHMS: [ModuleId; 22] = [
        ModuleId::BilateralBayer,
        ModuleId::MedianBayer,
        ModuleId::NlmBayer,
        ModuleId::LearnedBayerDenoiser,
        ModuleId::Laplacian,
        ModuleId::Nearest,
        ModuleId::Bilinear,
        ModuleId::LearnedDemosaic,
        ModuleId::Bilateral,
        ModuleId::Median,
        ModuleId::Nlm,
        ModuleId::Bm3d,
        ModuleId::LearnedSrgbDenoiser,
        ModuleId::Gamma,
        ModuleId::Reinhard,
        ModuleId::Crysisengine,
        ModuleId::Filmic,
        ModuleId::Manual,
        ModuleId::Whitepatch,
        ModuleId::Grayworld,
        ModuleId::Linear,
        ModuleId::Quadratic,
    ];

    pub fn all() -> impl Iterator<Item = ModuleId> {
        Self::ALGORITHMS.into_iter().chain(std::iter::once(ModuleId::Skip))
    }

    /// Position in the pool; used for deterministic tie-breaking.
    pub fn pool_index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleId::BilateralBayer => "bilateral_bayer",
            ModuleId::MedianBayer => "median_bayer",
            ModuleId::NlmBayer => "nlm_bayer",
            ModuleId::LearnedBayerDenoiser => "learned_bayer_denoiser",
            ModuleId::Laplacian => "laplacian",
            ModuleId::Nearest => "nearest",
            ModuleId::Bilinear => "bilinear",
            ModuleId::LearnedDemosaic => "learned_demosaic",
            ModuleId::Bilateral => "bilateral",
            ModuleId::Median => "median",
            ModuleId::Nlm => "nlm",
            ModuleId::Bm3d => "bm3d",
            ModuleId::LearnedSrgbDenoiser => "learned_srgb_denoiser",
            ModuleId::Gamma => "gamma",
            ModuleId::Reinhard => "reinhard",
            ModuleId::Crysisengine => "crysisengine",
            ModuleId::Filmic => "filmic",
            ModuleId::Manual => "manual",
            ModuleId::Whitepatch => "whitepatch",
            ModuleId::Grayworld => "grayworld",
            ModuleId::Linear => "linear",
            ModuleId::Quadratic => "quadratic",
            ModuleId::Skip => "skip",
        }
    }

    pub fn descriptor(self) -> &'static ModuleDescriptor {
        &DESCRIPTORS[self.pool_index()]
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModuleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModuleId::all()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownModule(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Denoise,
    Demosaic,
    Gamma,
    ToneMap,
    WhiteBalance,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    pub min: f32,
    pub max: f32,
    /// Default in physical units.
    pub default: f32,
}

impl ParamSpec {
    const fn new(name: &'static str, min: f32, max: f32, default: f32) -> Self {
        ParamSpec {
            name,
            min,
            max,
            default,
        }
    }

    pub fn span(&self) -> f32 {
        self.max - self.min
    }

    pub fn to_actual(&self, normalized: f32) -> f32 {
        self.min + normalized.clamp(0.0, 1.0) * self.span()
    }

    pub fn to_normalized(&self, actual: f32) -> f32 {
        ((actual - self.min) / self.span()).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModuleDescriptor {
    pub id: ModuleId,
    /// `None` for skip, which accepts any domain.
    pub domain_in: Option<Domain>,
    pub domain_out: Option<Domain>,
    pub params: Vec<ParamSpec>,
    pub differentiable: bool,
    pub needs_stats: bool,
    pub category: Category,
}

impl ModuleDescriptor {
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn needs_proxy(&self) -> bool {
        !self.differentiable
    }

    /// Output domain when fed `input`, or `None` if the module cannot run on it.
    pub fn output_domain(&self, input: Domain) -> Option<Domain> {
        match (self.domain_in, self.domain_out) {
            (None, _) => Some(input),
            (Some(i), Some(o)) if i == input => Some(o),
            _ => None,
        }
    }

    pub fn default_params(&self) -> ParamVector {
        ParamVector(self.params.iter().map(|p| p.to_normalized(p.default)).collect())
    }

    pub fn actual(&self, params: &ParamVector) -> Vec<f32> {
        self.params
            .iter()
            .zip(&params.0)
            .map(|(spec, &v)| spec.to_actual(v))
            .collect()
    }

    pub fn check_params(&self, params: &[f32]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(
                "params",
                format!(
                    "{} takes {} parameter(s), got {}",
                    self.id,
                    self.param_count(),
                    params.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Normalised parameter values in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f32>);

impl ParamVector {
    pub fn new(values: Vec<f32>) -> Self {
        ParamVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn clamp(&mut self) {
        for v in &mut self.0 {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Normalised vector whose physical values are `actual`.
    pub fn from_actual(desc: &ModuleDescriptor, actual: &[f32]) -> Result<Self> {
        desc.check_params(actual)?;
        Ok(ParamVector(
            desc.params
                .iter()
                .zip(actual)
                .map(|(spec, &a)| spec.to_normalized(a))
                .collect(),
        ))
    }
}

fn quadratic_params() -> Vec<ParamSpec> {
    const NAMES: [&str; 30] = [
        "r_r", "r_g", "r_b", "r_rr", "r_gg", "r_bb", "r_rg", "r_rb", "r_gb", "r_1", //
        "g_r", "g_g", "g_b", "g_rr", "g_gg", "g_bb", "g_rg", "g_rb", "g_gb", "g_1", //
        "b_r", "b_g", "b_b", "b_rr", "b_gg", "b_bb", "b_rg", "b_rb", "b_gb", "b_1",
    ];
    NAMES
        .iter()
        .enumerate()
        .map(|(i, &name)| {
            let (c, k) = (i / 10, i % 10);
            let default = if k == c { 1.0 } else { 0.0 };
            ParamSpec::new(name, -3.0, 3.0, default)
        })
        .collect()
}

fn build_descriptors() -> Vec<ModuleDescriptor> {
    use Category::*;
    use Domain::*;
    use ModuleId as M;

    let bilateral = || {
        vec![
            ParamSpec::new("window", 1.0, 7.0, 3.0),
            ParamSpec::new("sigma_spatial", 0.5, 3.0, 1.0),
            ParamSpec::new("sigma_range", 0.02, 0.5, 0.1),
        ]
    };
    let median = || vec![ParamSpec::new("window", 1.0, 7.0, 3.0)];
    let nlm = || {
        vec![
            ParamSpec::new("patch", 1.0, 7.0, 3.0),
            ParamSpec::new("search", 3.0, 11.0, 7.0),
            ParamSpec::new("strength", 0.01, 0.5, 0.1),
        ]
    };
    let d = |id, din, dout, category, differentiable, needs_stats, params| ModuleDescriptor {
        id,
        domain_in: din,
        domain_out: dout,
        params,
        differentiable,
        needs_stats,
        category,
    };
    let raw = Some(BayerRaw);
    let rgb = Some(Srgb);
    let descs = vec![
        d(M::BilateralBayer, raw, raw, Denoise, false, false, bilateral()),
        d(M::MedianBayer, raw, raw, Denoise, false, false, median()),
        d(M::NlmBayer, raw, raw, Denoise, false, false, nlm()),
        d(M::LearnedBayerDenoiser, raw, raw, Denoise, true, false, vec![]),
        d(M::Laplacian, raw, rgb, Demosaic, false, false, vec![]),
        d(M::Nearest, raw, rgb, Demosaic, true, false, vec![]),
        d(M::Bilinear, raw, rgb, Demosaic, true, false, vec![]),
        d(M::LearnedDemosaic, raw, rgb, Demosaic, true, false, vec![]),
        d(M::Bilateral, rgb, rgb, Denoise, false, false, bilateral()),
        d(M::Median, rgb, rgb, Denoise, false, false, median()),
        d(M::Nlm, rgb, rgb, Denoise, false, false, nlm()),
        d(
            M::Bm3d,
            rgb,
            rgb,
            Denoise,
            false,
            false,
            vec![
                ParamSpec::new("block", 2.0, 8.0, 8.0),
                ParamSpec::new("search", 4.0, 16.0, 8.0),
                ParamSpec::new("max_matched", 1.0, 16.0, 8.0),
                ParamSpec::new("threshold", 0.0, 4.0, 2.7),
                ParamSpec::new("sigma", 0.0, 0.2, 0.05),
            ],
        ),
        d(M::LearnedSrgbDenoiser, rgb, rgb, Denoise, true, false, vec![]),
        d(
            M::Gamma,
            rgb,
            rgb,
            Category::Gamma,
            true,
            false,
            vec![ParamSpec::new("gamma", 0.2, 5.0, 1.0 / 2.2)],
        ),
        d(
            M::Reinhard,
            rgb,
            rgb,
            ToneMap,
            false,
            true,
            vec![
                ParamSpec::new("key", 0.05, 1.0, 0.18),
                ParamSpec::new("white", 0.5, 8.0, 4.0),
            ],
        ),
        d(
            M::Crysisengine,
            rgb,
            rgb,
            ToneMap,
            false,
            false,
            vec![ParamSpec::new("exposure", 0.25, 16.0, 1.5)],
        ),
        d(
            M::Filmic,
            rgb,
            rgb,
            ToneMap,
            false,
            false,
            vec![
                ParamSpec::new("shoulder", 0.05, 1.0, 0.15),
                ParamSpec::new("linear", 0.1, 1.0, 0.5),
            ],
        ),
        d(
            M::Manual,
            rgb,
            rgb,
            ToneMap,
            true,
            false,
            vec![
                ParamSpec::new("knot_25", 0.0, 1.0, 0.25),
                ParamSpec::new("knot_50", 0.0, 1.0, 0.5),
                ParamSpec::new("knot_75", 0.0, 1.0, 0.75),
            ],
        ),
        d(
            M::Whitepatch,
            rgb,
            rgb,
            WhiteBalance,
            false,
            true,
            vec![ParamSpec::new("percentile", 90.0, 100.0, 99.0)],
        ),
        d(M::Grayworld, rgb, rgb, WhiteBalance, true, false, vec![]),
        d(
            M::Linear,
            rgb,
            rgb,
            WhiteBalance,
            true,
            false,
            vec![
                ParamSpec::new("gain_r", 0.25, 4.0, 1.0),
                ParamSpec::new("gain_g", 0.25, 4.0, 1.0),
                ParamSpec::new("gain_b", 0.25, 4.0, 1.0),
            ],
        ),
        d(M::Quadratic, rgb, rgb, WhiteBalance, true, false, quadratic_params()),
        d(M::Skip, None, None, Category::Skip, true, false, vec![]),
    ];
    debug_assert!(descs.iter().enumerate().all(|(i, d)| d.id.pool_index() == i));
    descs
}

static DESCRIPTORS: LazyLock<Vec<ModuleDescriptor>> = LazyLock::new(build_descriptors);

/// All 23 descriptors (22 algorithms followed by skip).
pub fn descriptors() -> &'static [ModuleDescriptor] {
    &DESCRIPTORS
}

/// Runs the reference (original, possibly non-differentiable) implementation
/// of `id`. Learned modules read their weights from `learned`.
pub fn apply_original(
    id: ModuleId,
    image: &Image,
    params: &ParamVector,
    learned: &LearnedModules,
) -> Result<Image> {
    let desc = id.descriptor();
    desc.check_params(params.as_slice())?;
    let out_domain = desc.output_domain(image.domain).ok_or_else(|| Error::Domain {
        op: id.to_string(),
        expected: desc.domain_in.unwrap_or(image.domain),
        got: image.domain,
    })?;
    let actual = desc.actual(params);
    let x = &image.tensor;
    let out = match id {
        ModuleId::BilateralBayer => denoise::per_bayer_plane(x, |p| {
            denoise::bilateral(p, actual[0], actual[1], actual[2])
        })?,
        ModuleId::MedianBayer => denoise::per_bayer_plane(x, |p| denoise::median(p, actual[0]))?,
        ModuleId::NlmBayer => denoise::per_bayer_plane(x, |p| {
            denoise::nlm(p, actual[0], actual[1], actual[2])
        })?,
        ModuleId::Bilateral => denoise::bilateral(x, actual[0], actual[1], actual[2])?,
        ModuleId::Median => denoise::median(x, actual[0])?,
        ModuleId::Nlm => denoise::nlm(x, actual[0], actual[1], actual[2])?,
        ModuleId::Bm3d => bm3d::bm3d_lite(x, &bm3d::Bm3dParams::from_actual(&actual))?,
        ModuleId::Laplacian => demosaic::laplacian(x)?,
        ModuleId::Reinhard => tone::reinhard(x, actual[0], actual[1]),
        ModuleId::Crysisengine => tone::crysisengine(x, actual[0]),
        ModuleId::Filmic => tone::filmic(x, actual[0], actual[1]),
        ModuleId::Whitepatch => white_balance::whitepatch(x, actual[0]),
        ModuleId::LearnedBayerDenoiser => learned.forward(LearnedKind::BayerDenoise, x)?,
        ModuleId::LearnedSrgbDenoiser => learned.forward(LearnedKind::SrgbDenoise, x)?,
        ModuleId::LearnedDemosaic => learned.forward(LearnedKind::Demosaic, x)?,
        ModuleId::Nearest
        | ModuleId::Bilinear
        | ModuleId::Gamma
        | ModuleId::Manual
        | ModuleId::Grayworld
        | ModuleId::Linear
        | ModuleId::Quadratic
        | ModuleId::Skip => AnalyticOp::new(id)?.apply(x, params.as_slice())?,
    };
    Image::new(out_domain, out)
}
