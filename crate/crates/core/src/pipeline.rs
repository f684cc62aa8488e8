//! End-to-end composition: explore, morph, convert, plan, verify, emit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codegen::{
    emit_kernel, lint_kernel, report::Violation, BlockConfig, KernelPlan, Report, ReportContext, Verification,
    VerificationStatus,
};
use crate::convert::{convert_with, ConvertOptions};
use crate::emu::{blob, tiled_sparse_matmul, EmulationConfig, LayoutColumns, ValuePrecision};
use crate::error::{Error, Result};
use crate::morph::{crush, flatten, MorphedLayout};
use crate::perf::{estimate, explore_layouts, Exploration, HardwareDescriptor, PerfEstimate, SearchSpace};
use crate::stencil::{direct_apply, find_preset, fuse_time_steps, Grid, StencilSpec};

/// Largest extent per axis that is verified against the direct evaluator.
pub const VERIFY_CAP: usize = 256;

/// Elementwise relative error allowed for half-precision runs.
pub const ROUND16_REL_TOL: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct CompileOptions {
    /// Fixed merge factors; explores `space` when `None`.
    pub merge: Option<(usize, usize)>,
    pub space: Option<SearchSpace>,
    pub precision: ValuePrecision,
    pub fuse: usize,
    pub block: Option<BlockConfig>,
    pub seed: u64,
    pub corrupt_permutation: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            merge: None,
            space: None,
            precision: ValuePrecision::Round16,
            fuse: 1,
            block: None,
            seed: 0,
            corrupt_permutation: false,
        }
    }
}

/// Outcome of a compile. Artifacts are present unless conversion failed.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub spec: StencilSpec,
    pub estimate: PerfEstimate,
    pub exploration: Option<Exploration>,
    pub plan: Option<KernelPlan>,
    pub verification: Verification,
    pub report: Report,
    pub kernel: Option<String>,
    pub a_blob: Option<Vec<u8>>,
    pub lut_blob: Option<Vec<u8>>,
}

impl Compiled {
    pub fn succeeded(&self) -> bool {
        matches!(self.verification.status, VerificationStatus::Verified | VerificationStatus::UnverifiedScale)
    }
}

/// Error figures of one emulated run against the direct evaluator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunErrors {
    pub max_abs: f64,
    pub max_rel: f64,
    pub issued_mma: usize,
}

impl RunErrors {
    pub fn within(&self, precision: ValuePrecision) -> bool {
        match precision {
            ValuePrecision::Exact64 => self.max_abs == 0.0,
            ValuePrecision::Round16 => self.max_rel <= ROUND16_REL_TOL,
        }
    }
}

/// Seeded test grid. Exact runs use multiples of 1/1024 in `[0, 1)` so
/// every product and sum with dyadic weights is exact in f64; half runs
/// use uniform values in `[0, 1)`.
pub fn random_grid(dims: &[usize], precision: ValuePrecision, seed: u64) -> Result<Grid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = dims.iter().product();
    let values = (0..n)
        .map(|_| match precision {
            ValuePrecision::Exact64 => rng.gen_range(0..1024) as f64 / 1024.0,
            ValuePrecision::Round16 => rng.gen_range(0.0..1.0),
        })
        .collect();
    Grid::new(dims.to_vec(), values)
}

/// Runs a converted layout on the emulator and compares against
/// `direct_apply(spec, grid, 1)`.
pub fn emulate_and_compare(
    converted: &MorphedLayout,
    plan: &KernelPlan,
    grid: &Grid,
    precision: ValuePrecision,
) -> Result<RunErrors> {
    let cfg = EmulationConfig::for_precision(precision);
    let provider = LayoutColumns::new(converted, grid)?;
    let (product, issued_mma) = tiled_sparse_matmul(&plan.a, &provider, plan.fragment, &cfg)?;
    let out = converted.scatter_output(&product)?;
    let reference = direct_apply(converted.spec(), grid, 1)?;
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    for (x, y) in out.values().iter().zip(reference.values()) {
        let d = (x - y).abs();
        max_abs = max_abs.max(d);
        max_rel = max_rel.max(if *y != 0.0 { d / y.abs() } else { d });
    }
    Ok(RunErrors { max_abs, max_rel, issued_mma })
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Not24 { .. } => e,
        other => Error::InvalidPlan(format!("{name}: {other}")),
    })
}

pub fn compile(
    spec: &StencilSpec,
    grid_dims: &[usize],
    hw: &HardwareDescriptor,
    opts: &CompileOptions,
) -> Result<Compiled> {
    if opts.fuse == 0 {
        return Err(Error::ZeroSteps);
    }
    let spec = stage("fuse", fuse_time_steps(spec, opts.fuse))?;
    if grid_dims.len() != spec.dims() {
        return Err(Error::InvalidGrid(format!("{}-D stencil on a {}-D grid", spec.dims(), grid_dims.len())));
    }

    let (estimate, exploration) = match opts.merge {
        Some((r1, r2)) => {
            let r2 = if spec.dims() == 1 { 1 } else { r2 };
            (stage("model", estimate(hw, grid_dims, spec.k(), r1, r2))?, None)
        }
        None => {
            let space = opts.space.clone().unwrap_or_else(|| SearchSpace::default_for(spec.dims()));
            let ex = stage("explore", explore_layouts(hw, &spec, grid_dims, &space))?;
            (ex.best().estimate.clone(), Some(ex))
        }
    };

    let layout = stage("morph", flatten(&spec, grid_dims).and_then(|f| crush(&f, estimate.r1, estimate.r2)))?;
    let ctx = ReportContext {
        spec: &spec,
        grid: grid_dims,
        hardware: &hw.name,
        precision: opts.precision,
        fused_steps: opts.fuse,
    };

    let convert_opts = ConvertOptions { corrupt_permutation: opts.corrupt_permutation };
    let conversion = match convert_with(&layout, &convert_opts) {
        Ok(c) => c,
        Err(Error::Not24 { row, group, count }) => {
            let verification = Verification {
                status: VerificationStatus::ConversionFailed,
                violation: Some(Violation { row, group, nonzeros: count }),
                message: Some(format!("row {row}, group {group} holds {count} nonzeros")),
                ..Verification::unverified()
            };
            let report = Report::new(&ctx, None, &estimate, &verification).with_fragment(&hw.fragment.to_string());
            return Ok(Compiled {
                spec: spec.clone(),
                estimate,
                exploration,
                plan: None,
                verification,
                report,
                kernel: None,
                a_blob: None,
                lut_blob: None,
            });
        }
        Err(e) => return stage("convert", Err(e)),
    };

    let block = match opts.block {
        Some(b) => b,
        None => match find_preset(spec.name()) {
            Ok(p) => stage("plan", BlockConfig::from_extents(p.block))?,
            Err(_) => BlockConfig::default_for(spec.dims()),
        },
    };
    let plan = stage("plan", KernelPlan::new(&conversion, hw.fragment, block, opts.precision))?;

    let verification = if grid_dims.iter().all(|d| *d <= VERIFY_CAP) {
        let grid = random_grid(grid_dims, opts.precision, opts.seed)?;
        let errs = stage("verify", emulate_and_compare(&conversion.layout, &plan, &grid, opts.precision))?;
        let status = if errs.within(opts.precision) && errs.issued_mma == estimate.n_mma {
            VerificationStatus::Verified
        } else {
            VerificationStatus::VerificationFailed
        };
        let message = (errs.issued_mma != estimate.n_mma)
            .then(|| format!("emulator issued {} MMAs, model expects {}", errs.issued_mma, estimate.n_mma));
        Verification {
            status,
            max_abs_error: Some(errs.max_abs),
            max_rel_error: Some(errs.max_rel),
            issued_mma: Some(errs.issued_mma),
            violation: None,
            message,
        }
    } else {
        Verification::unverified()
    };

    let kernel = emit_kernel(&plan);
    if let Err(problems) = lint_kernel(&kernel) {
        return Err(Error::InvalidPlan(format!("emit: kernel fails lint: {}", problems.join("; "))));
    }
    let encoding = match opts.precision {
        ValuePrecision::Exact64 => blob::ValueEncoding::F64,
        ValuePrecision::Round16 => blob::ValueEncoding::F16,
    };
    let report = Report::new(&ctx, Some(&plan), &estimate, &verification);
    Ok(Compiled {
        spec: spec.clone(),
        estimate,
        exploration,
        a_blob: Some(blob::encode(&plan.a, encoding)),
        lut_blob: Some(plan.lut.to_bytes()),
        kernel: Some(kernel),
        plan: Some(plan),
        verification,
        report,
    })
}
