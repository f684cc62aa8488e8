//! Machine-readable compile report.
//!
//! Schema (version 1), all numbers plain JSON numbers:
//!
//! - `schema_version`: 1
//! - `stencil`: `{name, dims, shape, k, points, fused_steps}`
//! - `grid`: input extents, slowest axis first
//! - `hardware`: descriptor name
//! - `precision`: `"exact64"` or `"round16"`
//! - `layout`: `{r1, r2, m_prime, k_prime, n_prime, k_converted,
//!   zero_columns, alignment_columns, matcher, sparsity_ratio}`; the
//!   conversion-dependent fields are `null` when conversion failed
//! - `fragment`: `"MxKxN"`
//! - `model`: `{n_mma, t_compute, t_memory, t_total, data_r, data_w,
//!   data_trans_r, data_trans_w, gstencils_per_sec}` (seconds, bytes)
//! - `verification`: `{status, max_abs_error, max_rel_error, issued_mma,
//!   violation, message}`; `status` is one of `"verified"`,
//!   `"unverified (scale)"`, `"conversion-failed"`, `"verification-failed"`

use serde::Serialize;

use super::KernelPlan;
use crate::convert::Matcher;
use crate::emu::ValuePrecision;
use crate::perf::{model_gstencils, PerfEstimate};
use crate::stencil::{Shape, StencilSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerificationStatus {
    #[serde(rename = "verified")]
    Verified,
    #[serde(rename = "unverified (scale)")]
    UnverifiedScale,
    #[serde(rename = "conversion-failed")]
    ConversionFailed,
    #[serde(rename = "verification-failed")]
    VerificationFailed,
}

/// 2:4 violation location reported for a failed conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub row: usize,
    pub group: usize,
    pub nonzeros: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub status: VerificationStatus,
    pub max_abs_error: Option<f64>,
    pub max_rel_error: Option<f64>,
    pub issued_mma: Option<usize>,
    pub violation: Option<Violation>,
    pub message: Option<String>,
}

impl Verification {
    pub fn unverified() -> Self {
        Self {
            status: VerificationStatus::UnverifiedScale,
            max_abs_error: None,
            max_rel_error: None,
            issued_mma: None,
            violation: None,
            message: None,
        }
    }
}

/// Request-level facts not stored in the plan.
#[derive(Debug, Clone)]
pub struct ReportContext<'a> {
    pub spec: &'a StencilSpec,
    pub grid: &'a [usize],
    pub hardware: &'a str,
    pub precision: ValuePrecision,
    pub fused_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct StencilSection {
    name: String,
    dims: usize,
    shape: Shape,
    k: usize,
    points: usize,
    fused_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct LayoutSection {
    r1: usize,
    r2: usize,
    m_prime: usize,
    k_prime: usize,
    n_prime: usize,
    k_converted: Option<usize>,
    zero_columns: Option<usize>,
    alignment_columns: Option<usize>,
    matcher: Option<Matcher>,
    sparsity_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ModelSection {
    n_mma: usize,
    t_compute: f64,
    t_memory: f64,
    t_total: f64,
    data_r: f64,
    data_w: f64,
    data_trans_r: f64,
    data_trans_w: f64,
    gstencils_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    schema_version: u32,
    stencil: StencilSection,
    grid: Vec<usize>,
    hardware: String,
    precision: ValuePrecision,
    layout: LayoutSection,
    fragment: String,
    model: ModelSection,
    verification: Verification,
}

impl Report {
    pub fn new(
        ctx: &ReportContext,
        plan: Option<&KernelPlan>,
        perf: &PerfEstimate,
        verification: &Verification,
    ) -> Self {
        let spec = ctx.spec;
        Report {
            schema_version: SCHEMA_VERSION,
            stencil: StencilSection {
                name: spec.name().to_string(),
                dims: spec.dims(),
                shape: spec.shape(),
                k: spec.k(),
                points: spec.nnz(),
                fused_steps: ctx.fused_steps,
            },
            grid: ctx.grid.to_vec(),
            hardware: ctx.hardware.to_string(),
            precision: ctx.precision,
            layout: LayoutSection {
                r1: perf.r1,
                r2: perf.r2,
                m_prime: perf.m_prime,
                k_prime: perf.k_prime,
                n_prime: perf.n_prime,
                k_converted: plan.map(|p| p.k_converted()),
                zero_columns: plan.map(|p| p.padding),
                alignment_columns: plan.map(|p| p.alignment),
                matcher: plan.map(|p| p.matcher),
                sparsity_ratio: plan.map(|p| p.sparsity()),
            },
            fragment: plan.map_or_else(String::new, |p| p.fragment.to_string()),
            model: ModelSection {
                n_mma: perf.n_mma,
                t_compute: perf.t_compute,
                t_memory: perf.t_memory,
                t_total: perf.t_total,
                data_r: perf.data_r,
                data_w: perf.data_w,
                data_trans_r: perf.data_trans_r,
                data_trans_w: perf.data_trans_w,
                gstencils_per_sec: model_gstencils(ctx.fused_steps as u64, ctx.grid, perf.t_total),
            },
            verification: verification.clone(),
        }
    }

    pub fn with_fragment(mut self, fragment: &str) -> Self {
        self.fragment = fragment.to_string();
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Pretty-printed JSON report.
pub fn emit_report(
    ctx: &ReportContext,
    plan: Option<&KernelPlan>,
    perf: &PerfEstimate,
    verification: &Verification,
) -> String {
    Report::new(ctx, plan, perf, verification).to_json()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::tests::plan_for;
    use crate::perf::{estimate, HardwareDescriptor};
    use crate::stencil::StencilSpec;

    #[test]
    fn identity_report_fields() {
        let spec = StencilSpec::identity(2);
        let plan = plan_for(&spec, &[16, 16], 2, 2);
        let hw = HardwareDescriptor::preset("a100-sparse").unwrap();
        let perf = estimate(&hw, &[16, 16], 1, 2, 2).unwrap();
        let ctx = ReportContext {
            spec: &spec,
            grid: &[16, 16],
            hardware: &hw.name,
            precision: ValuePrecision::Exact64,
            fused_steps: 1,
        };
        let text = emit_report(&ctx, Some(&plan), &perf, &Verification::unverified());
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["layout"]["zero_columns"], 0);
        assert_eq!(v["layout"]["sparsity_ratio"], 0.75);
        assert_eq!(v["verification"]["status"], "unverified (scale)");
        assert_eq!(v["fragment"], "16x32x8");
    }

    #[test]
    fn failed_conversion_report() {
        let spec = crate::stencil::preset("Heat-2D").unwrap();
        let hw = HardwareDescriptor::preset("a100-sparse").unwrap();
        let perf = estimate(&hw, &[16, 16], 3, 2, 2).unwrap();
        let ctx = ReportContext {
            spec: &spec,
            grid: &[16, 16],
            hardware: &hw.name,
            precision: ValuePrecision::Round16,
            fused_steps: 1,
        };
        let ver = Verification {
            status: VerificationStatus::ConversionFailed,
            violation: Some(Violation { row: 0, group: 1, nonzeros: 3 }),
            ..Verification::unverified()
        };
        let v: serde_json::Value = serde_json::from_str(&emit_report(&ctx, None, &perf, &ver)).unwrap();
        assert_eq!(v["verification"]["status"], "conversion-failed");
        assert_eq!(v["verification"]["violation"]["group"], 1);
        assert!(v["layout"]["k_converted"].is_null());
    }
}
