//! Command implementations behind the `stencil-sptc` binary. Each command
//! writes human-readable output to the given sink and returns the process
//! exit status; hard errors come back as `anyhow::Error` carrying the
//! failing stage.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use stencil_sptc::codegen::VerificationStatus;
use stencil_sptc::convert::{build_conflict_graph, BlockShape, Level};
use stencil_sptc::emu::ValuePrecision;
use stencil_sptc::morph::{crush, flatten};
use stencil_sptc::perf::{explore_layouts, HardwareDescriptor, SearchSpace, HARDWARE_PRESETS};
use stencil_sptc::pipeline::{compile, random_grid, CompileOptions, Compiled, VERIFY_CAP};
use stencil_sptc::stencil::{find_preset, fuse_time_steps, parse_stencil_spec, preset, StencilSpec, PRESETS};

pub const DEFAULT_HARDWARE: &str = "a100-sparse";
pub const KERNEL_FILE: &str = "kernel.cu";
pub const REPORT_FILE: &str = "report.json";
pub const A_BLOB_FILE: &str = "a_matrix.sp24";
pub const LUT_FILE: &str = "lut.bin";

/// Exit status for a run that completed but did not verify.
pub const EXIT_FAILED: u8 = 1;
/// Exit status for usage and stage errors.
pub const EXIT_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "stencil-sptc", version, about = "Compile stencils to 2:4 sparse tensor-core kernels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pick a layout, convert, verify at desk scale and write artifacts.
    Compile(CompileArgs),
    /// Rank every candidate merge factor under the performance model.
    Explore(ExploreArgs),
    /// Run every benchmark stencil on seeded random grids.
    Verify(VerifyArgs),
    /// List built-in stencils and hardware descriptors.
    Presets,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Preset name or path to a stencil document.
    #[arg(long)]
    pub stencil: String,
    /// Grid extents, slowest axis first, e.g. `64x64`.
    #[arg(long)]
    pub grid: GridDims,
    /// Hardware preset name or descriptor file.
    #[arg(long, default_value = DEFAULT_HARDWARE)]
    pub hw: String,
    #[arg(long)]
    pub r1: Option<usize>,
    #[arg(long)]
    pub r2: Option<usize>,
    /// Largest merge factor explored per axis.
    #[arg(long, default_value_t = stencil_sptc::morph::MAX_MERGE)]
    pub max_r: usize,
    /// Number of time steps fused into one kernel.
    #[arg(long, default_value_t = 1)]
    pub fuse: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CompileArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value = "round16")]
    pub precision: ValuePrecision,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the morphed operands and the conflict graph.
    #[arg(long)]
    pub debug_dump: bool,
    #[arg(long, hide = true)]
    pub corrupt_permutation: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExploreArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Write the ranked table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Restrict to one stencil (preset or file); all presets otherwise.
    #[arg(long)]
    pub stencil: Option<String>,
    /// Per-axis extent of the scaled grids.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, default_value = DEFAULT_HARDWARE)]
    pub hw: String,
    #[arg(long)]
    pub r1: Option<usize>,
    #[arg(long)]
    pub r2: Option<usize>,
    #[arg(long, default_value = "round16")]
    pub precision: ValuePrecision,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub fuse: usize,
}

/// Grid extents as written on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridDims(pub Vec<usize>);

impl std::str::FromStr for GridDims {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_grid(s).map(GridDims)
    }
}

pub fn parse_grid(text: &str) -> std::result::Result<Vec<usize>, String> {
    let dims: std::result::Result<Vec<usize>, _> = text.split(['x', 'X']).map(|s| s.trim().parse::<usize>()).collect();
    match dims {
        Ok(d) if (1..=3).contains(&d.len()) && d.iter().all(|v| *v > 0) => Ok(d),
        _ => Err(format!("`{text}` is not a grid like 64x64 (1 to 3 positive extents)")),
    }
}

/// Where a stencil comes from. A preset name wins over a file of the same
/// name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StencilSource {
    Preset(String),
    File(PathBuf),
}

impl StencilSource {
    pub fn resolve(arg: &str) -> Self {
        match find_preset(arg) {
            Ok(p) => Self::Preset(p.name.to_string()),
            Err(_) => Self::File(PathBuf::from(arg)),
        }
    }

    pub fn load(&self) -> Result<StencilSpec> {
        match self {
            Self::Preset(name) => Ok(preset(name)?),
            Self::File(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("`{}` is neither a preset nor a readable file", path.display()))?;
                parse_stencil_spec(&text).with_context(|| format!("parse: {}", path.display()))
            }
        }
    }
}

pub fn load_hardware(arg: &str) -> Result<HardwareDescriptor> {
    if HARDWARE_PRESETS.iter().any(|p| p.eq_ignore_ascii_case(arg)) {
        return Ok(HardwareDescriptor::preset(&arg.to_ascii_lowercase())?);
    }
    let text =
        fs::read_to_string(arg).with_context(|| format!("`{arg}` is neither a hardware preset nor a readable file"))?;
    HardwareDescriptor::parse(&text).with_context(|| format!("parse: {arg}"))
}

/// Fully resolved compile inputs.
#[derive(Debug, Clone)]
pub struct CompileRequest {
    pub stencil: StencilSource,
    pub grid: Vec<usize>,
    pub hardware: HardwareDescriptor,
    pub max_r: usize,
    pub merge: Option<(usize, usize)>,
    pub fuse: usize,
    pub precision: ValuePrecision,
    pub out: PathBuf,
    pub seed: u64,
    pub debug_dump: bool,
    pub corrupt_permutation: bool,
}

fn merge_of(r1: Option<usize>, r2: Option<usize>) -> Result<Option<(usize, usize)>> {
    match (r1, r2) {
        (None, None) => Ok(None),
        (Some(a), Some(b)) => Ok(Some((a, b))),
        (Some(a), None) => Ok(Some((a, 1))),
        (None, Some(_)) => bail!("--r2 needs --r1"),
    }
}

impl CompileRequest {
    pub fn from_args(args: &CompileArgs) -> Result<Self> {
        let c = &args.common;
        if c.fuse == 0 {
            bail!("--fuse must be at least 1");
        }
        Ok(Self {
            stencil: StencilSource::resolve(&c.stencil),
            grid: c.grid.0.clone(),
            hardware: load_hardware(&c.hw)?,
            max_r: c.max_r,
            merge: merge_of(c.r1, c.r2)?,
            fuse: c.fuse,
            precision: args.precision,
            out: args.out.clone(),
            seed: args.seed,
            debug_dump: args.debug_dump,
            corrupt_permutation: args.corrupt_permutation,
        })
    }

    pub fn options(&self, dims: usize) -> CompileOptions {
        CompileOptions {
            merge: self.merge,
            space: Some(SearchSpace::full(dims, self.max_r)),
            precision: self.precision,
            fuse: self.fuse,
            block: None,
            seed: self.seed,
            corrupt_permutation: self.corrupt_permutation,
        }
    }
}

/// Writes the artifacts of `compiled` into `dir`. Stale artifacts from an
/// earlier run are removed when this run produced none.
pub fn write_artifacts(compiled: &Compiled, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("create {}", dir.display()))?;
    fs::write(dir.join(REPORT_FILE), compiled.report.to_json())?;
    let files: [(&str, Option<&[u8]>); 3] = [
        (KERNEL_FILE, compiled.kernel.as_deref().map(str::as_bytes)),
        (A_BLOB_FILE, compiled.a_blob.as_deref()),
        (LUT_FILE, compiled.lut_blob.as_deref()),
    ];
    for (name, bytes) in files {
        let path = dir.join(name);
        match bytes {
            Some(b) => fs::write(&path, b).with_context(|| format!("write {}", path.display()))?,
            None if path.exists() => fs::remove_file(&path)?,
            None => {}
        }
    }
    Ok(())
}

fn write_debug_dump(spec: &StencilSpec, req: &CompileRequest, compiled: &Compiled) -> Result<()> {
    let (r1, r2) = (compiled.estimate.r1, compiled.estimate.r2);
    let layout = crush(&flatten(spec, &req.grid)?, r1, r2).context("morph")?;
    let graph = build_conflict_graph(layout.a_matrix(), Level::Global(BlockShape::ELEMENT))?;
    fs::write(req.out.join("conflict_graph.txt"), graph.to_adjacency_list())?;
    if req.grid.iter().all(|d| *d <= VERIFY_CAP) {
        let grid = random_grid(&req.grid, req.precision, req.seed)?;
        fs::write(req.out.join("layout.csv"), layout.debug_csv(&grid, 64)?)?;
    }
    Ok(())
}

pub fn cmd_compile(req: &CompileRequest, out: &mut dyn Write) -> Result<u8> {
    let spec = req.stencil.load()?;
    let started = Instant::now();
    let compiled = compile(&spec, &req.grid, &req.hardware, &req.options(spec.dims()))?;
    let elapsed = started.elapsed();
    write_artifacts(&compiled, &req.out)?;
    if req.debug_dump {
        let fused = fuse_time_steps(&spec, req.fuse)?;
        write_debug_dump(&fused, req, &compiled).context("debug dump")?;
    }

    let e = &compiled.estimate;
    let v = &compiled.verification;
    writeln!(out, "stencil    {} (k={}, fused x{})", compiled.spec.name(), compiled.spec.k(), req.fuse)?;
    writeln!(out, "grid       {}", format_grid(&req.grid))?;
    writeln!(out, "layout     r1={} r2={} m'={} k'={} n'={}", e.r1, e.r2, e.m_prime, e.k_prime, e.n_prime)?;
    if let Some(plan) = &compiled.plan {
        writeln!(
            out,
            "converted  k''={} zero columns={} matcher={:?} sparsity={:.4}",
            plan.k_converted(),
            plan.padding,
            plan.matcher,
            plan.sparsity()
        )?;
    }
    writeln!(out, "model      n_mma={} t_total={:.6e} s", e.n_mma, e.t_total)?;
    let status = serde_json::to_value(v.status)?;
    writeln!(out, "status     {}", status.as_str().unwrap_or_default())?;
    if let (Some(a), Some(r)) = (v.max_abs_error, v.max_rel_error) {
        writeln!(out, "error      max abs {a:.3e}, max rel {r:.3e}")?;
    }
    if let Some(msg) = &v.message {
        writeln!(out, "note       {msg}")?;
    }
    writeln!(out, "wall time  {:.1} ms", elapsed.as_secs_f64() * 1e3)?;
    writeln!(out, "artifacts  {}", req.out.display())?;
    Ok(if compiled.succeeded() { 0 } else { EXIT_FAILED })
}

fn format_grid(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

pub const CSV_HEADER: [&str; 10] =
    ["rank", "r1", "r2", "t_compute", "t_memory", "t_total", "n_mma", "k_converted", "zero_columns", "sparsity"];

pub fn cmd_explore(args: &ExploreArgs, out: &mut dyn Write) -> Result<u8> {
    let c = &args.common;
    if c.fuse == 0 {
        bail!("--fuse must be at least 1");
    }
    let spec = fuse_time_steps(&StencilSource::resolve(&c.stencil).load()?, c.fuse)?;
    let hw = load_hardware(&c.hw)?;
    let space = match merge_of(c.r1, c.r2)? {
        Some(p) => SearchSpace::new(vec![p]),
        None => SearchSpace::full(spec.dims(), c.max_r),
    };
    let ex = explore_layouts(&hw, &spec, &c.grid.0, &space).context("explore")?;

    writeln!(
        out,
        "{:>4} {:>3} {:>3} {:>12} {:>12} {:>12} {:>12} {:>8}",
        "rank", "r1", "r2", "t_compute", "t_memory", "t_total", "n_mma", "sparsity"
    )?;
    for (i, cand) in ex.ranked.iter().enumerate() {
        let e = &cand.estimate;
        writeln!(
            out,
            "{:>4} {:>3} {:>3} {:>12.5e} {:>12.5e} {:>12.5e} {:>12} {:>8.4}",
            i + 1,
            e.r1,
            e.r2,
            e.t_compute,
            e.t_memory,
            e.t_total,
            e.n_mma,
            cand.sparsity
        )?;
    }
    if !ex.infeasible.is_empty() {
        writeln!(out, "{} candidates skipped: grid too small for the merge", ex.infeasible.len())?;
    }

    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("create {}", path.display()))?;
        w.write_record(CSV_HEADER)?;
        for (i, cand) in ex.ranked.iter().enumerate() {
            let e = &cand.estimate;
            w.write_record([
                (i + 1).to_string(),
                e.r1.to_string(),
                e.r2.to_string(),
                e.t_compute.to_string(),
                e.t_memory.to_string(),
                e.t_total.to_string(),
                e.n_mma.to_string(),
                e.k_converted.to_string(),
                e.padding.to_string(),
                cand.sparsity.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(0)
}

/// Scaled desk grid for a benchmark of the given dimensionality.
pub fn scaled_grid(dims: usize, extent: Option<usize>) -> Vec<usize> {
    let e = extent.unwrap_or(match dims {
        1 => 256,
        2 => 64,
        _ => 16,
    });
    vec![e; dims]
}

pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<u8> {
    if args.fuse == 0 {
        bail!("--fuse must be at least 1");
    }
    let hw = load_hardware(&args.hw)?;
    let merge = merge_of(args.r1, args.r2)?;
    let specs = match &args.stencil {
        Some(s) => vec![StencilSource::resolve(s).load()?],
        None => PRESETS.iter().map(|p| preset(p.name)).collect::<stencil_sptc::Result<_>>()?,
    };

    writeln!(
        out,
        "{:<12} {:>12} {:>3} {:>3} {:>12} {:>12}  status",
        "stencil", "grid", "r1", "r2", "max abs", "max rel"
    )?;
    let mut failures = 0;
    for spec in &specs {
        let grid = scaled_grid(spec.dims(), args.grid);
        if grid.iter().any(|d| *d > VERIFY_CAP) {
            bail!("verify needs grids of at most {VERIFY_CAP} per axis");
        }
        let opts = CompileOptions {
            merge,
            space: None,
            precision: args.precision,
            fuse: args.fuse,
            block: None,
            seed: args.seed,
            corrupt_permutation: false,
        };
        let compiled = compile(spec, &grid, &hw, &opts).with_context(|| format!("verify {}", spec.name()))?;
        let v = &compiled.verification;
        if v.status != VerificationStatus::Verified {
            failures += 1;
        }
        let status = serde_json::to_value(v.status)?;
        writeln!(
            out,
            "{:<12} {:>12} {:>3} {:>3} {:>12.3e} {:>12.3e}  {}",
            spec.name(),
            format_grid(&grid),
            compiled.estimate.r1,
            compiled.estimate.r2,
            v.max_abs_error.unwrap_or(f64::NAN),
            v.max_rel_error.unwrap_or(f64::NAN),
            status.as_str().unwrap_or_default()
        )?;
    }
    Ok(if failures == 0 { 0 } else { EXIT_FAILED })
}

pub fn cmd_presets(out: &mut dyn Write) -> Result<u8> {
    writeln!(out, "stencils")?;
    writeln!(out, "  {:<12} {:>6} {:>4} {:>5}  {:<6} problem", "name", "points", "dims", "k", "shape")?;
    for p in PRESETS {
        let spec = preset(p.name)?;
        writeln!(
            out,
            "  {:<12} {:>6} {:>4} {:>5}  {:<6} {} x {} steps",
            p.name,
            p.points,
            spec.dims(),
            spec.k(),
            spec.shape().to_string(),
            format_grid(p.problem),
            p.time_steps
        )?;
    }
    writeln!(out, "hardware")?;
    for name in HARDWARE_PRESETS {
        let hw = HardwareDescriptor::preset(name)?;
        writeln!(
            out,
            "  {:<12} fragment {} cpi {} at {:.2} GHz, {} units",
            hw.name,
            hw.fragment,
            hw.cpi_tcu,
            hw.frequency_hz / 1e9,
            hw.n_tcu
        )?;
    }
    Ok(0)
}

/// Dispatches a parsed command line.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<u8> {
    match &cli.command {
        Command::Compile(args) => cmd_compile(&CompileRequest::from_args(args)?, out),
        Command::Explore(args) => cmd_explore(args, out),
        Command::Verify(args) => cmd_verify(args, out),
        Command::Presets => cmd_presets(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_argument() {
        assert_eq!(parse_grid("64x32").unwrap(), vec![64, 32]);
        assert_eq!(parse_grid("256").unwrap(), vec![256]);
        assert!(parse_grid("0x4").is_err());
        assert!(parse_grid("1x2x3x4").is_err());
        assert!(parse_grid("64by64").is_err());
    }

    #[test]
    fn stencil_source_resolution() {
        assert_eq!(StencilSource::resolve("heat-2d"), StencilSource::Preset("Heat-2D".into()));
        assert_eq!(StencilSource::resolve("my.stencil"), StencilSource::File("my.stencil".into()));
        assert!(StencilSource::resolve("/nonexistent/file").load().is_err());
    }

    #[test]
    fn merge_flags() {
        assert_eq!(merge_of(None, None).unwrap(), None);
        assert_eq!(merge_of(Some(4), None).unwrap(), Some((4, 1)));
        assert!(merge_of(None, Some(2)).is_err());
    }

    #[test]
    fn cli_parses() {
        let cli = Cli::try_parse_from([
            "stencil-sptc",
            "compile",
            "--stencil",
            "Heat-2D",
            "--grid",
            "64x64",
            "--r1",
            "2",
            "--r2",
            "2",
        ])
        .unwrap();
        match cli.command {
            Command::Compile(a) => {
                assert_eq!(a.common.grid.0, vec![64, 64]);
                assert_eq!(a.precision, ValuePrecision::Round16);
            }
            other => panic!("parsed {other:?}"),
        }
    }
}
