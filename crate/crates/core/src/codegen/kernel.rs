//! Kernel source emission and a structural linter for the emitted text.
//!
//! The kernel is a GPU C dialect listing with the sparse MMA and the
//! asynchronous copy as opaque intrinsic calls. It is an artifact to read
//! and check, not something this crate compiles.

use std::fmt::Write as _;

use half::f16;

use super::KernelPlan;
use crate::emu::ValuePrecision;

const PER_LINE: usize = 12;

fn array<T: std::fmt::Display>(out: &mut String, decl: &str, items: impl IntoIterator<Item = T>) {
    let items: Vec<String> = items.into_iter().map(|v| v.to_string()).collect();
    let _ = writeln!(out, "{decl}[{}] = {{", items.len().max(1));
    if items.is_empty() {
        out.push_str("    0\n");
    }
    for chunk in items.chunks(PER_LINE) {
        let _ = writeln!(out, "    {},", chunk.join(", "));
    }
    out.push_str("};\n\n");
}

fn mma_name(plan: &KernelPlan) -> String {
    let f = plan.fragment;
    format!("mma_sp_m{}k{}n{}", f.m, f.k, f.n)
}

/// Kernel source for `plan`. A pure function of the plan.
pub fn emit_kernel(plan: &KernelPlan) -> String {
    let f = plan.fragment;
    let lut = &plan.lut;
    let (tpy, tpx) = lut.tiles_per_block();
    let tiles = tpy * tpx;
    let value_type = match plan.precision {
        ValuePrecision::Round16 => "half_bits",
        ValuePrecision::Exact64 => "double",
    };
    let mut s = String::new();
    let grid: Vec<String> = plan.grid.iter().map(|d| d.to_string()).collect();
    let _ = writeln!(
        s,
        "// {}: {}-D {} stencil, k = {}, grid {}",
        plan.name,
        plan.grid.len(),
        plan.shape,
        plan.k,
        grid.join("x")
    );
    let _ = writeln!(
        s,
        "// merge r1 = {}, r2 = {}; A'' is {} x {} in 2:4 form ({} zero columns, {} for alignment, {} matcher)",
        plan.r1,
        plan.r2,
        plan.m_prime(),
        plan.k_converted(),
        plan.padding,
        plan.alignment,
        match plan.matcher {
            crate::convert::Matcher::Hierarchical => "hierarchical",
            crate::convert::Matcher::Blossom => "blossom",
        }
    );
    let _ = writeln!(s, "// fragment {f}, values {}", plan.precision);
    s.push_str("// Generated file.\n\n#include <stdint.h>\n#include \"sptc_intrinsics.h\"\n\n");

    let defs = [
        ("M_PRIME", plan.m_prime()),
        ("K_CONV", plan.k_converted()),
        ("K_PAD", plan.k_tiles() * f.k),
        ("N_PRIME", plan.n_prime()),
        ("FRAG_M", f.m),
        ("FRAG_K", f.k),
        ("FRAG_N", f.n),
        ("M_TILES", plan.m_tiles()),
        ("K_TILES", plan.k_tiles()),
        ("TILES_PER_BLOCK", tiles),
        ("OUT_PITCH", lut.padded_output()[2]),
    ];
    for (name, v) in defs {
        let _ = writeln!(s, "#define {name} {v}");
    }
    s.push_str("#define LUT_ZERO (-1)\n\n");

    s.push_str("// 2:4 operand: two kept values per 4-group, row-major\n");
    match plan.precision {
        ValuePrecision::Round16 => array(
            &mut s,
            &format!("__constant__ {value_type} a_values"),
            plan.a.values().iter().map(|v| format!("0x{:04x}", f16::from_f64(*v).to_bits())),
        ),
        ValuePrecision::Exact64 => array(
            &mut s,
            &format!("__constant__ {value_type} a_values"),
            plan.a.values().iter().map(|v| format!("{v:?}")),
        ),
    }
    s.push_str("// metadata: pos0 | pos1 << 2 per group, two groups per byte, low nibble first\n");
    let codes: Vec<u8> = plan.a.metadata().iter().map(|p| p[0] | (p[1] << 2)).collect();
    array(
        &mut s,
        "__constant__ uint8_t a_meta",
        codes.chunks(2).map(|c| format!("0x{:02x}", c[0] | (c.get(1).copied().unwrap_or(0) << 4))),
    );
    s.push_str("// shared-memory slot -> input offset from the tile origin\n");
    array(&mut s, "__constant__ int32_t lut_slot", lut.slot_offsets().iter());
    s.push_str("// tile -> input offset from the block origin\n");
    array(&mut s, "__constant__ int32_t lut_tile", lut.tile_offsets().iter());
    s.push_str("// output row -> offset from the output tile origin\n");
    array(&mut s, "__constant__ int32_t lut_out_row", lut.out_row_offsets().iter());
    s.push_str("// tile -> output offset from the output block origin\n");
    array(&mut s, "__constant__ int32_t lut_out_tile", lut.out_tile_offsets().iter());

    s.push_str(
        "// Copies FRAG_N operand columns starting at tile t0 into dst; slots
// marked LUT_ZERO and tiles past the end are zero filled.
__device__ __forceinline__ void load_tile_async(half (*dst)[FRAG_N], const half *in,
                                                int32_t origin, int t0) {
    for (int s = threadIdx.y; s < K_PAD; s += blockDim.y) {
        for (int c = threadIdx.x; c < FRAG_N; c += blockDim.x) {
            const int t = t0 + c;
            const int32_t slot = s < K_CONV ? lut_slot[s] : LUT_ZERO;
            const bool live = slot != LUT_ZERO && t < TILES_PER_BLOCK;
            async_copy_or_zero(&dst[s][c], in + origin + (live ? lut_tile[t] + slot : 0), live);
        }
    }
}

",
    );

    let _ = writeln!(
        s,
        "__global__ void {}_kernel(const half *__restrict__ in, half *__restrict__ out,
        const int32_t *__restrict__ lut_block, const int32_t *__restrict__ lut_out_block) {{",
        plan.name.to_ascii_lowercase().replace(|c: char| !c.is_ascii_alphanumeric(), "_")
    );
    s.push_str(
        "    __shared__ half b_tile[2][K_PAD][FRAG_N];
    accum_fragment acc[M_TILES];
    const int32_t origin = lut_block[blockIdx.x];
    const int32_t out_origin = lut_out_block[blockIdx.x];
    int buf = 0;

    // prologue: first column group into buffer 0
    load_tile_async(b_tile[buf], in, origin, 0);
    async_commit();
    async_wait_all();
    __syncthreads();

    for (int t0 = 0; t0 < TILES_PER_BLOCK; t0 += FRAG_N) {
        // STAGE 1: LUT-driven asynchronous load of the next group into the idle buffer
        if (t0 + FRAG_N < TILES_PER_BLOCK) {
            load_tile_async(b_tile[buf ^ 1], in, origin, t0 + FRAG_N);
        }
        async_commit();

        // STAGE 2: metadata-driven sparse MMA on the current buffer
",
    );
    let mma = mma_name(plan);
    for mt in 0..plan.m_tiles() {
        let _ = writeln!(s, "        zero_fragment(acc[{mt}]);");
        for kt in 0..plan.k_tiles() {
            let _ = writeln!(
                s,
                "        {mma}(acc[{mt}], a_values, a_meta, {row}, {group}, &b_tile[buf][{k0}][0]);",
                row = mt * f.m,
                group = kt * f.k / 4,
                k0 = kt * f.k,
            );
        }
    }
    s.push_str(
        "
        // STAGE 3: write back; rows past M_PRIME and padded positions are masked
        for (int m = 0; m < M_TILES; ++m) {
            store_fragment(out + out_origin, acc[m], m * FRAG_M, M_PRIME, lut_out_row, lut_out_tile,
                           t0, TILES_PER_BLOCK);
        }

        async_wait_all();
        __syncthreads();
        buf ^= 1;
    }
}
",
    );
    s
}

/// Structure found by [`lint_kernel`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelLint {
    pub mma_call_sites: usize,
}

/// Checks the pipeline shape of an emitted kernel: a main loop containing
/// the three stage markers in order, prefetch into `buf ^ 1`, every MMA on
/// `b_tile[buf]`, a `buf ^= 1` toggle after write-back, and no division
/// or modulus inside the loop or the load helper.
pub fn lint_kernel(text: &str) -> Result<KernelLint, Vec<String>> {
    let mut problems = Vec::new();
    let code = |line: &str| line.split("//").next().unwrap_or("").to_string();

    let Some(loop_start) = text.find("for (int t0 = 0;") else {
        return Err(vec!["no main loop".into()]);
    };
    let body = match block_at(text, loop_start) {
        Some(b) => b,
        None => return Err(vec!["main loop braces do not balance".into()]),
    };

    let marks: Vec<Option<usize>> = ["STAGE 1", "STAGE 2", "STAGE 3"].iter().map(|m| body.find(m)).collect();
    match marks[..] {
        [Some(a), Some(b), Some(c)] if a < b && b < c => {
            let stage1 = &body[a..b];
            if !stage1.contains("b_tile[buf ^ 1]") {
                problems.push("stage 1 does not load into the idle buffer".into());
            }
            let toggle = body.rfind("buf ^= 1;");
            if toggle.is_none_or(|t| t < c) {
                problems.push("buffer index is not toggled after write-back".into());
            }
        }
        _ => problems.push("stage markers missing or out of order".into()),
    }

    let mut sites = 0;
    for line in body.lines().map(code) {
        if line.contains("mma_sp_") {
            sites += 1;
            if !line.contains("b_tile[buf]") {
                problems.push(format!("MMA does not read the current buffer: {}", line.trim()));
            }
        }
    }
    if sites == 0 {
        problems.push("no MMA call sites".into());
    }

    let helper = text.find("void load_tile_async").and_then(|i| block_at(text, i));
    if helper.is_none() {
        problems.push("no load helper".into());
    }
    for part in [Some(body), helper].into_iter().flatten() {
        for line in part.lines().map(code) {
            if line.contains('/') || line.contains('%') {
                problems.push(format!("division or modulus in the hot path: {}", line.trim()));
            }
        }
    }

    if problems.is_empty() {
        Ok(KernelLint { mma_call_sites: sites })
    } else {
        Err(problems)
    }
}

/// Text of the brace-delimited block opened after `from`.
fn block_at(text: &str, from: usize) -> Option<&str> {
    let open = from + text[from..].find('{')?;
    let mut depth = 0usize;
    for (i, ch) in text[open..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[open..=open + i]);
                }
            }
            _ => {}
        }
    }
    None
}
