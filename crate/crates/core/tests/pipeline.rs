use stencil_sptc::codegen::{emit_kernel, BlockConfig, KernelPlan};
use stencil_sptc::convert::convert;
use stencil_sptc::emu::{blob, ValuePrecision};
use stencil_sptc::morph::{crush, flatten};
use stencil_sptc::perf::{n_mma, HardwareDescriptor};
use stencil_sptc::pipeline::{compile, CompileOptions};
use stencil_sptc::stencil::{find_preset, preset};

fn hw() -> HardwareDescriptor {
    HardwareDescriptor::preset("a100-sparse").unwrap()
}

#[test]
fn compile_equals_manual_composition() {
    for (name, grid, r1, r2) in
        [("Heat-2D", vec![48, 40], 2, 3), ("Box-3D27P", vec![12, 12, 12], 2, 2), ("1D5P", vec![300], 5, 1)]
    {
        let spec = preset(name).unwrap();
        let opts = CompileOptions { merge: Some((r1, r2)), precision: ValuePrecision::Exact64, ..Default::default() };
        let compiled = compile(&spec, &grid, &hw(), &opts).unwrap();

        let layout = crush(&flatten(&spec, &grid).unwrap(), r1, r2).unwrap();
        let conv = convert(&layout).unwrap();
        let block = BlockConfig::from_extents(find_preset(name).unwrap().block).unwrap();
        let plan = KernelPlan::new(&conv, hw().fragment, block, ValuePrecision::Exact64).unwrap();

        assert_eq!(compiled.kernel.as_deref(), Some(emit_kernel(&plan).as_str()), "{name}");
        assert_eq!(compiled.a_blob, Some(blob::encode(&plan.a, blob::ValueEncoding::F64)), "{name}");
        assert_eq!(compiled.lut_blob, Some(plan.lut.to_bytes()), "{name}");
        assert_eq!(compiled.plan.as_ref(), Some(&plan), "{name}");
    }
}

#[test]
fn report_fields_recompute_from_plan() {
    let hw = hw();
    let grid = [64, 64];
    let compiled = compile(&preset("Star-2D13P").unwrap(), &grid, &hw, &CompileOptions::default()).unwrap();
    let plan = compiled.plan.as_ref().unwrap();
    let v: serde_json::Value = serde_json::from_str(&compiled.report.to_json()).unwrap();

    let layout = &v["layout"];
    assert_eq!(layout["m_prime"], plan.m_prime());
    assert_eq!(layout["k_converted"], plan.k_converted());
    assert_eq!(layout["n_prime"], plan.n_prime());
    assert_eq!(layout["zero_columns"], plan.padding);
    let nnz = plan.a.nnz() as f64;
    let sparsity = 1.0 - nnz / (plan.m_prime() * plan.k_converted()) as f64;
    assert!((layout["sparsity_ratio"].as_f64().unwrap() - sparsity).abs() < 1e-12);

    let model = &v["model"];
    let mmas = n_mma(plan.m_prime(), plan.k_converted(), plan.n_prime(), plan.fragment);
    assert_eq!(model["n_mma"], mmas);
    let t_compute = mmas as f64 * hw.cpi_tcu / (hw.frequency_hz * hw.n_tcu);
    assert!((model["t_compute"].as_f64().unwrap() - t_compute).abs() <= 1e-12 * t_compute);
    let t_total = model["t_total"].as_f64().unwrap();
    assert_eq!(t_total, model["t_compute"].as_f64().unwrap().max(model["t_memory"].as_f64().unwrap()));
    let rate = 64.0 * 64.0 / (t_total * 1e9);
    assert!((model["gstencils_per_sec"].as_f64().unwrap() - rate).abs() <= 1e-9 * rate);

    assert_eq!(v["verification"]["issued_mma"], mmas);
    assert_eq!(v["verification"]["status"], "verified");
}
