use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stencil_sptc::codegen::{BlockConfig, KernelPlan};
use stencil_sptc::convert::{
    apply_pit, build_conflict_graph, check_24, convert, descriptor_graph, hierarchical_match_traced, BlockShape, Level,
    Partner, Permutation,
};
use stencil_sptc::emu::{
    compress_24, decompress, tiled_sparse_matmul, EmulationConfig, FragmentShape, Sparse24Matrix, ValuePrecision,
};
use stencil_sptc::morph::{crush, flatten, verify_staircase, MorphedLayout};
use stencil_sptc::perf::{estimate, explore_layouts, n_mma, HardwareDescriptor, SearchSpace};
use stencil_sptc::stencil::{direct_apply, fuse_time_steps, preset, Grid, Shape, StencilSpec, PRESETS};
use stencil_sptc::Matrix;

/// Random stencil with small integer weights; the centre is always set.
fn int_spec(seed: u64, dims: usize, shape: Shape, k: usize) -> StencilSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = (k / 2) as i32;
    let mut points = Vec::new();
    let total = (k as u32).pow(dims as u32);
    for idx in 0..total {
        let mut rest = idx;
        let offset: Vec<i32> = (0..dims)
            .map(|_| {
                let o = (rest % k as u32) as i32 - r;
                rest /= k as u32;
                o
            })
            .collect();
        let centre = offset.iter().all(|o| *o == 0);
        if shape == Shape::Star && offset.iter().filter(|o| **o != 0).count() > 1 {
            continue;
        }
        if centre || rng.gen_bool(0.7) {
            let w = loop {
                let w = rng.gen_range(-3i32..=3);
                if w != 0 {
                    break w;
                }
            };
            points.push((offset, w as f64));
        }
    }
    StencilSpec::new("random", dims, shape, k, points).unwrap()
}

fn int_grid(dims: &[usize], seed: u64) -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    Grid::new(dims.to_vec(), (0..n).map(|_| rng.gen_range(-8i32..=8) as f64).collect()).unwrap()
}

fn shape_strategy() -> impl Strategy<Value = Shape> {
    prop_oneof![Just(Shape::Star), Just(Shape::Box)]
}

/// `(spec, grid dims, r1, r2)` at desk scale with a feasible merge.
fn layout_case() -> impl Strategy<Value = (StencilSpec, Vec<usize>, usize, usize, u64)> {
    (1usize..=3, shape_strategy(), prop::sample::select(vec![1usize, 3, 5]), any::<u64>(), 1usize..=4, 1usize..=4)
        .prop_flat_map(|(dims, shape, k, seed, r1, r2)| {
            let ext = match dims {
                1 => k..k + 40,
                2 => k..k + 14,
                _ => k..k + 5,
            };
            (prop::collection::vec(ext, dims), Just((dims, shape, k, seed, r1, r2)))
        })
        .prop_map(|(grid, (dims, shape, k, seed, r1, r2))| {
            let spec = int_spec(seed, dims, shape, k);
            let out: Vec<usize> = grid.iter().map(|g| g - k + 1).collect();
            let r1 = r1.min(out[dims - 1]);
            let r2 = if dims == 1 { 1 } else { r2.min(out[dims - 2]) };
            (spec, grid, r1, r2, seed)
        })
}

fn morphed(spec: &StencilSpec, grid: &[usize], r1: usize, r2: usize) -> MorphedLayout {
    crush(&flatten(spec, grid).unwrap(), r1, r2).unwrap()
}

/// Random 2:4 matrix with integer values; some groups are sparser.
fn random_24(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for g in 0..cols / 4 {
            let nnz = rng.gen_range(0..=2);
            let mut pos: Vec<usize> = (0..4).collect();
            for i in 0..nnz {
                let j = rng.gen_range(i..4);
                pos.swap(i, j);
                let v = loop {
                    let v = rng.gen_range(-9i32..=9);
                    if v != 0 {
                        break v;
                    }
                };
                m.set(r, g * 4 + pos[i], v as f64);
            }
        }
    }
    m
}

fn hw() -> HardwareDescriptor {
    HardwareDescriptor::preset("a100-sparse").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fusion_soundness(dims in 1usize..=2, shape in shape_strategy(), k in prop::sample::select(vec![1usize, 3]),
                        t in 1usize..=4, seed: u64) {
        let spec = int_spec(seed, dims, shape, k);
        let ext = t * (k - 1) + 1 + 6;
        let grid = int_grid(&vec![ext; dims], seed ^ 1);
        let fused = fuse_time_steps(&spec, t).unwrap();
        let a = direct_apply(&fused, &grid, 1).unwrap();
        let b = direct_apply(&spec, &grid, t).unwrap();
        prop_assert_eq!(a.dims(), b.dims());
        prop_assert_eq!(a.values(), b.values());
    }

    #[test]
    fn oracle_is_linear(dims in 1usize..=3, shape in shape_strategy(), seed: u64, a in -4i32..=4, b in -4i32..=4) {
        let spec = int_spec(seed, dims, shape, 3);
        let ext = vec![7; dims];
        let (g1, g2) = (int_grid(&ext, seed), int_grid(&ext, seed.wrapping_add(9)));
        let mixed = Grid::new(ext.clone(), g1.values().iter().zip(g2.values()).map(|(x, y)| a as f64 * x + b as f64 * y).collect()).unwrap();
        let lhs = direct_apply(&spec, &mixed, 1).unwrap();
        let (o1, o2) = (direct_apply(&spec, &g1, 1).unwrap(), direct_apply(&spec, &g2, 1).unwrap());
        for ((l, x), y) in lhs.values().iter().zip(o1.values()).zip(o2.values()) {
            prop_assert_eq!(*l, a as f64 * x + b as f64 * y);
        }
    }

    #[test]
    fn star_points_lie_in_box(dims in 1usize..=3, k in prop::sample::select(vec![1usize, 3, 5, 7]), seed: u64) {
        let star = int_spec(seed, dims, Shape::Star, k);
        let r = (k / 2) as i32;
        let box_points: HashSet<Vec<i32>> = (0..(k as u32).pow(dims as u32))
            .map(|idx| {
                let mut rest = idx;
                (0..dims).map(|_| { let o = (rest % k as u32) as i32 - r; rest /= k as u32; o }).collect()
            })
            .collect();
        for (offset, _) in star.points() {
            prop_assert!(box_points.contains(offset));
        }
    }

    #[test]
    fn crush_preserves_semantics((spec, grid, r1, r2, seed) in layout_case()) {
        let layout = morphed(&spec, &grid, r1, r2);
        let g = int_grid(&grid, seed);
        let got = layout.evaluate(&g).unwrap();
        let want = direct_apply(&spec, &g, 1).unwrap();
        prop_assert_eq!(got.values(), want.values());

        // The output map is a bijection onto the interior.
        let geo = layout.geometry();
        let mut seen = HashSet::new();
        for row in 0..geo.m_prime() {
            for col in 0..geo.n_prime() {
                if let Some(c) = geo.output_coord(row, col) {
                    prop_assert!(seen.insert(c));
                }
            }
        }
        prop_assert_eq!(seen.len(), geo.output_count());
    }

    #[test]
    fn crush_keeps_staircase_and_work((spec, grid, r1, r2, _seed) in layout_case()) {
        let layout = morphed(&spec, &grid, r1, r2);
        prop_assert!(verify_staircase(&layout));
        let geo = layout.geometry();
        prop_assert!(geo.m_prime() * geo.k_prime() >= spec.k().pow(spec.dims() as u32));
        prop_assert!(geo.m_prime() * geo.n_prime() >= geo.output_count());
    }

    #[test]
    fn merging_two_halves_columns((spec, grid, _r1, r2, _seed) in layout_case()) {
        let out_x = grid[grid.len() - 1] - spec.k() + 1;
        prop_assume!(out_x >= 2);
        let one = morphed(&spec, &grid, 1, r2).geometry().n_prime();
        let two = morphed(&spec, &grid, 2, r2).geometry().n_prime();
        prop_assert_eq!(two * out_x, one * out_x.div_ceil(2));
    }

    #[test]
    fn no_conflicts_beyond_k((spec, grid, r1, r2, _seed) in layout_case()) {
        let layout = morphed(&spec, &grid, r1, r2);
        let meta = layout.block_meta();
        let a = layout.a_matrix();
        let g = build_conflict_graph(a, Level::Global(BlockShape::ELEMENT)).unwrap();
        let per_segment = meta.blocks * meta.block_size;
        for (u, v) in g.edges() {
            let (bu, lu) = ((u % per_segment) / meta.block_size, u % meta.block_size);
            let (bv, lv) = ((v % per_segment) / meta.block_size, v % meta.block_size);
            prop_assert!(bu.abs_diff(bv) < meta.k, "block distance {} for edge ({u}, {v})", bu.abs_diff(bv));
            prop_assert!(lu.abs_diff(lv) < meta.k, "column distance {} for edge ({u}, {v})", lu.abs_diff(lv));
        }
    }

    #[test]
    fn matching_pairs_are_far_apart(m in 1usize..=10, g in 1usize..=8, k in 1usize..=5) {
        prop_assume!(k <= g);
        let trace = hierarchical_match_traced(m, g, k).unwrap();
        let graph = descriptor_graph(m, g, k);
        prop_assert!(trace.node_visits <= 2 * m * g);
        for matching in [&trace.greedy, &trace.matching] {
            prop_assert!(matching.is_conflict_free(&graph));
        }
        for &(i, p) in trace.greedy.pairs().iter().chain(trace.matching.pairs()) {
            if let Partner::Column(j) = p {
                prop_assert!(i.abs_diff(j) >= k, "greedy pair ({i}, {j})");
            }
        }
        prop_assert!(trace.matching.zero_padding() <= trace.greedy.zero_padding());
    }

    #[test]
    fn pit_preserves_product((spec, grid, r1, r2, seed) in layout_case(), extra in 0usize..=5) {
        let layout = morphed(&spec, &grid, r1, r2);
        let n = layout.a_matrix().cols() + extra;
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let permuted = apply_pit(&layout, &Permutation::new(order).unwrap()).unwrap();
        let g = int_grid(&grid, seed ^ 3);
        prop_assert_eq!(permuted.evaluate(&g).unwrap(), layout.evaluate(&g).unwrap());
    }

    #[test]
    fn checker_agrees_with_compression(seed: u64, rows in 1usize..=8, groups in 1usize..=6, spoil: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = random_24(&mut rng, rows, groups * 4);
        if spoil {
            let (r, g) = (rng.gen_range(0..rows), rng.gen_range(0..groups));
            for p in 0..3 {
                m.set(r, g * 4 + p, (p + 1) as f64);
            }
        }
        prop_assert_eq!(check_24(&m), !spoil);
        match compress_24(&m) {
            Ok(s) => prop_assert_eq!(decompress(&s), m),
            Err(_) => prop_assert!(spoil),
        }
    }

    #[test]
    fn fragment_shape_never_changes_exact_result(seed: u64, rows in 1usize..=40, groups in 1usize..=12, cols in 1usize..=20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_24(&mut rng, rows, groups * 4);
        let b = Matrix::from_rows(groups * 4, cols, (0..groups * 4 * cols).map(|_| rng.gen_range(-9i32..=9) as f64).collect()).unwrap();
        let s = compress_24(&a).unwrap();
        let want = a.matmul(&b).unwrap();
        for frag in FragmentShape::DEFAULTS {
            let (got, issued) = tiled_sparse_matmul(&s, &b, frag, &EmulationConfig::exact64()).unwrap();
            prop_assert_eq!(&got, &want);
            prop_assert_eq!(issued, n_mma(rows, groups * 4, cols, frag));
        }
    }

    #[test]
    fn spare_slot_positions_do_not_matter(seed: u64, rows in 1usize..=6, groups in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_24(&mut rng, rows, groups * 4);
        let b = Matrix::from_rows(groups * 4, 8, (0..groups * 32).map(|_| rng.gen_range(-9i32..=9) as f64).collect()).unwrap();
        let s = compress_24(&a).unwrap();
        let mut values = Vec::new();
        let mut meta = Vec::new();
        for r in 0..rows {
            for g in 0..groups {
                let (vals, pos) = s.group(r, g);
                let kept: Vec<u8> = (0..2).filter(|&i| vals[i] != 0.0).map(|i| pos[i]).collect();
                let mut slots = kept.clone();
                while slots.len() < 2 {
                    let p = rng.gen_range(0..4u8);
                    if !slots.contains(&p) {
                        slots.push(p);
                    }
                }
                slots.sort_unstable();
                for p in &slots {
                    values.push(a.get(r, g * 4 + *p as usize));
                }
                meta.push([slots[0], slots[1]]);
            }
        }
        let shuffled = Sparse24Matrix::from_parts(rows, groups * 4, values, meta).unwrap();
        let cfg = EmulationConfig::exact64();
        let frag = FragmentShape::M16_K16_N8;
        prop_assert_eq!(
            tiled_sparse_matmul(&shuffled, &b, frag, &cfg).unwrap(),
            tiled_sparse_matmul(&s, &b, frag, &cfg).unwrap()
        );
    }

    #[test]
    fn converted_plans_agree_with_model((spec, grid, r1, r2, seed) in layout_case()) {
        let layout = morphed(&spec, &grid, r1, r2);
        let conv = convert(&layout).unwrap();
        prop_assert!(check_24(conv.layout.a_matrix()));
        let plan = KernelPlan::new(&conv, FragmentShape::M16_K32_N8, BlockConfig::default_for(spec.dims()), ValuePrecision::Exact64).unwrap();
        let g = int_grid(&grid, seed);

        // Address tables reproduce the permuted operand.
        prop_assert_eq!(plan.lut.materialize(&g), conv.layout.materialize_b(&g).unwrap());

        let provider = stencil_sptc::emu::LayoutColumns::new(&conv.layout, &g).unwrap();
        let (product, issued) = tiled_sparse_matmul(&plan.a, &provider, plan.fragment, &EmulationConfig::exact64()).unwrap();
        let est = estimate(&hw(), &grid, spec.k(), r1, r2).unwrap();
        prop_assert_eq!(issued, est.n_mma);
        let out = conv.layout.scatter_output(&product).unwrap();
        let want = direct_apply(&spec, &g, 1).unwrap();
        prop_assert_eq!(out.values(), want.values());
    }

    #[test]
    fn argmin_survives_rescaling(preset_idx in 0usize..PRESETS.len(), cpi in 1u32..=32, ghz in 0.5f64..3.0,
                                 units in 16usize..=1024, bw_g in 1e11f64..1e13, bw_s in 1e12f64..1e14,
                                 scale in 1e-2f64..1e2, ext in 64usize..=4096) {
        let spec = preset(PRESETS[preset_idx].name).unwrap();
        let grid = vec![if spec.dims() == 3 { ext.min(512) } else { ext }; spec.dims()];
        let base = HardwareDescriptor { cpi_tcu: cpi as f64, frequency_hz: ghz * 1e9, n_tcu: units as f64, bw_global: bw_g, bw_shared: bw_s, ..hw() };
        let scaled = HardwareDescriptor {
            frequency_hz: base.frequency_hz * scale,
            bw_global: base.bw_global * scale,
            bw_shared: base.bw_shared * scale,
            ..base.clone()
        };
        let space = SearchSpace::full(spec.dims(), 8);
        let a = explore_layouts(&base, &spec, &grid, &space).unwrap();
        let b = explore_layouts(&scaled, &spec, &grid, &space).unwrap();
        prop_assert_eq!((a.best().estimate.r1, a.best().estimate.r2), (b.best().estimate.r1, b.best().estimate.r2));
    }

    #[test]
    fn compute_time_tracks_mma_count(preset_idx in 0usize..PRESETS.len(), ext in 32usize..=2048) {
        let spec = preset(PRESETS[preset_idx].name).unwrap();
        let grid = vec![if spec.dims() == 3 { ext.min(256) } else { ext }; spec.dims()];
        let ex = explore_layouts(&hw(), &spec, &grid, &SearchSpace::full(spec.dims(), 8)).unwrap();
        for a in &ex.ranked {
            for b in &ex.ranked {
                if a.estimate.n_mma <= b.estimate.n_mma {
                    prop_assert!(a.estimate.t_compute <= b.estimate.t_compute);
                }
            }
        }
    }
}
