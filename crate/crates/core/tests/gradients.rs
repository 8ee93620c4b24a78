use specmae_core::cube::HyperCube;
use specmae_core::grouping::{GroupingResult, Strategy};
use specmae_core::loss::{composite_loss, masked_elements, LossWeights, SidParams, SsimParams};
use specmae_core::masking::{make_patch_grid, sample_mask, MaskPlan, PatchGrid};
use specmae_core::model::{backward, forward, init_params, ModelConfig};
use specmae_core::rng::Xoshiro256;

const FD_H: f64 = 1e-4;
const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-8;

fn grouping(assignment: Vec<usize>) -> GroupingResult {
    let num_groups = assignment.iter().max().unwrap() + 1;
    let mut group_sizes = vec![0usize; num_groups];
    for &g in &assignment {
        group_sizes[g] += 1;
    }
    GroupingResult { strategy: Strategy::Sci, num_groups, assignment, group_sizes, warnings: Vec::new() }
}

struct Case {
    grouping: GroupingResult,
    plan: MaskPlan,
    grid: PatchGrid,
    target: Vec<f64>,
    pred: Vec<f64>,
    h: usize,
    w: usize,
    c: usize,
}

fn random_case(seed: u64) -> Case {
    let (h, w, c) = (8, 8, 6);
    let grid = make_patch_grid(h, w, 4).unwrap();
    let grouping = grouping(vec![0, 0, 1, 1, 2, 2]);
    let plan = sample_mask(&grid, 3, 0.5, seed);
    let mut rng = Xoshiro256::seeded(seed.wrapping_add(1000));
    // keep values away from 0/1 so SID normalization and abs() stay smooth
    let target: Vec<f64> = (0..c * h * w).map(|_| 0.1 + 0.8 * rng.next_f64()).collect();
    let pred: Vec<f64> = (0..c * h * w).map(|_| 0.1 + 0.8 * rng.next_f64()).collect();
    Case { grouping, plan, grid, target, pred, h, w, c }
}

fn loss_total(case: &Case, pred: &[f64], w: LossWeights) -> f64 {
    let (report, _) = composite_loss(
        pred,
        &case.target,
        case.h,
        case.w,
        case.c,
        &case.grouping,
        &case.plan,
        &case.grid,
        w,
        &SsimParams::default(),
        &SidParams::default(),
    )
    .unwrap();
    report.total
}

fn check_against_fd(case: &Case, weights: LossWeights, coords: &[usize], label: &str) {
    let (_, grad) = composite_loss(
        &case.pred,
        &case.target,
        case.h,
        case.w,
        case.c,
        &case.grouping,
        &case.plan,
        &case.grid,
        weights,
        &SsimParams::default(),
        &SidParams::default(),
    )
    .unwrap();
    let mut pred = case.pred.clone();
    for &i in coords {
        let orig = pred[i];
        pred[i] = orig + FD_H;
        let plus = loss_total(case, &pred, weights);
        pred[i] = orig - FD_H;
        let minus = loss_total(case, &pred, weights);
        pred[i] = orig;
        let fd = (plus - minus) / (2.0 * FD_H);
        let a = grad[i];
        if a.abs() < ABS_FLOOR && fd.abs() < ABS_FLOOR {
            continue;
        }
        let rel = (a - fd).abs() / a.abs().max(fd.abs());
        assert!(rel <= REL_TOL, "{label} coord {i}: analytic {a} fd {fd} rel {rel}");
    }
}

fn masked_coords(case: &Case) -> Vec<usize> {
    masked_elements(case.h, case.w, case.c, &case.grouping, &case.plan, &case.grid)
        .unwrap()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect()
}

#[test]
fn mae_gradient_matches_finite_differences() {
    let case = random_case(1);
    let coords = masked_coords(&case);
    check_against_fd(&case, LossWeights { eta: 1.0, lambda: 0.0, mu: 0.0 }, &coords, "mae");
}

#[test]
fn ssim_gradient_matches_finite_differences() {
    let case = random_case(2);
    let coords = masked_coords(&case);
    check_against_fd(&case, LossWeights { eta: 0.0, lambda: 1.0, mu: 0.0 }, &coords, "ssim_n");
}

#[test]
fn sid_gradient_matches_finite_differences() {
    let case = random_case(3);
    let coords = masked_coords(&case);
    check_against_fd(&case, LossWeights { eta: 0.0, lambda: 0.0, mu: 1.0 }, &coords, "sid_n");
}

#[test]
fn composite_gradient_matches_on_many_random_cubes() {
    // 20 random cubes; 24 spot coordinates each keeps the FD cost bounded
    for seed in 0..20u64 {
        let case = random_case(seed.wrapping_add(100));
        let coords = masked_coords(&case);
        let mut rng = Xoshiro256::seeded(seed);
        let spots: Vec<usize> =
            (0..24).map(|_| coords[rng.below(coords.len() as u64) as usize]).collect();
        check_against_fd(&case, LossWeights::TARGET, &spots, "composite");
        check_against_fd(
            &case,
            LossWeights { eta: 0.4, lambda: 0.35, mu: 0.25 },
            &spots,
            "composite-alt",
        );
    }
}

#[test]
fn model_parameter_gradients_match_finite_differences() {
    let config = ModelConfig {
        patch: 4,
        dim: 8,
        depth: 1,
        heads: 2,
        dec_dim: 8,
        dec_depth: 1,
        groups: 2,
        mask_ratio: 0.5,
    };
    let g = grouping(vec![0, 0, 1, 1]);
    let grid = make_patch_grid(8, 8, 4).unwrap();
    let plan = sample_mask(&grid, 2, 0.5, 11);
    let mut rng = Xoshiro256::seeded(400);
    let data: Vec<f32> = (0..4 * 64).map(|_| (0.1 + 0.8 * rng.next_f64()) as f32).collect();
    let cube = HyperCube::new(8, 8, 4, data, None).unwrap();
    let params = init_params(&config, &g, 17).unwrap();
    let weights = LossWeights::TARGET;
    let sp = SsimParams::default();
    let dp = SidParams::default();

    let run = |params: &specmae_core::model::Params| -> f64 {
        let out = forward(&cube, &g, &plan, &config, params).unwrap();
        let target: Vec<f64> = cube.data.iter().map(|&v| v as f64).collect();
        let (report, _) = composite_loss(
            &out.pred, &target, 8, 8, 4, &g, &plan, &grid, weights, &sp, &dp,
        )
        .unwrap();
        report.total
    };

    let out = forward(&cube, &g, &plan, &config, &params).unwrap();
    let target: Vec<f64> = cube.data.iter().map(|&v| v as f64).collect();
    let (_, loss_grad) =
        composite_loss(&out.pred, &target, 8, 8, 4, &g, &plan, &grid, weights, &sp, &dp).unwrap();
    let grads = backward(&out, &cube, &g, &plan, &config, &params, &loss_grad).unwrap();

    // 10 random coordinates spread over distinct parameter tensors
    let names: Vec<String> = grads.iter().map(|(n, _)| n.clone()).collect();
    let mut rng = Xoshiro256::seeded(31);
    let mut checked = 0usize;
    let mut attempts = 0usize;
    while checked < 10 && attempts < 200 {
        attempts += 1;
        let ni = rng.below(names.len() as u64) as usize;
        let name = &names[ni];
        let numel = params.get(name).unwrap().numel();
        let k = rng.below(numel as u64) as usize;
        let analytic = grads[ni].1.data[k];

        let mut p_plus = params.clone();
        p_plus.get_mut(name).unwrap().data[k] += FD_H;
        let plus = run(&p_plus);
        let mut p_minus = params.clone();
        p_minus.get_mut(name).unwrap().data[k] -= FD_H;
        let minus = run(&p_minus);
        let fd = (plus - minus) / (2.0 * FD_H);

        if analytic.abs() < ABS_FLOOR && fd.abs() < ABS_FLOOR {
            continue;
        }
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs());
        assert!(
            rel <= 1e-3,
            "{name}[{k}]: analytic {analytic} fd {fd} rel {rel}"
        );
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} informative coordinates found");
}
