//! Property tests for the invariants of each module.

use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use stokeszero::branchcut::{action_integral_from, ComplexPath};
use stokeszero::fundsol::{
    build_series, local_scale, propagate_from, state_wronskian, FundamentalSolution, PropagationSettings, ScaledState,
};
use stokeszero::potential::{AlphaChoice, RescaledPotential};
use stokeszero::stokesgraph::{build_graph, exceptional_set};
use stokeszero::zeroloci::{find_zeros, is_infinite, line_box, predict, quantize, FindOptions, PredictOptions};
use stokeszero::Error;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn norm(s: &ScaledState, kappa: f64) -> f64 {
    (kappa * s.psi.norm_sqr() + s.dpsi.norm_sqr() / kappa).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn graph_counts_and_mirror_symmetry(n in 2usize..=6, modulus in 15.0f64..80.0) {
        let pot = RescaledPotential::limit(n, AlphaChoice::One, c(modulus, 0.0)).unwrap();
        let g = build_graph(&pot).unwrap();
        prop_assert_eq!(g.sectors.len(), n + 2);
        prop_assert_eq!(g.lines.len(), 3 * n);
        // For real λ and α = 1, W(-z̄) = conj W(z): the graph is symmetric about the imaginary axis.
        for line in &g.lines {
            for &z in line.points.iter().step_by(25) {
                let m = c(-z.re, z.im);
                let d = g.lines.iter().map(|l| l.distance(m)).fold(f64::INFINITY, f64::min);
                prop_assert!(d < 1e-5, "mirror of {} is {:.1e} from the graph", z, d);
            }
        }
    }

    #[test]
    fn sector_count_for_any_phase(n in 2usize..=6, beta in -0.6f64..0.6, modulus in 15.0f64..80.0) {
        let pot = RescaledPotential::limit(n, AlphaChoice::One, Complex64::from_polar(modulus, beta)).unwrap();
        let g = build_graph(&pot).unwrap();
        prop_assert_eq!(g.sectors.len(), n + 2);
        let mut labels: Vec<i32> = g.sectors.iter().map(|s| s.label).collect();
        labels.sort();
        labels.dedup();
        prop_assert_eq!(labels.len(), n + 2);
    }

    #[test]
    fn wronskian_is_constant(
        modulus in 4.0f64..8.0,
        phase in -0.3f64..0.3,
        pts in prop::collection::vec((-0.8f64..0.8, -0.8f64..0.8), 2..5),
    ) {
        let pot = RescaledPotential::limit(3, AlphaChoice::One, Complex64::from_polar(modulus, phase)).unwrap();
        let g = build_graph(&pot).unwrap();
        let series = build_series(&pot, &g.cuts, 2).unwrap();
        let hub = c(0.0, 0.0);
        let a = FundamentalSolution::new(&g, &series, 1, hub).unwrap();
        let b = FundamentalSolution::new(&g, &series, 2, hub).unwrap();
        let path: Vec<Complex64> = pts.iter().map(|&(x, y)| c(x, y)).collect();
        let settings = PropagationSettings::default();
        let ta = propagate_from(&pot, 1, hub, a.hub().state, &path, &settings).unwrap();
        let tb = propagate_from(&pot, 2, hub, b.hub().state, &path, &settings).unwrap();
        let w0 = state_wronskian(&a.hub().state, &b.hub().state);
        for &z in &path {
            let (sa, sb) = (ta.sample_at(z).unwrap(), tb.sample_at(z).unwrap());
            let w = state_wronskian(&sa.state, &sb.state);
            let diff = w.mantissa - w0.mantissa * (w0.log_scale - w.log_scale).exp();
            let k = local_scale(&pot, z);
            let drift = diff.norm() / (norm(&sa.state, k) * norm(&sb.state, k) * k);
            prop_assert!(drift <= 1e-8, "drift {:.1e} at {}", drift, z);
        }
    }

    #[test]
    fn actions_are_path_independent(
        from in (-0.4f64..0.4, -0.4f64..0.4),
        to in (-0.4f64..0.4, -0.4f64..0.4),
        via in (-0.4f64..0.4, -0.4f64..0.4),
        n in 3usize..=6,
    ) {
        let pot = RescaledPotential::limit(n, AlphaChoice::One, c(30.0, 0.0)).unwrap();
        let g = build_graph(&pot).unwrap();
        let (a, b, m) = (c(from.0, from.1), c(to.0, to.1), c(via.0, via.1));
        let end = Some(g.cuts.sqrt_w_plane(b));
        let direct = action_integral_from(&g.cuts, &ComplexPath::new(&g.cuts, vec![a, b]).unwrap(), end, 1e-13).unwrap();
        let bent = action_integral_from(&g.cuts, &ComplexPath::new(&g.cuts, vec![a, m, b]).unwrap(), end, 1e-13).unwrap();
        prop_assert!((direct.value - bent.value).norm() <= 1e-10);
    }

    #[test]
    fn order_zero_predictions_lie_on_their_lines(modulus in 20.0f64..80.0, k in 1i32..=3) {
        let pot = RescaledPotential::limit(3, AlphaChoice::One, Complex64::from_polar(modulus, 0.1)).unwrap();
        let g = build_graph(&pot).unwrap();
        let ex = exceptional_set(&g, k, 0.25).unwrap();
        let opts = PredictOptions { q_max: 1, r_window: (-2, 2), ..Default::default() };
        for l in ex.lines.iter().map(|l| l.root) {
            for p in predict(&g, &ex, k, l, &opts).unwrap().into_iter().filter(|p| p.q > 0) {
                let d = g.lines[p.line].distance(p.order0);
                prop_assert!(d <= 1e-6, "order-0 point {} is {:.1e} off line {}", p.order0, d, p.line);
            }
        }
    }

    #[test]
    fn island_index_is_bounded(modulus in 20.0f64..60.0) {
        let pot = RescaledPotential::limit(3, AlphaChoice::One, c(modulus, 0.0)).unwrap();
        let g = build_graph(&pot).unwrap();
        let mut checked = 0;
        for k in [-1, 1, 2, 3] {
            let ex = exceptional_set(&g, k, 0.25).unwrap();
            // Inner lines exist only in the critical β = 0 graph; l = -k is handled by the sector-line formula there.
            for l in ex.lines.iter().map(|l| l.root).filter(|&l| l != -k) {
                let Some(&inner) = ex.lines_of(l).iter().find(|&&id| g.lines[id].is_inner()) else { continue };
                let bound = (g.lines[inner].actions.last().unwrap().im.abs() / (PI * modulus)).floor() as u32;
                let over = PredictOptions { q_max: bound + 1, r_window: (0, 0), ..Default::default() };
                let at = PredictOptions { q_max: bound, r_window: (0, 0), ..Default::default() };
                let rejected = matches!(predict(&g, &ex, k, l, &over), Err(Error::IslandOutOfRange { .. }));
                prop_assert!(rejected, "q_max = {} accepted", bound + 1);
                prop_assert!(predict(&g, &ex, k, l, &at).is_ok());
                checked += 1;
            }
        }
        prop_assert!(checked > 0);
    }
}

/// Away from the quantized values the S_{-1} boundary lines carry zeros of ψ_1.
#[test]
fn zeros_return_off_quantization() {
    let base = RescaledPotential::limit(2, AlphaChoice::Rotated, c(1.0, 0.0)).unwrap();
    let s = 2;
    let quantized = quantize(&base, 1, s..=s).unwrap()[0].refined;
    let lambda = 2.0 * s as f64 + 2.0;
    assert!((quantized.re - lambda).abs() > 0.5);
    let pot = base.with_lambda(c(lambda, 0.0)).unwrap();
    let g = build_graph(&pot).unwrap();
    let series = build_series(&pot, &g.cuts, 2).unwrap();
    let fs = FundamentalSolution::new(&g, &series, 1, c(0.0, 0.0)).unwrap();
    let ex = exceptional_set(&g, 1, 0.25).unwrap();
    let pad = 0.5 / lambda;
    let mut tube_zeros = 0;
    for &id in ex.lines_of(-1).iter().filter(|&&id| is_infinite(&g, id)) {
        for j in 1..8 {
            let (t0, t1) = (j as f64 * PI, (j + 1) as f64 * PI);
            if let Some(tube) = line_box(&g, id, -1, t0, t1, pad).unwrap() {
                tube_zeros += find_zeros(&fs, tube, &FindOptions::default()).unwrap().len();
            }
        }
    }
    assert!(tube_zeros > 0);
}
