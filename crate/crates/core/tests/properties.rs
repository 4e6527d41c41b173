use proptest::prelude::*;
use smpnp::driver::RunConfig;
use smpnp::mesh::{extract_solvent_submesh, parse_mesh, synth_channel_mesh, write_mesh, ChannelGeometry};
use smpnp::node::{block2_update, newton_solve, NodeSystem};
use smpnp::physics::{capped_exp, slotboom_forward, water_fraction};
use smpnp::{Execution, ModelConstants, SpeciesSet};

fn mixture() -> (ModelConstants, SpeciesSet) {
    let k = ModelConstants::default();
    let set = SpeciesSet::standard_mixture(k.gamma);
    (k, set)
}

/// Concentrations with packing fraction `γ Σ v c` equal to `load`.
fn scaled(raw: &[f64], load: f64, set: &SpeciesSet, gamma: f64) -> Vec<f64> {
    let l: f64 = gamma * set.iter().zip(raw).map(|(s, c)| s.v * c).sum::<f64>();
    raw.iter().map(|c| c * load / l).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn slotboom_round_trip(raw in prop::collection::vec(0.01f64..1.0, 4), load in 0.01f64..0.9, u in -8.0f64..8.0) {
        let (k, set) = mixture();
        let c = scaled(&raw, load, &set, k.gamma);
        let cbar = slotboom_forward(&set, &k, u, &c).unwrap();
        let sys = NodeSystem::new(&set, &k, &cbar, u).unwrap();
        let start: Vec<f64> = set.iter().map(|s| s.c_b).collect();
        let r = newton_solve(&sys, &start, k.newton_tol, k.max_newton).unwrap();
        let cmax = c.iter().cloned().fold(0.0, f64::max);
        for (a, b) in c.iter().zip(&r.solution) {
            prop_assert!((a - b).abs() <= 1e-9 * cmax, "{c:?} vs {:?}", r.solution);
        }
    }

    #[test]
    fn node_solution_is_feasible(t in prop::collection::vec(1e-3f64..20.0, 4), u in -60.0f64..60.0) {
        let (k, set) = mixture();
        let sys = NodeSystem::new(&set, &k, &t, u).unwrap();
        let r = newton_solve(&sys, &[0.1; 4], k.newton_tol, k.max_newton).unwrap();
        prop_assert!(r.converged);
        prop_assert!(r.solution.iter().all(|&p| p > 0.0 && p.is_finite()));
        prop_assert!(water_fraction(&set, k.gamma, &r.solution).is_ok());
    }

    #[test]
    fn node_solution_matches_water_root(t in prop::collection::vec(1e-3f64..5.0, 4), u in -5.0f64..5.0) {
        let (k, set) = mixture();
        let sys = NodeSystem::new(&set, &k, &t, u).unwrap();
        let r = newton_solve(&sys, &[0.1; 4], k.newton_tol, k.max_newton).unwrap();
        let root = sys.water_root_point();
        for (a, b) in r.solution.iter().zip(&root) {
            prop_assert!((a - b).abs() <= 1e-9 * b.max(1e-3));
        }
    }

    #[test]
    fn capped_exp_is_bounded(x in -1e6f64..1e6, cap in 1.0f64..60.0) {
        let e = capped_exp(x, cap);
        prop_assert!(e.is_finite() && e > 0.0);
        prop_assert!(e <= cap.exp() * (1.0 + 1e-15) && e >= (-cap).exp() * (1.0 - 1e-15));
    }

    #[test]
    fn mesh_text_round_trip(nx in 3usize..6, nz in 3usize..8) {
        let mut g = ChannelGeometry::default();
        g.resolution = [nx, nx, nz];
        let mesh = synth_channel_mesh(&g).unwrap();
        let again = parse_mesh(&write_mesh(&mesh)).unwrap();
        prop_assert_eq!(again.vertices(), mesh.vertices());
        prop_assert_eq!(again.tets(), mesh.tets());
        prop_assert_eq!(again.regions(), mesh.regions());
        prop_assert_eq!(again.facets(), mesh.facets());
        prop_assert_eq!(again.facet_labels(), mesh.facet_labels());
    }

    #[test]
    fn restrict_inverts_prolong(seed in prop::collection::vec(-10.0f64..10.0, 1..50), fill in -5.0f64..5.0) {
        let mesh = synth_channel_mesh(&ChannelGeometry::default().with_resolution(4)).unwrap();
        let sub = extract_solvent_submesh(&mesh).unwrap();
        let local: Vec<f64> = (0..sub.num_vertices()).map(|i| seed[i % seed.len()] + i as f64).collect();
        let parent = sub.prolong(&local, fill).unwrap();
        prop_assert_eq!(sub.restrict(&parent).unwrap(), local);
        let off = (0..mesh.num_vertices()).filter(|&v| sub.local_of(v).is_none());
        for v in off {
            prop_assert_eq!(parent[v], fill);
        }
    }

    #[test]
    fn config_text_round_trip(omega in 0.05f64..1.0, sigma in -2.0f64..2.0, res in 4usize..20, ut in -2.0f64..2.0) {
        let text = format!("omega = {omega}\nsigma = {sigma}\nresolution = {res}\nu_t = {ut}\n");
        let c = RunConfig::parse(&text, std::path::Path::new("/x")).unwrap();
        let again = RunConfig::parse(&c.to_text(), std::path::Path::new("/x")).unwrap();
        prop_assert_eq!(again.constants, c.constants);
        prop_assert_eq!(again.mesh, c.mesh);
    }
}

#[test]
fn block2_is_identical_across_execution_modes() {
    let (k, set) = mixture();
    let m = 2000;
    let u: Vec<f64> = (0..m).map(|v| 50.0 * ((v as f64) * 0.37).sin()).collect();
    let targets: Vec<Vec<f64>> = (0..4).map(|i| (0..m).map(|v| 0.05 + 0.01 * ((v + i) % 17) as f64).collect()).collect();
    let start = vec![vec![0.1; m]; 4];
    let (a, ra) = block2_update(&set, &k, &targets, &u, &start, Execution::Sequential).unwrap();
    let (b, rb) = block2_update(&set, &k, &targets, &u, &start, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}
