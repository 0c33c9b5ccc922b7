use metis_kit::config::RoutingConfig;
use metis_kit::hypergraph::{build_bivariate, build_routing_hypergraph, Demand, Hypergraph, Topology};
use metis_kit::mask::{self, KlDirection, MaskOptions, MaskableModel, Objective, OutputKind};
use metis_kit::matrix::Matrix;
use metis_kit::route::{self, PathChoiceModel};
use metis_kit::{pipeline, Error};
use proptest::prelude::*;
use std::collections::BTreeSet;

#[test]
fn overlapping_cell_coverage() {
    // users are hyperedges, base stations are vertices
    let stations = vec![vec![20.0], vec![40.0]];
    let users = vec![vec![1.0], vec![2.0], vec![0.5], vec![1.5]];
    let coverage = [(0, 0), (1, 0), (1, 1), (2, 1), (3, 0), (3, 1)];
    let h = build_bivariate(stations, users, &coverage).unwrap();
    let want = [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 1.0]];
    for (e, row) in want.iter().enumerate() {
        assert_eq!(h.incidence().row(e), row);
    }
    let dual = h.dual().unwrap();
    assert_eq!(dual.incidence().row(0), &[1.0, 1.0, 0.0, 1.0]);
}

#[test]
fn uncovered_user_is_rejected() {
    let err = build_bivariate(vec![vec![1.0]], vec![vec![1.0], vec![1.0]], &[(0, 0)]).unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");
}

/// Every simple path from `src` to `dst`, found by plain recursion.
fn all_simple_paths(t: &Topology, src: usize, dst: usize) -> Vec<Vec<usize>> {
    fn go(t: &Topology, at: usize, dst: usize, seen: &mut Vec<usize>, links: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if at == dst {
            out.push(links.clone());
            return;
        }
        for (l, link) in t.links.iter().enumerate() {
            if link.u == at && !seen.contains(&link.v) {
                seen.push(link.v);
                links.push(l);
                go(t, link.v, dst, seen, links, out);
                links.pop();
                seen.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(t, src, dst, &mut vec![src], &mut Vec::new(), &mut out);
    out
}

fn within_one_hop(t: &Topology, src: usize, dst: usize) -> BTreeSet<Vec<usize>> {
    let all = all_simple_paths(t, src, dst);
    let shortest = all.iter().map(Vec::len).min().unwrap();
    all.into_iter().filter(|p| p.len() <= shortest + 1).collect()
}

#[test]
fn nsfnet_candidates_match_exhaustive_enumeration() {
    let t = Topology::nsfnet();
    let got = route::candidate_paths(&t, 0, 12).unwrap();
    let set: BTreeSet<Vec<usize>> = got.iter().cloned().collect();
    assert_eq!(set.len(), got.len(), "duplicate candidates");
    assert_eq!(set, within_one_hop(&t, 0, 12));
    assert!(got.windows(2).all(|w| w[0].len() <= w[1].len()));
}

fn theta() -> [f64; 4] {
    pipeline::routing_theta(&RoutingConfig::default()).unwrap()
}

#[test]
fn congested_detour_lands_in_the_first_quadrant() {
    let mut t = Topology::undirected(6, &[(0, 1), (1, 5), (0, 2), (2, 5), (1, 3), (3, 5)], 10.0).unwrap();
    let hot = t.link_between(2, 5).unwrap();
    t.links[hot].load_mbps = 5.0;
    t.demands = vec![Demand { src: 0, dst: 5, mbps: 1.0 }];
    let ex = pipeline::explain(t, theta(), &MaskOptions::default()).unwrap();
    let paths = &ex.model.candidates().paths[0];
    let nodes = |k: usize| ex.model.topology().path_nodes(0, 5, &paths[k]).unwrap();
    let points = route::reroute_points(&ex.model, &ex.mask.w).unwrap();
    assert_eq!(points.len(), 1);
    let p = &points[0];
    // orient the point so that p1 is the congested detour
    let (mask_gap, latency_gap) = if nodes(p.p1) == [0, 2, 5] { (p.mask_gap, p.latency_gap) } else { (-p.mask_gap, -p.latency_gap) };
    // detour: 0→2 carries the moved 1 Mbps, 2→5 adds it to 5 Mbps background;
    // the other alternative shares 0→1 with the current route and adds 1 Mbps to 1→5
    let detour = 1.0 / 9.0 + 1.0 / 4.0;
    let direct = 1.0 / 9.0 + 1.0 / 9.0;
    assert!((latency_gap - (detour - direct)).abs() < 1e-12, "{latency_gap}");
    assert!(mask_gap > 0.0 && latency_gap > 0.0, "({mask_gap}, {latency_gap})");
}

#[test]
fn isomorphic_detours_have_no_latency_gap() {
    let mut t = Topology::undirected(6, &[(0, 1), (1, 2), (2, 3), (0, 4), (4, 2), (1, 5), (5, 3)], 10.0).unwrap();
    t.demands = vec![Demand { src: 0, dst: 3, mbps: 1.0 }];
    let ex = pipeline::explain(t, theta(), &MaskOptions::default()).unwrap();
    let points = route::reroute_points(&ex.model, &ex.mask.w).unwrap();
    assert!(!points.is_empty());
    assert!(points.iter().all(|p| p.latency_gap == 0.0));
    let report = route::reroute_indicator_eval(points, 1).unwrap();
    assert_eq!(report.quadrant_fraction, 0.0);
}

#[test]
fn quadrant_fraction_ignores_points_on_the_axes() {
    let pt = |m: f64, l: f64| route::ReroutePoint { demand: 0, p1: 0, p2: 1, mask_gap: m, latency_gap: l };
    let mut points = vec![pt(0.0, 0.0); 9];
    points.extend([pt(0.2, 1.0), pt(-0.1, -2.0), pt(0.3, -1.0), pt(0.0, 4.0)]);
    let r = route::reroute_indicator_eval(points.clone(), 10).unwrap();
    assert!((r.quadrant_fraction - 2.0 / 3.0).abs() < 1e-15);
    assert!(matches!(route::reroute_indicator_eval(points[..9].to_vec(), 10), Err(Error::InsufficientData(_))));
}

#[test]
fn identity_mask_has_zero_divergence_on_nsfnet() {
    let t = route::TrafficConfig::default().apply(&Topology::nsfnet(), 3);
    let model = PathChoiceModel::new(t, theta()).unwrap();
    let h = model.hypergraph().unwrap();
    let obj = Objective::new(&model, &h, 0.25, 1.0, KlDirection::MaskedFirst).unwrap();
    let loss = obj.loss(h.incidence()).unwrap();
    assert_eq!(loss.divergence, 0.0);
}

fn small_model() -> (PathChoiceModel, Hypergraph) {
    let t = route::TrafficConfig::default().apply(&Topology::undirected(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)], 10.0).unwrap(), 1);
    let model = PathChoiceModel::new(t, theta()).unwrap();
    let h = model.hypergraph().unwrap();
    (model, h)
}

fn hypergraph_strategy() -> impl Strategy<Value = Hypergraph> {
    (1usize..6, 1usize..6).prop_flat_map(|(n_e, n_v)| {
        (
            proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, 2), n_v),
            proptest::collection::vec(proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1), n_e),
            proptest::collection::vec(proptest::collection::vec(any::<bool>(), n_v), n_e),
        )
            .prop_map(move |(vf, ef, mut cover)| {
                for row in &mut cover {
                    row[0] = true;
                }
                let pairs: Vec<(usize, usize)> = cover
                    .iter()
                    .enumerate()
                    .flat_map(|(e, row)| row.iter().enumerate().filter(|(_, &c)| c).map(move |(v, _)| (e, v)))
                    .collect();
                build_bivariate(vf, ef, &pairs).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialization_reproduces_every_bit(h in hypergraph_strategy()) {
        let back = Hypergraph::from_json(&h.to_json()).unwrap();
        let bits = |m: &[Vec<f64>]| m.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.vertex_features), bits(&h.vertex_features));
        prop_assert_eq!(bits(&back.edge_features), bits(&h.edge_features));
        prop_assert_eq!(back.incidence(), h.incidence());
    }

    #[test]
    fn candidates_contain_shortest_and_nothing_longer(src in 0usize..14, dst in 0usize..14) {
        prop_assume!(src != dst);
        let t = Topology::nsfnet();
        let got = route::candidate_paths(&t, src, dst).unwrap();
        let want = within_one_hop(&t, src, dst);
        prop_assert_eq!(got.iter().cloned().collect::<BTreeSet<_>>(), want);
    }

    #[test]
    fn routing_rows_are_distributions(raw in proptest::collection::vec(-8.0f64..8.0, 256)) {
        let (model, h) = small_model();
        let inc = h.incidence();
        let wp = Matrix::from_vec(inc.rows(), inc.cols(), raw[..inc.as_slice().len()].to_vec()).unwrap();
        let w = mask::gate(inc, &wp).unwrap();
        let (rows, chosen) = route::routing_decisions(&model, &h, &w).unwrap();
        for (y, &c) in rows.iter().zip(&chosen) {
            prop_assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(y.iter().all(|&p| p >= 0.0));
            prop_assert!(c < y.len());
        }
    }

    #[test]
    fn gate_respects_incidence(raw in proptest::collection::vec(-50.0f64..50.0, 16)) {
        let h = build_routing_hypergraph(&Topology::example(), &metis_kit::hypergraph::example_routes()).unwrap();
        let inc = h.incidence();
        let wp = Matrix::from_vec(inc.rows(), inc.cols(), raw).unwrap();
        let w = mask::gate(inc, &wp).unwrap();
        for (x, i) in w.as_slice().iter().zip(inc.as_slice()) {
            prop_assert!(*x >= 0.0 && *x <= *i);
        }
    }

    #[test]
    fn entropy_peaks_at_one_half(p in 0.0f64..=1.0) {
        let inc = Matrix::filled(1, 1, 1.0);
        let h = |x: f64| mask::entropy(&Matrix::filled(1, 1, x), &inc);
        prop_assert!(h(p) <= h(0.5) + 1e-15);
        prop_assert_eq!(h(p) == 0.0, p == 0.0 || p == 1.0);
    }

    #[test]
    fn discrete_divergence_is_non_negative(a in proptest::collection::vec(0.01f64..1.0, 3), b in proptest::collection::vec(0.01f64..1.0, 3)) {
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
        let (p, q) = (norm(&a), norm(&b));
        let kind = OutputKind::Discrete { segments: vec![3] };
        for dir in [KlDirection::MaskedFirst, KlDirection::ReferenceFirst] {
            prop_assert!(mask::divergence(&p, &q, &kind, dir).unwrap() >= -1e-15);
            prop_assert_eq!(mask::divergence(&p, &p, &kind, dir).unwrap(), 0.0);
        }
        prop_assert_eq!(mask::divergence(&p, &p, &OutputKind::Continuous, KlDirection::MaskedFirst).unwrap(), 0.0);
    }

    #[test]
    fn latency_is_increasing_and_continuous(cap in 0.5f64..100.0, a in 0.0f64..2.0, b in 0.0f64..2.0) {
        let (lo, hi) = (a.min(b) * cap, a.max(b) * cap);
        prop_assume!(hi - lo > 1e-9 * cap);
        prop_assert!(route::link_latency(cap, lo).unwrap() < route::link_latency(cap, hi).unwrap());
        let knee = route::LATENCY_KNEE * cap;
        let eps = 1e-9 * cap;
        let jump = route::link_latency(cap, knee + eps).unwrap() - route::link_latency(cap, knee - eps).unwrap();
        prop_assert!(jump.abs() < 1e-5 / cap);
    }
}

#[test]
fn mask_bounds_hold_on_the_routing_model() {
    let (model, h) = small_model();
    let inc = h.incidence().clone();
    let opts = MaskOptions { steps: 300, init_jitter: 2.0, seed: 4, ..MaskOptions::default() };
    let mut checked = 0;
    mask::optimize_with(&model, &h, &opts, |_, w| {
        for (x, i) in w.as_slice().iter().zip(inc.as_slice()) {
            assert!(*x >= 0.0 && *x <= *i);
        }
        checked += 1;
    })
    .unwrap();
    assert!(checked >= 300);
    assert!(matches!(model.output_kind(), OutputKind::Discrete { .. }));
}
