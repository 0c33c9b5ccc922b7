use metis_kit::hypergraph::{build_routing_hypergraph, example_routes, Topology};
use metis_kit::tree::{fit, FitOptions};
use metis_kit_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mk_last_error()) }.to_str().unwrap().to_owned()
}

fn or_tree_json() -> CString {
    let x = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
    let y = [0.0, 1.0, 1.0, 1.0];
    let tree = fit(&x, &y, &[1.0; 4], &FitOptions::classify(4, 2)).unwrap();
    CString::new(tree.to_json().unwrap()).unwrap()
}

fn example_graph() -> *mut MkHypergraph {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { mk_hypergraph_example(&mut g) }, MkStatus::Ok);
    g
}

#[test]
fn tree_handle_predicts_and_renders() {
    let json = or_tree_json();
    let mut tree = ptr::null_mut();
    unsafe {
        assert_eq!(mk_tree_from_json(json.as_ptr(), &mut tree), MkStatus::Ok);
        let (mut leaves, mut features) = (0, 0);
        assert_eq!(mk_tree_leaf_count(tree, &mut leaves), MkStatus::Ok);
        assert_eq!(mk_tree_n_features(tree, &mut features), MkStatus::Ok);
        assert_eq!((leaves, features), (3, 2));
        for (x, want) in [([0.0, 0.0], 0.0), ([0.0, 1.0], 1.0), ([1.0, 0.0], 1.0), ([1.0, 1.0], 1.0)] {
            let mut v = -1.0;
            assert_eq!(mk_tree_predict(tree, x.as_ptr(), 2, &mut v), MkStatus::Ok);
            assert_eq!(v, want, "{x:?}");
        }
        let mut dot = ptr::null_mut();
        assert_eq!(mk_tree_to_dot(tree, &mut dot), MkStatus::Ok);
        assert!(CStr::from_ptr(dot).to_str().unwrap().contains("digraph"));
        mk_string_free(dot);
        mk_tree_free(tree);
    }
}

#[test]
fn wrong_feature_count_is_invalid_and_explained() {
    let json = or_tree_json();
    let mut tree = ptr::null_mut();
    unsafe {
        mk_tree_from_json(json.as_ptr(), &mut tree);
        let mut v = 0.0;
        assert_eq!(mk_tree_predict(tree, [1.0].as_ptr(), 1, &mut v), MkStatus::InvalidArgument);
        assert!(last_error().contains("reads 2 features"), "{}", last_error());
        mk_tree_free(tree);
    }
}

#[test]
fn malformed_inputs_map_to_distinct_codes() {
    let mut tree = ptr::null_mut();
    unsafe {
        assert_eq!(mk_tree_from_json(ptr::null(), &mut tree), MkStatus::NullArgument);
        assert!(last_error().contains("json"));
        let bad = CString::new("{\"nodes\": 3}").unwrap();
        assert_eq!(mk_tree_from_json(bad.as_ptr(), &mut tree), MkStatus::Parse);
        assert!(tree.is_null());
        let not_utf8 = [0xffu8, 0xfe, 0];
        assert_eq!(mk_tree_from_json(not_utf8.as_ptr().cast(), &mut tree), MkStatus::Utf8);
        let mut n = 0;
        assert_eq!(mk_tree_leaf_count(ptr::null(), &mut n), MkStatus::NullArgument);
    }
    let g = example_graph();
    // a successful call clears the message
    let (mut e, mut v) = (0, 0);
    unsafe { assert_eq!(mk_hypergraph_shape(g, &mut e, &mut v), MkStatus::Ok) };
    assert_eq!(last_error(), "");
    unsafe { mk_hypergraph_free(g) };
}

#[test]
fn example_hypergraph_round_trips_through_json() {
    let h = build_routing_hypergraph(&Topology::example(), &example_routes()).unwrap();
    let json = CString::new(h.to_json()).unwrap();
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(mk_hypergraph_from_json(json.as_ptr(), &mut g), MkStatus::Ok);
        let (mut e, mut v) = (0, 0);
        mk_hypergraph_shape(g, &mut e, &mut v);
        assert_eq!((e, v), (h.n_edges(), h.n_vertices()));
        let mut inc = vec![0.0; e * v];
        assert_eq!(mk_hypergraph_incidence(g, inc.as_mut_ptr(), inc.len()), MkStatus::Ok);
        assert_eq!(inc, h.incidence().as_slice());
        assert_eq!(mk_hypergraph_incidence(g, inc.as_mut_ptr(), inc.len() - 1), MkStatus::InvalidArgument);
        mk_hypergraph_free(g);
    }
}

#[test]
fn gate_norm_and_entropy_follow_the_incidence() {
    let g = example_graph();
    let (mut e, mut v) = (0, 0);
    unsafe { mk_hypergraph_shape(g, &mut e, &mut v) };
    let n = e * v;
    let mut inc = vec![0.0; n];
    unsafe { mk_hypergraph_incidence(g, inc.as_mut_ptr(), n) };
    let connections = inc.iter().filter(|&&i| i == 1.0).count() as f64;

    // σ(0) = 1/2 on every connection, 0 elsewhere
    let mut w = vec![f64::NAN; n];
    unsafe { assert_eq!(mk_mask_gate(g, vec![0.0; n].as_ptr(), n, w.as_mut_ptr()), MkStatus::Ok) };
    for (wi, ii) in w.iter().zip(&inc) {
        assert_eq!(*wi, 0.5 * ii);
    }
    let (mut norm, mut ent) = (0.0, 0.0);
    unsafe {
        assert_eq!(mk_mask_norm(w.as_ptr(), n, &mut norm), MkStatus::Ok);
        assert_eq!(mk_mask_entropy(g, w.as_ptr(), n, &mut ent), MkStatus::Ok);
    }
    assert!((norm - 0.5 * connections).abs() < 1e-12);
    assert!((ent - connections * std::f64::consts::LN_2).abs() < 1e-9);

    w[0] = 1.5;
    unsafe {
        assert_eq!(mk_mask_entropy(g, w.as_ptr(), n, &mut ent), MkStatus::InvalidArgument);
        assert_eq!(mk_mask_gate(g, w.as_ptr(), n - 1, w.as_mut_ptr()), MkStatus::InvalidArgument);
        mk_hypergraph_free(g);
    }
}

#[test]
fn divergence_matches_hand_computed_values() {
    let (p, q) = ([0.5, 0.5, 0.25, 0.75], [0.25, 0.75, 0.5, 0.5]);
    let kl = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * (x / y).ln()).sum::<f64>();
    let segs = [2usize, 2];
    let (mut fwd, mut rev, mut sq) = (0.0, 0.0, 0.0);
    unsafe {
        let st = mk_divergence_discrete(p.as_ptr(), q.as_ptr(), 4, segs.as_ptr(), 2, MkKlDirection::MaskedFirst, &mut fwd);
        assert_eq!(st, MkStatus::Ok, "{}", last_error());
        let st = mk_divergence_discrete(p.as_ptr(), q.as_ptr(), 4, segs.as_ptr(), 2, MkKlDirection::ReferenceFirst, &mut rev);
        assert_eq!(st, MkStatus::Ok);
        assert_eq!(mk_divergence_continuous(p.as_ptr(), q.as_ptr(), 4, &mut sq), MkStatus::Ok);
    }
    assert!((fwd - kl(&p, &q)).abs() < 1e-9, "{fwd}");
    assert!((rev - kl(&q, &p)).abs() < 1e-9, "{rev}");
    assert!((sq - 0.25).abs() < 1e-12);

    let bad = [3usize];
    let st = unsafe { mk_divergence_discrete(p.as_ptr(), q.as_ptr(), 4, bad.as_ptr(), 1, MkKlDirection::MaskedFirst, &mut fwd) };
    assert_eq!(st, MkStatus::InvalidArgument);
}

#[test]
fn qoe_charges_rebuffering_and_switches() {
    assert_eq!(mk_qoe(3000.0, 0.0, 3000.0), 3.0);
    assert!((mk_qoe(3000.0, 1.0, 1200.0) - (3.0 - 4.3 - 1.8)).abs() < 1e-12);
    let version = unsafe { CStr::from_ptr(mk_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/metis_kit.h")).unwrap();
    let source = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let names: Vec<&str> = source
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(names.len() >= 18, "{names:?}");
    for name in names {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}
