use formation_mpc::graph::{PConstruction, RandomFactor, Waveform};
use formation_mpc::scenario::{
    bundled, AutotuneDoc, KsDoc, LinkDoc, ObserverInit, PerAgent, ScenarioDocument, Theorem2Doc,
};
use proptest::prelude::*;

fn waveform() -> impl Strategy<Value = Waveform> {
    prop_oneof![
        (0.01f64..5.0, -3.0f64..3.0).prop_map(|(frequency, phase)| Waveform::Sine { frequency, phase }),
        (0.01f64..5.0, -3.0f64..3.0).prop_map(|(frequency, phase)| Waveform::Square { frequency, phase }),
        Just(Waveform::Constant),
    ]
}

fn factor() -> impl Strategy<Value = RandomFactor> {
    prop_oneof![Just(RandomFactor::Held), (0.0f64..1.0).prop_map(RandomFactor::Fixed)]
}

fn link() -> impl Strategy<Value = LinkDoc> {
    (prop::bool::ANY, 0.0f64..0.9, waveform(), factor()).prop_map(|(edge, amplitude, waveform, factor)| LinkDoc {
        edge: edge.then_some([2, 1]),
        pin: (!edge).then_some(1),
        amplitude,
        waveform,
        factor,
    })
}

prop_compose! {
    fn document()(
        seed in any::<u64>(),
        t_final in 0.0f64..50.0,
        substeps in 1usize..40,
        snapshot in prop::bool::ANY,
        literal in prop::option::of(prop::bool::ANY),
        links in prop::collection::vec(link(), 0..2),
        c_xi in prop::collection::vec(0.5f64..10.0, 3),
        per_agent in prop::bool::ANY,
        init in prop_oneof![Just(ObserverInit::Zero), Just(ObserverInit::OwnState), Just(ObserverInit::Exact)],
        c in 0.1f64..5.0,
        k_s in prop::option::of(1e-3f64..1.0),
        lambda in (0.1f64..3.0, 0.1f64..3.0),
        x0 in prop::collection::vec(-2.0f64..2.0, 3),
        q in 0.1f64..20.0,
        theorem2 in prop::option::of((0.0f64..2.0, 0.0f64..2.0)),
    ) -> ScenarioDocument {
        let mut doc = bundled("example1").unwrap();
        doc.meta.seed = seed;
        doc.meta.t_final = t_final;
        doc.meta.h = doc.controller.period / substeps as f64;
        doc.meta.snapshot_mode = snapshot;
        doc.meta.p_construction = literal.map(|l| if l { PConstruction::Literal } else { PConstruction::Reciprocal });
        // keep at most one fault per site
        doc.faults.links = links.into_iter().fold(Vec::new(), |mut acc: Vec<LinkDoc>, l| {
            if !acc.iter().any(|a| a.edge == l.edge && a.pin == l.pin) {
                acc.push(l);
            }
            acc
        });
        doc.observers.c_xi = if per_agent { PerAgent::Each(c_xi) } else { PerAgent::All(c_xi[0]) };
        doc.observers.init = init;
        doc.controller.c = c;
        doc.controller.lambda = vec![lambda.0 * lambda.1, lambda.0 + lambda.1];
        match k_s {
            Some(v) => doc.controller.k_s = KsDoc::Value(v),
            None => {
                doc.controller.k_s = KsDoc::Keyword("auto".into());
                doc.controller.autotune = Some(AutotuneDoc {
                    x_lo: vec![-1.0; 3],
                    x_hi: vec![1.0; 3],
                    samples: 64,
                    seed,
                });
            }
        }
        doc.followers[0].x0 = x0;
        doc.controller.q = vec![vec![q]];
        doc.diagnostics.theorem2 = theorem2.map(|(kappa1, kappa2)| Theorem2Doc { kappa1, kappa2, rho_s: None });
        doc
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialise_then_parse_is_identity(doc in document()) {
        let text = doc.to_toml().unwrap();
        let back = ScenarioDocument::parse(&text).unwrap();
        prop_assert_eq!(&back, &doc);

        let a = doc.build().unwrap();
        let b = back.build().unwrap();
        prop_assert_eq!(a.seed(), b.seed());
        prop_assert_eq!(a.t_final, b.t_final);
        prop_assert_eq!(a.substeps, b.substeps);
        prop_assert_eq!(a.snapshot_mode, b.snapshot_mode);
        prop_assert_eq!(a.p_construction, b.p_construction);
        prop_assert_eq!(a.faults.faults(), b.faults.faults());
        prop_assert_eq!(a.graph.adjacency(), b.graph.adjacency());
        for (x, y) in a.agents.iter().zip(&b.agents) {
            prop_assert_eq!(&x.x0, &y.x0);
            prop_assert_eq!(&x.observer0, &y.observer0);
            prop_assert_eq!(x.c_xi, y.c_xi);
            prop_assert_eq!(&x.params, &y.params);
            prop_assert_eq!(&x.mpc.q, &y.mpc.q);
        }
    }
}

#[test]
fn bundled_documents_round_trip() {
    for name in ["example1", "example2"] {
        let doc = bundled(name).unwrap();
        assert_eq!(ScenarioDocument::parse(&doc.to_toml().unwrap()).unwrap(), doc);
    }
}

#[test]
fn one_based_indices_are_checked() {
    let mut doc = bundled("example1").unwrap();
    doc.faults.links[0].edge = Some([4, 1]);
    assert!(doc.build().unwrap_err().to_string().contains("out of range"));
    let mut doc = bundled("example1").unwrap();
    doc.faults.links[1].pin = Some(0);
    assert!(doc.build().is_err());
}

#[test]
fn auto_gain_needs_a_region() {
    let mut doc = bundled("example1").unwrap();
    doc.controller.k_s = KsDoc::Keyword("auto".into());
    assert!(doc.build().unwrap_err().to_string().contains("autotune"));
    doc.controller.k_s = KsDoc::Keyword("fast".into());
    assert!(doc.build().is_err());
}

#[test]
fn fault_amplitude_must_preserve_sign() {
    let mut doc = bundled("example1").unwrap();
    doc.faults.links[0].amplitude = 1.0;
    assert!(doc.build().is_err());
}
