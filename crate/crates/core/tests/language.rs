mod oracles;

use embref_core::geom::{OrientedBox, Pose, Role, Vec3};
use embref_core::language::{
    classify_text, enumerate_utterances, parse, realize, resolve, Anchor, Confidence, ExpressionAst, Frame, ParseError,
    Relation, ResolveInput, Strategy, DEFAULT_KAPPA, GRAMMAR,
};
use embref_core::render::agent_view;
use embref_core::scenegen::{build_scene, Category, GenConfig, Landmark, Placement, Scene};
use proptest::prelude::*;
use rayon::prelude::*;

fn scene(seed: u64) -> Scene {
    build_scene(seed, ((seed * 29) % 181) as f64, Placement::Random, &GenConfig::default()).unwrap()
}

fn argmax(p: &[f64]) -> usize {
    (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b })
}

#[test]
fn enumerated_expressions_round_trip_across_scenes() {
    let failures: usize = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let s = scene(seed);
            let view = agent_view(&s, Role::Speaker);
            let utts = enumerate_utterances(&s, &view);
            let again = enumerate_utterances(&s, &view);
            assert_eq!(utts, again);
            assert!(!utts.is_empty() && utts.len() <= 200);
            assert!(utts.iter().any(|u| u.ast.unwrap().strategy == Strategy::ListenerPerspective));
            let visible = s.env.landmarks.iter().filter(|l| view.landmark_visible(l.category)).count();
            let lr = utts.iter().filter(|u| u.ast.unwrap().strategy == Strategy::LandmarkRelative).count();
            if visible >= 4 {
                assert!(lr >= 4);
            }
            utts.iter()
                .filter(|u| {
                    let ast = u.ast.unwrap();
                    !matches!(parse(&realize(&ast)), Ok(p) if p.ast == ast && p.confidence == Confidence::Exact)
                })
                .count()
        })
        .sum();
    assert_eq!(failures, 0);
}

#[test]
fn template_text_examples() {
    let p = parse("the ball closest to me").unwrap();
    assert_eq!(p.ast, ExpressionAst::new(Strategy::SpeakerPerspective, Relation::Nearest, Anchor::SelfAgent, Frame::Speaker));
    assert_eq!(p.confidence, Confidence::Exact);
    let q = parse("  The  SPHERE nearest to me! ").unwrap();
    assert_eq!(q, p);
    let b = parse("the ball between the sofa and the lamp").unwrap();
    assert_eq!(b.ast.relation, Relation::Between);
    assert_eq!(b.ast.anchor, Anchor::Landmark(Category::Sofa));
    assert_eq!(b.ast.secondary, Some(Anchor::Landmark(Category::Lamp)));
    assert_eq!(realize(&b.ast), "the ball between the sofa and the lamp");
    assert_eq!(parse(""), Err(ParseError::Empty));
    assert!(matches!(parse("hello there"), Err(ParseError::NoCues(_))));
    assert!(GRAMMAR.contains("Productions"));
}

#[test]
fn fallback_prefers_landmark_over_perspective() {
    let p = parse("it's the one by the sofa on your right").unwrap();
    assert_eq!(p.confidence, Confidence::Fallback);
    assert_eq!(p.ast.strategy, Strategy::LandmarkRelative);
    assert_eq!(p.ast.anchor, Anchor::Landmark(Category::Sofa));
}

#[test]
fn fallback_precedence_table() {
    // (cue word, rank) with rank 0 the strongest.
    let cues = [("couch", 0, Strategy::LandmarkRelative), ("your", 1, Strategy::ListenerPerspective), ("other", 2, Strategy::ReferentRelative), ("my", 3, Strategy::SpeakerPerspective)];
    for mask in 1u32..16 {
        let present: Vec<_> = cues.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, c)| *c).collect();
        let want = present.iter().min_by_key(|c| c.1).unwrap().2;
        for order in [false, true] {
            let mut words: Vec<&str> = present.iter().map(|c| c.0).collect();
            if order {
                words.reverse();
            }
            let text = format!("uhh {} stuff left", words.join(" blah "));
            let p = parse(&text).unwrap();
            assert_eq!(p.confidence, Confidence::Fallback, "{text}");
            assert_eq!(p.ast.strategy, want, "{text}");
            assert_eq!(classify_text(&text), (want, true));
        }
    }
}

#[test]
fn template_classification_is_exact() {
    let ast = ExpressionAst::new(Strategy::ReferentRelative, Relation::LeftOf, Anchor::OtherReferents, Frame::Listener);
    assert_eq!(classify_text(&realize(&ast)), (Strategy::ReferentRelative, false));
}

fn table(center: Vec3) -> Landmark {
    Landmark {
        id: 0,
        category: Category::Table,
        bbox: OrientedBox {
            center,
            half: Vec3::new(0.5, 0.4, 0.375),
            yaw: 0.0,
        },
    }
}

#[test]
fn closest_to_table_picks_the_dominant_referent() {
    let lms = [table(Vec3::new(3.0, 0.0, 0.375))];
    let r = [Vec3::new(3.0, 0.6, 0.85), Vec3::new(1.0, 1.5, 0.1), Vec3::new(4.5, -1.5, 0.1)];
    let input = ResolveInput {
        referents: &r,
        viewer: Pose::level(Vec3::new(0.0, 0.0, 1.6), 0.0),
        speaker: None,
        landmarks: &lms,
        visible_landmarks: vec![Category::Table],
        kappa: DEFAULT_KAPPA,
    };
    let p = resolve(&parse("the ball closest to the table").unwrap().ast, &input);
    assert_eq!(argmax(&p), 0);
    // Invisible landmark anchors resolve uniformly.
    let hidden = ResolveInput {
        visible_landmarks: vec![],
        ..input.clone()
    };
    let u = resolve(&parse("the ball closest to the table").unwrap().ast, &hidden);
    assert!(u.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
}

#[test]
fn speaker_frame_needs_a_visible_speaker() {
    let r = [Vec3::new(3.0, 1.0, 0.1), Vec3::new(3.0, -1.0, 0.1), Vec3::new(5.0, 0.0, 0.1)];
    let input = ResolveInput {
        referents: &r,
        viewer: Pose::level(Vec3::ZERO, 0.0),
        speaker: None,
        landmarks: &[],
        visible_landmarks: vec![],
        kappa: DEFAULT_KAPPA,
    };
    let p = resolve(&parse("the ball on my left").unwrap().ast, &input);
    assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    let seen = ResolveInput {
        speaker: Some(Pose::level(Vec3::new(6.0, 0.0, 1.6), 180.0)),
        ..input
    };
    // Facing back toward the origin, the speaker's left is -y.
    let q = resolve(&parse("the ball on my left").unwrap().ast, &seen);
    assert_eq!(argmax(&q), 1);
}

#[test]
fn mirrored_pair_on_your_left() {
    let r = [Vec3::new(3.0, 1.0, 0.1), Vec3::new(3.0, -1.0, 0.1)];
    let input = ResolveInput {
        referents: &r,
        viewer: Pose::level(Vec3::new(0.0, 0.0, 1.6), 0.0),
        speaker: None,
        landmarks: &[],
        visible_landmarks: vec![],
        kappa: DEFAULT_KAPPA,
    };
    let p = resolve(&parse("the ball on your left").unwrap().ast, &input);
    assert!(p[0] > 0.5);
}

fn lateral_asts() -> Vec<ExpressionAst> {
    vec![
        ExpressionAst::new(Strategy::ListenerPerspective, Relation::LeftOf, Anchor::None, Frame::Listener),
        ExpressionAst::new(Strategy::ListenerPerspective, Relation::RightOf, Anchor::None, Frame::Listener),
        ExpressionAst::new(Strategy::ListenerPerspective, Relation::Leftmost, Anchor::None, Frame::Listener),
        ExpressionAst::new(Strategy::ListenerPerspective, Relation::Rightmost, Anchor::None, Frame::Listener),
        ExpressionAst::new(Strategy::ReferentRelative, Relation::LeftOf, Anchor::OtherReferents, Frame::Listener),
        ExpressionAst::new(Strategy::ReferentRelative, Relation::RightOf, Anchor::OtherReferents, Frame::Listener),
    ]
}

fn mirror_partner(rel: Relation) -> Relation {
    match rel {
        Relation::LeftOf => Relation::RightOf,
        Relation::RightOf => Relation::LeftOf,
        Relation::Leftmost => Relation::Rightmost,
        Relation::Rightmost => Relation::Leftmost,
        r => r,
    }
}

proptest! {
    #[test]
    fn mirroring_swaps_left_and_right(
        pts in prop::collection::vec((1.0f64..6.0, -3.0f64..3.0), 3),
        yaw in 0.0f64..360.0,
    ) {
        let viewer = Pose::level(Vec3::new(1.0, 2.0, 1.6), yaw);
        let (f, r, _) = viewer.basis();
        let world: Vec<Vec3> = pts.iter().map(|(a, b)| viewer.position + f * *a + r * *b - Vec3::new(0.0, 0.0, 1.5)).collect();
        let mirrored: Vec<Vec3> = pts.iter().map(|(a, b)| viewer.position + f * *a - r * *b - Vec3::new(0.0, 0.0, 1.5)).collect();
        let mk = |refs: &'static [Vec3]| ResolveInput {
            referents: refs,
            viewer,
            speaker: None,
            landmarks: &[],
            visible_landmarks: vec![],
            kappa: DEFAULT_KAPPA,
        };
        let a: &'static [Vec3] = Box::leak(world.into_boxed_slice());
        let b: &'static [Vec3] = Box::leak(mirrored.into_boxed_slice());
        for ast in lateral_asts() {
            let mut swapped = ast;
            swapped.relation = mirror_partner(ast.relation);
            let pa = resolve(&ast, &mk(a));
            let pb = resolve(&swapped, &mk(b));
            for i in 0..3 {
                prop_assert!((pa[i] - pb[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn resolve_normalizes_and_commutes_with_reindexing(
        pts in prop::collection::vec((0.5f64..6.0, -3.0f64..3.0, 0.05f64..1.0), 3),
        which in 0usize..40,
    ) {
        let r: Vec<Vec3> = pts.iter().map(|(x, y, z)| Vec3::new(*x, *y, *z)).collect();
        let lms = [table(Vec3::new(3.0, 0.5, 0.375))];
        let mk = |refs| ResolveInput {
            referents: refs,
            viewer: Pose::level(Vec3::new(0.0, 0.0, 1.6), 0.0),
            speaker: Some(Pose::level(Vec3::new(6.0, 1.0, 1.7), 200.0)),
            landmarks: &lms,
            visible_landmarks: vec![Category::Table],
            kappa: DEFAULT_KAPPA,
        };
        let all = embref_core::language::all_expressions(&[Category::Table]);
        let ast = all[which % all.len()];
        let p = resolve(&ast, &mk(&r));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let perm = [2usize, 0, 1];
        let rp: Vec<Vec3> = perm.iter().map(|&i| r[i]).collect();
        let q = resolve(&ast, &mk(&rp));
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((q[k] - p[i]).abs() < 1e-9);
        }
    }
}

#[test]
fn resolve_agrees_with_hard_rule_oracle() {
    let (agree, total) = (0..200u64)
        .into_par_iter()
        .map(|seed| {
            let s = scene(seed);
            let view = agent_view(&s, Role::Listener);
            let speaker_view = agent_view(&s, Role::Speaker);
            let centers: Vec<Vec3> = s.referents.iter().map(|r| r.center()).collect();
            let mut input = ResolveInput::for_listener(&s, &view, &centers, DEFAULT_KAPPA);
            input.speaker = Some(s.speaker_pose);
            let (mut a, mut t) = (0usize, 0usize);
            for u in enumerate_utterances(&s, &speaker_view) {
                let ast = u.ast.unwrap();
                if let Some(want) = oracles::hard_rule(&ast, &input) {
                    t += 1;
                    a += (argmax(&resolve(&ast, &input)) == want) as usize;
                }
            }
            (a, t)
        })
        .reduce(|| (0, 0), |x, y| (x.0 + y.0, x.1 + y.1));
    assert!(total > 2000, "only {total} unambiguous cases");
    let rate = agree as f64 / total as f64;
    eprintln!("hard-rule agreement {rate:.4} over {total}");
    assert!(rate >= 0.95, "agreement {rate:.4} over {total}");
}
