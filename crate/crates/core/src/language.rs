//! The shared referential language: a closed template grammar over four
//! strategies, the realizer, a recursive-descent parser with keyword
//! fallback, and geometric resolution of an expression to a distribution
//! over referents.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Pose, Role, Vec3};
use crate::render::AgentView;
use crate::scenegen::{Category, Landmark, Scene};

pub const GRAMMAR: &str = include_str!("../grammar/grammar-v1.txt");
pub const GRAMMAR_VERSION: &str = "v1";

/// Sharpness of the soft relation scores, per unit of referent spacing.
pub const DEFAULT_KAPPA: f64 = 4.0;

/// Distance (m) under which a ball counts as next to a landmark.
const NEXT_TO_RANGE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    ReferentRelative,
    LandmarkRelative,
    ListenerPerspective,
    SpeakerPerspective,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::ReferentRelative,
        Strategy::LandmarkRelative,
        Strategy::ListenerPerspective,
        Strategy::SpeakerPerspective,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ReferentRelative => "REFERENT_RELATIVE",
            Strategy::LandmarkRelative => "LANDMARK_RELATIVE",
            Strategy::ListenerPerspective => "LISTENER_PERSPECTIVE",
            Strategy::SpeakerPerspective => "SPEAKER_PERSPECTIVE",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    InFrontOf,
    Behind,
    ClosestTo,
    FarthestFrom,
    NextTo,
    Between,
    Leftmost,
    Rightmost,
    Nearest,
    Middle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "category")]
pub enum Anchor {
    Landmark(Category),
    /// The listener, addressed as "you".
    Partner,
    /// The speaker, "me".
    #[serde(rename = "self")]
    SelfAgent,
    OtherReferents,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Speaker,
    Listener,
    AnchorIntrinsic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExpressionAst {
    pub strategy: Strategy,
    pub relation: Relation,
    pub anchor: Anchor,
    pub frame: Frame,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<Anchor>,
}

impl ExpressionAst {
    pub fn new(strategy: Strategy, relation: Relation, anchor: Anchor, frame: Frame) -> Self {
        Self {
            strategy,
            relation,
            anchor,
            frame,
            secondary: None,
        }
    }

    /// Strategy implied by the anchor and frame.
    pub fn implied_strategy(anchor: Anchor, frame: Frame) -> Strategy {
        match (anchor, frame) {
            (Anchor::Landmark(_), _) => Strategy::LandmarkRelative,
            (Anchor::OtherReferents, _) => Strategy::ReferentRelative,
            (_, Frame::Listener) => Strategy::ListenerPerspective,
            (_, Frame::Speaker) => Strategy::SpeakerPerspective,
            _ => Strategy::ReferentRelative,
        }
    }

    pub fn landmark(&self) -> Option<Category> {
        match self.anchor {
            Anchor::Landmark(c) => Some(c),
            _ => None,
        }
    }

    /// Whether resolving needs the speaker's pose.
    pub fn needs_speaker_pose(&self) -> bool {
        self.frame == Frame::Speaker || self.anchor == Anchor::SelfAgent
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceSource {
    Template,
    Human,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub ast: Option<ExpressionAst>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<f64>,
    pub source: UtteranceSource,
}

impl Utterance {
    pub fn template(ast: ExpressionAst) -> Self {
        Self {
            text: realize(&ast),
            ast: Some(ast),
            features: Vec::new(),
            source: UtteranceSource::Template,
        }
    }

    pub fn tokens(&self) -> usize {
        token_count(&self.text)
    }
}

pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn poss(frame: Frame) -> &'static str {
    match frame {
        Frame::Listener => "your",
        _ => "my",
    }
}

fn view_suffix(frame: Frame) -> &'static str {
    match frame {
        Frame::Listener => " from your view",
        Frame::Speaker => " from my view",
        Frame::AnchorIntrinsic => "",
    }
}

fn anchor_np(anchor: Anchor) -> String {
    match anchor {
        Anchor::Landmark(c) => format!("the {}", c.noun()),
        Anchor::OtherReferents => "the other two balls".into(),
        Anchor::SelfAgent => "me".into(),
        Anchor::Partner => "you".into(),
        Anchor::None => "the other two balls".into(),
    }
}

/// Deterministic English for an expression.
pub fn realize(ast: &ExpressionAst) -> String {
    let a = ast.anchor;
    let f = ast.frame;
    let side = |left: bool| if left { "left" } else { "right" };
    match ast.relation {
        Relation::Nearest | Relation::ClosestTo => format!("the ball closest to {}", anchor_np(a)),
        Relation::FarthestFrom => format!("the ball farthest from {}", anchor_np(a)),
        Relation::Leftmost | Relation::Rightmost => {
            format!("the ball furthest to {} {}", poss(f), side(ast.relation == Relation::Leftmost))
        }
        Relation::LeftOf | Relation::RightOf => {
            let left = ast.relation == Relation::LeftOf;
            match a {
                Anchor::None | Anchor::SelfAgent | Anchor::Partner => format!("the ball on {} {}", poss(f), side(left)),
                _ => format!("the ball to the {} of {}{}", side(left), anchor_np(a), view_suffix(f)),
            }
        }
        Relation::InFrontOf => format!("the ball in front of {}{}", anchor_np(a), view_suffix(f)),
        Relation::Behind => format!("the ball behind {}{}", anchor_np(a), view_suffix(f)),
        Relation::NextTo => format!("the ball next to {}", anchor_np(a)),
        Relation::Between => match (a, ast.secondary) {
            (Anchor::Landmark(x), Some(Anchor::Landmark(y))) => {
                format!("the ball between the {} and the {}", x.noun(), y.noun())
            }
            _ => "the ball between the other two balls".into(),
        },
        Relation::Middle => format!("the ball in the middle from {} view", poss(f)),
    }
}

/// Every expression the grammar can produce for a speaker who sees the
/// given landmark categories, in a fixed order.
pub fn all_expressions(visible_landmarks: &[Category]) -> Vec<ExpressionAst> {
    use Relation::*;
    let mut out = Vec::new();
    for (strategy, frame, me) in [
        (Strategy::SpeakerPerspective, Frame::Speaker, Anchor::SelfAgent),
        (Strategy::ListenerPerspective, Frame::Listener, Anchor::Partner),
    ] {
        out.push(ExpressionAst::new(strategy, Nearest, me, frame));
        out.push(ExpressionAst::new(strategy, FarthestFrom, me, frame));
        for rel in [Leftmost, Rightmost, LeftOf, RightOf, Middle] {
            out.push(ExpressionAst::new(strategy, rel, Anchor::None, frame));
        }
    }
    let rr = Strategy::ReferentRelative;
    let others = Anchor::OtherReferents;
    for rel in [Between, ClosestTo, FarthestFrom] {
        out.push(ExpressionAst::new(rr, rel, others, Frame::AnchorIntrinsic));
    }
    for rel in [InFrontOf, Behind, LeftOf, RightOf] {
        for frame in [Frame::AnchorIntrinsic, Frame::Listener, Frame::Speaker] {
            out.push(ExpressionAst::new(rr, rel, others, frame));
        }
    }
    let lr = Strategy::LandmarkRelative;
    let mut cats = visible_landmarks.to_vec();
    cats.sort();
    cats.dedup();
    for c in cats {
        let l = Anchor::Landmark(c);
        for rel in [ClosestTo, FarthestFrom, NextTo, InFrontOf, Behind] {
            out.push(ExpressionAst::new(lr, rel, l, Frame::AnchorIntrinsic));
        }
        for rel in [LeftOf, RightOf] {
            for frame in [Frame::AnchorIntrinsic, Frame::Listener, Frame::Speaker] {
                out.push(ExpressionAst::new(lr, rel, l, frame));
            }
        }
    }
    out
}

/// Candidate utterances for a speaker view; landmark anchors must be
/// visible to the speaker.
pub fn enumerate_utterances(scene: &Scene, speaker_view: &AgentView) -> Vec<Utterance> {
    let visible: Vec<Category> = scene
        .env
        .landmarks
        .iter()
        .map(|l| l.category)
        .filter(|c| speaker_view.landmark_visible(*c))
        .collect();
    all_expressions(&visible).into_iter().map(Utterance::template).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Exact,
    Fallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parsed {
    pub ast: ExpressionAst,
    pub confidence: Confidence,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("no strategy or relation cue in `{0}`")]
    NoCues(String),
}

const PHRASES: &[(&str, &str)] = &[
    ("point of view", "view"),
    ("coffee table", "table"),
    ("dining table", "table"),
    ("book shelf", "shelf"),
    ("floor lamp", "lamp"),
    ("potted plant", "plant"),
];

fn lexeme(w: &str) -> &str {
    match w {
        "sphere" | "orb" | "one" => "ball",
        "spheres" | "orbs" | "ones" => "balls",
        "nearest" => "closest",
        "perspective" | "viewpoint" => "view",
        "desk" => "table",
        "shelves" | "bookshelf" | "bookcase" => "shelf",
        "couch" | "settee" => "sofa",
        "doorway" | "entryway" | "entrance" => "door",
        "carpet" | "mat" => "rug",
        "houseplant" | "flowerpot" => "plant",
        "armchair" | "stool" => "chair",
        "cupboard" | "dresser" => "cabinet",
        other => other,
    }
}

/// Lowercases, strips punctuation and applies the lexicon.
pub fn normalize(text: &str) -> Vec<String> {
    let mut s: String = text
        .to_lowercase()
        .chars()
        .filter(|c| *c != '\'' && *c != '\u{2019}')
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    for (from, to) in PHRASES {
        s = format!(" {s} ").replace(&format!(" {from} "), &format!(" {to} ")).trim().to_string();
    }
    s.split_whitespace().map(|w| lexeme(w).to_string()).collect()
}

fn category_of(word: &str) -> Option<Category> {
    Category::ALL.into_iter().find(|c| c.noun() == word)
}

struct Cursor<'a> {
    t: &'a [String],
    i: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.t.get(self.i).map(String::as_str)
    }

    fn eat(&mut self, w: &str) -> bool {
        if self.peek() == Some(w) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn eat_any(&mut self, ws: &[&str]) -> Option<&'a str> {
        let p = self.peek()?;
        if ws.contains(&p) {
            self.i += 1;
            Some(p)
        } else {
            None
        }
    }

    fn done(&self) -> bool {
        self.i == self.t.len()
    }

    fn poss(&mut self) -> Option<Frame> {
        match self.eat_any(&["my", "your"])? {
            "my" => Some(Frame::Speaker),
            _ => Some(Frame::Listener),
        }
    }

    fn side(&mut self) -> Option<bool> {
        Some(self.eat_any(&["left", "right"])? == "left")
    }

    fn landmark(&mut self) -> Option<Category> {
        let save = self.i;
        if self.eat("the") {
            if let Some(c) = self.peek().and_then(category_of) {
                self.i += 1;
                return Some(c);
            }
        }
        self.i = save;
        None
    }

    fn others(&mut self) -> bool {
        let save = self.i;
        if self.eat("the") && self.eat("other") {
            self.eat_any(&["two", "three", "four", "2", "3", "4"]);
            if self.eat_any(&["balls", "ball"]).is_some() {
                return true;
            }
        }
        self.i = save;
        false
    }

    fn anchor(&mut self) -> Option<Anchor> {
        if let Some(c) = self.landmark() {
            Some(Anchor::Landmark(c))
        } else if self.others() {
            Some(Anchor::OtherReferents)
        } else {
            None
        }
    }

    fn view(&mut self) -> Option<Frame> {
        let save = self.i;
        if self.eat("from") {
            if let Some(f) = self.poss() {
                if self.eat("view") {
                    return Some(f);
                }
            }
        }
        self.i = save;
        None
    }
}

fn relational(relation: Relation, anchor: Anchor, frame: Frame) -> ExpressionAst {
    ExpressionAst::new(ExpressionAst::implied_strategy(anchor, frame), relation, anchor, frame)
}

fn parse_target(c: &mut Cursor<'_>, superlative: Relation, personal: Relation) -> Option<ExpressionAst> {
    if c.eat("me") {
        return Some(ExpressionAst::new(Strategy::SpeakerPerspective, personal, Anchor::SelfAgent, Frame::Speaker));
    }
    if c.eat("you") {
        return Some(ExpressionAst::new(Strategy::ListenerPerspective, personal, Anchor::Partner, Frame::Listener));
    }
    Some(relational(superlative, c.anchor()?, Frame::AnchorIntrinsic))
}

fn parse_rel(c: &mut Cursor<'_>) -> Option<ExpressionAst> {
    use Relation::*;
    let word = c.peek()?;
    c.i += 1;
    match word {
        "closest" => {
            c.eat("to").then_some(())?;
            parse_target(c, ClosestTo, Nearest)
        }
        "farthest" | "furthest" => {
            if c.eat("from") {
                parse_target(c, FarthestFrom, FarthestFrom)
            } else if c.eat("to") {
                let frame = c.poss()?;
                let rel = if c.side()? { Leftmost } else { Rightmost };
                Some(relational(rel, Anchor::None, frame))
            } else {
                None
            }
        }
        "on" => {
            let frame = c.poss()?;
            let rel = if c.side()? { LeftOf } else { RightOf };
            Some(relational(rel, Anchor::None, frame))
        }
        "in" => {
            if c.eat("the") {
                (c.eat("middle") && c.eat("from")).then_some(())?;
                let frame = c.poss()?;
                c.eat("view").then_some(())?;
                Some(relational(Middle, Anchor::None, frame))
            } else {
                (c.eat("front") && c.eat("of")).then_some(())?;
                let anchor = c.anchor()?;
                let frame = c.view().unwrap_or(Frame::AnchorIntrinsic);
                Some(relational(InFrontOf, anchor, frame))
            }
        }
        "between" => {
            if c.others() {
                return Some(relational(Between, Anchor::OtherReferents, Frame::AnchorIntrinsic));
            }
            let a = c.landmark()?;
            c.eat("and").then_some(())?;
            let b = c.landmark()?;
            let mut ast = relational(Between, Anchor::Landmark(a), Frame::AnchorIntrinsic);
            ast.secondary = Some(Anchor::Landmark(b));
            Some(ast)
        }
        "next" => {
            c.eat("to").then_some(())?;
            Some(relational(NextTo, Anchor::Landmark(c.landmark()?), Frame::AnchorIntrinsic))
        }
        "behind" => {
            let anchor = c.anchor()?;
            let frame = c.view().unwrap_or(Frame::AnchorIntrinsic);
            Some(relational(Behind, anchor, frame))
        }
        "to" => {
            c.eat("the").then_some(())?;
            let left = c.side()?;
            c.eat("of").then_some(())?;
            let anchor = c.anchor()?;
            let frame = c.view().unwrap_or(Frame::AnchorIntrinsic);
            Some(relational(if left { LeftOf } else { RightOf }, anchor, frame))
        }
        _ => None,
    }
}

fn parse_exact(tokens: &[String]) -> Option<ExpressionAst> {
    let mut c = Cursor { t: tokens, i: 0 };
    c.eat_any(&["the", "a", "that", "this"]);
    c.eat("ball").then_some(())?;
    let ast = parse_rel(&mut c)?;
    c.done().then_some(ast)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kw {
    Left,
    Leftmost,
    Right,
    Rightmost,
    Front,
    Behind,
    Close,
    Far,
    Next,
    Between,
    Middle,
}

fn keyword(w: &str) -> Option<Kw> {
    Some(match w {
        "left" => Kw::Left,
        "leftmost" => Kw::Leftmost,
        "right" => Kw::Right,
        "rightmost" => Kw::Rightmost,
        "front" => Kw::Front,
        "behind" | "back" => Kw::Behind,
        "closest" | "near" | "close" | "closer" | "nearby" => Kw::Close,
        "farthest" | "furthest" | "far" | "farther" | "further" => Kw::Far,
        "next" | "beside" | "by" => Kw::Next,
        "between" => Kw::Between,
        "middle" | "center" | "centre" => Kw::Middle,
        _ => return None,
    })
}

/// Which cue decided a fallback parse, in precedence order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cue {
    Landmark(Category),
    Partner,
    Referent,
    Speaker,
}

/// Highest-precedence strategy cue in normalized tokens, with its position.
pub fn strategy_cue(tokens: &[String]) -> Option<(Cue, usize)> {
    let find = |pred: &dyn Fn(&str) -> bool| tokens.iter().position(|w| pred(w));
    if let Some(i) = find(&|w| category_of(w).is_some()) {
        return Some((Cue::Landmark(category_of(&tokens[i]).unwrap()), i));
    }
    if let Some(i) = find(&|w| matches!(w, "your" | "you" | "yours")) {
        return Some((Cue::Partner, i));
    }
    if let Some(i) = find(&|w| matches!(w, "other" | "others")) {
        return Some((Cue::Referent, i));
    }
    find(&|w| matches!(w, "my" | "me" | "i" | "mine")).map(|i| (Cue::Speaker, i))
}

fn fallback_frame(tokens: &[String]) -> Frame {
    if tokens.iter().any(|w| matches!(w.as_str(), "your" | "you" | "yours")) {
        Frame::Listener
    } else if tokens.iter().any(|w| matches!(w.as_str(), "my" | "me" | "i" | "mine")) {
        Frame::Speaker
    } else {
        Frame::AnchorIntrinsic
    }
}

fn parse_fallback(tokens: &[String]) -> Option<ExpressionAst> {
    use Relation::*;
    let kws: Vec<(usize, Kw)> = tokens
        .iter()
        .enumerate()
        .filter_map(|(i, w)| keyword(w).map(|k| (i, k)))
        .collect();
    if kws.is_empty() {
        return None;
    }
    let cue = strategy_cue(tokens);
    let pos = cue.map_or(0, |c| c.1);
    let kw = kws
        .iter()
        .min_by_key(|(i, _)| (i.abs_diff(pos), *i))
        .map(|k| k.1)
        .unwrap();
    let frame = fallback_frame(tokens);
    Some(match cue.map(|c| c.0) {
        Some(Cue::Landmark(cat)) => {
            let l = Anchor::Landmark(cat);
            let second = tokens
                .iter()
                .filter_map(|w| category_of(w))
                .find(|c| *c != cat);
            let (rel, fr) = match kw {
                Kw::Close => (ClosestTo, Frame::AnchorIntrinsic),
                Kw::Far => (FarthestFrom, Frame::AnchorIntrinsic),
                Kw::Next | Kw::Middle => (NextTo, Frame::AnchorIntrinsic),
                Kw::Front => (InFrontOf, frame),
                Kw::Behind => (Behind, frame),
                Kw::Left | Kw::Leftmost => (LeftOf, frame),
                Kw::Right | Kw::Rightmost => (RightOf, frame),
                Kw::Between => match second {
                    Some(b) => {
                        let mut ast = relational(Between, l, Frame::AnchorIntrinsic);
                        ast.secondary = Some(Anchor::Landmark(b));
                        return Some(ast);
                    }
                    None => (NextTo, Frame::AnchorIntrinsic),
                },
            };
            relational(rel, l, fr)
        }
        Some(cue @ (Cue::Partner | Cue::Speaker)) => {
            let (strategy, me, fr) = if cue == Cue::Partner {
                (Strategy::ListenerPerspective, Anchor::Partner, Frame::Listener)
            } else {
                (Strategy::SpeakerPerspective, Anchor::SelfAgent, Frame::Speaker)
            };
            let (rel, anchor) = match kw {
                Kw::Close | Kw::Next | Kw::Front => (Nearest, me),
                Kw::Far | Kw::Behind => (FarthestFrom, me),
                Kw::Left => (LeftOf, Anchor::None),
                Kw::Leftmost => (Leftmost, Anchor::None),
                Kw::Right => (RightOf, Anchor::None),
                Kw::Rightmost => (Rightmost, Anchor::None),
                Kw::Middle | Kw::Between => (Middle, Anchor::None),
            };
            ExpressionAst::new(strategy, rel, anchor, fr)
        }
        Some(Cue::Referent) => {
            let o = Anchor::OtherReferents;
            let (rel, fr) = match kw {
                Kw::Close | Kw::Next => (ClosestTo, Frame::AnchorIntrinsic),
                Kw::Far => (FarthestFrom, Frame::AnchorIntrinsic),
                Kw::Between | Kw::Middle => (Between, Frame::AnchorIntrinsic),
                Kw::Front => (InFrontOf, frame),
                Kw::Behind => (Behind, frame),
                Kw::Left | Kw::Leftmost => (LeftOf, frame),
                Kw::Right | Kw::Rightmost => (RightOf, frame),
            };
            ExpressionAst::new(Strategy::ReferentRelative, rel, o, fr)
        }
        None => {
            let (rel, anchor) = match kw {
                Kw::Close | Kw::Next | Kw::Front => (Nearest, Anchor::None),
                Kw::Far | Kw::Behind => (FarthestFrom, Anchor::None),
                Kw::Left => (LeftOf, Anchor::None),
                Kw::Leftmost => (Leftmost, Anchor::None),
                Kw::Right => (RightOf, Anchor::None),
                Kw::Rightmost => (Rightmost, Anchor::None),
                Kw::Middle | Kw::Between => (Middle, Anchor::None),
            };
            ExpressionAst::new(Strategy::ReferentRelative, rel, anchor, Frame::AnchorIntrinsic)
        }
    })
}

/// Parses free text into an expression, exactly if it is in the grammar,
/// else by cue-word fallback.
pub fn parse(text: &str) -> Result<Parsed, ParseError> {
    let tokens = normalize(text);
    if tokens.is_empty() {
        return Err(ParseError::Empty);
    }
    if let Some(ast) = parse_exact(&tokens) {
        return Ok(Parsed {
            ast,
            confidence: Confidence::Exact,
        });
    }
    parse_fallback(&tokens)
        .map(|ast| Parsed {
            ast,
            confidence: Confidence::Fallback,
        })
        .ok_or_else(|| ParseError::NoCues(text.to_string()))
}

/// What the resolving agent knows when interpreting an expression.
#[derive(Clone, Debug)]
pub struct ResolveInput<'a> {
    /// Referent centers as perceived by the resolver.
    pub referents: &'a [Vec3],
    /// The resolver's own pose (the listener).
    pub viewer: Pose,
    /// The speaker's pose when known.
    pub speaker: Option<Pose>,
    pub landmarks: &'a [Landmark],
    /// Landmark categories the resolver can see.
    pub visible_landmarks: Vec<Category>,
    pub kappa: f64,
}

impl<'a> ResolveInput<'a> {
    /// Listener-side input from a scene and the listener's view, optionally
    /// with perturbed referent positions.
    pub fn for_listener(scene: &'a Scene, view: &AgentView, referents: &'a [Vec3], kappa: f64) -> Self {
        debug_assert_eq!(view.role, Role::Listener);
        Self {
            referents,
            viewer: view.pose,
            speaker: view.partner_pose,
            landmarks: &scene.env.landmarks,
            visible_landmarks: scene
                .env
                .landmarks
                .iter()
                .map(|l| l.category)
                .filter(|c| view.landmark_visible(*c))
                .collect(),
            kappa,
        }
    }

    fn landmark(&self, c: Category) -> Option<&'a Landmark> {
        if !self.visible_landmarks.contains(&c) {
            return None;
        }
        self.landmarks.iter().find(|l| l.category == c)
    }
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Mean pairwise distance, used as the spatial scale of soft relations.
pub fn spacing_scale(points: &[Vec3]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += points[i].distance(points[j]);
        }
    }
    (sum / (n * (n - 1) / 2) as f64).max(1e-6)
}

/// Horizontal azimuth (radians, positive to the right) and depth of `p`.
pub fn azimuth_depth(pose: &Pose, p: Vec3) -> (f64, f64) {
    let c = pose.to_camera(p);
    (c.x.atan2(c.z), c.z)
}

fn softmax_scores(v: &[f64], kappa: f64, scale: f64) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (kappa * (x - m) / scale).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn sigmoid_scores(g: &[f64], kappa: f64, scale: f64) -> Vec<f64> {
    let s: Vec<f64> = g.iter().map(|x| 1.0 / (1.0 + (-kappa * x / scale).exp())).collect();
    let z: f64 = s.iter().sum();
    if z <= 0.0 || !z.is_finite() {
        return uniform(g.len());
    }
    s.into_iter().map(|x| x / z).collect()
}

fn segment_distance_2d(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let (px, py) = (p.x - a.x, p.y - a.y);
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { ((px * dx + py * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (px - t * dx).hypot(py - t * dy)
}

/// Relation geometry shared by [`resolve`] and hard-rule checks: the
/// per-referent value, and whether it is a superlative (argmax) or a
/// threshold relation (value > 0 holds).
#[derive(Clone, Debug, PartialEq)]
pub struct RelationValues {
    pub values: Vec<f64>,
    pub superlative: bool,
}

/// Per-referent relation values, or `None` when the resolver lacks what
/// the expression presupposes (unseen landmark, unknown speaker pose).
pub fn relation_values(ast: &ExpressionAst, input: &ResolveInput<'_>) -> Option<RelationValues> {
    use Relation::*;
    let r = input.referents;
    let n = r.len();
    let frame_pose = |frame: Frame| -> Option<Pose> {
        match frame {
            Frame::Speaker => input.speaker,
            Frame::Listener | Frame::AnchorIntrinsic => Some(input.viewer),
        }
    };
    if ast.needs_speaker_pose() && input.speaker.is_none() {
        return None;
    }
    let landmark = match ast.anchor {
        Anchor::Landmark(c) => Some(input.landmark(c)?),
        _ => None,
    };
    let others_mean = |i: usize, f: &dyn Fn(Vec3) -> f64| -> f64 {
        let (s, k) = (0..n).filter(|&j| j != i).fold((0.0, 0usize), |(s, k), j| (s + f(r[j]), k + 1));
        if k == 0 { 0.0 } else { s / k as f64 }
    };
    let anchor_point = |a: Anchor| -> Option<Vec3> {
        match a {
            Anchor::SelfAgent => input.speaker.map(|p| p.position),
            Anchor::Partner | Anchor::None => Some(input.viewer.position),
            Anchor::Landmark(_) => landmark.map(|l| l.bbox.center),
            Anchor::OtherReferents => None,
        }
    };
    let sup = |values: Vec<f64>| Some(RelationValues { values, superlative: true });
    let thr = |values: Vec<f64>| Some(RelationValues { values, superlative: false });

    match ast.relation {
        Nearest | ClosestTo | FarthestFrom => {
            let sign = if ast.relation == FarthestFrom { 1.0 } else { -1.0 };
            let d: Vec<f64> = match ast.anchor {
                Anchor::OtherReferents => (0..n).map(|i| others_mean(i, &|q| q.distance(r[i]))).collect(),
                Anchor::Landmark(_) => {
                    let c = landmark?.bbox.center;
                    r.iter().map(|p| p.distance(c)).collect()
                }
                a => {
                    let o = anchor_point(a)?;
                    r.iter().map(|p| p.horizontal_distance(o)).collect()
                }
            };
            sup(d.into_iter().map(|x| sign * x).collect())
        }
        NextTo => {
            let d: Vec<f64> = match landmark {
                Some(l) => r.iter().map(|p| NEXT_TO_RANGE - l.bbox.distance(*p)).collect(),
                None => (0..n).map(|i| NEXT_TO_RANGE - others_mean(i, &|q| q.distance(r[i]))).collect(),
            };
            thr(d)
        }
        Between => match (landmark, ast.secondary) {
            (Some(a), Some(Anchor::Landmark(c))) => {
                let b = input.landmark(c)?;
                sup(r.iter().map(|p| -segment_distance_2d(*p, a.bbox.center, b.bbox.center)).collect())
            }
            _ => {
                let values = (0..n)
                    .map(|i| {
                        let others: Vec<Vec3> = (0..n).filter(|&j| j != i).map(|j| r[j]).collect();
                        if others.len() == 2 {
                            -segment_distance_2d(r[i], others[0], others[1])
                        } else {
                            let c = others.iter().fold(Vec3::ZERO, |a, p| a + *p) * (1.0 / others.len().max(1) as f64);
                            -r[i].horizontal_distance(c)
                        }
                    })
                    .collect();
                sup(values)
            }
        },
        Leftmost | Rightmost | Middle => {
            let pose = frame_pose(ast.frame)?;
            let ad: Vec<(f64, f64)> = r.iter().map(|p| azimuth_depth(&pose, *p)).collect();
            let depth = ad.iter().map(|x| x.1.abs()).sum::<f64>() / n as f64;
            let az: Vec<f64> = ad.iter().map(|x| x.0 * depth).collect();
            match ast.relation {
                Leftmost => sup(az.iter().map(|a| -a).collect()),
                Rightmost => sup(az),
                _ => {
                    let mut sorted = az.clone();
                    sorted.sort_by(f64::total_cmp);
                    let med = if n % 2 == 1 {
                        sorted[n / 2]
                    } else {
                        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
                    };
                    sup(az.iter().map(|a| -(a - med).abs()).collect())
                }
            }
        }
        LeftOf | RightOf | InFrontOf | Behind => {
            let lateral = matches!(ast.relation, LeftOf | RightOf);
            // +1 for right of / in front of, -1 for left of / behind.
            let sign = if matches!(ast.relation, LeftOf | Behind) { -1.0 } else { 1.0 };
            if let (Some(l), Frame::AnchorIntrinsic) = (landmark, ast.frame) {
                // Object-centered: beyond the landmark's own front or side face.
                let front = l.front();
                let right = Vec3::new(front.y, -front.x, 0.0);
                let g = r
                    .iter()
                    .map(|p| {
                        let d = *p - l.bbox.center;
                        if lateral {
                            sign * d.dot(right) - l.bbox.half.y
                        } else {
                            sign * d.dot(front) - l.bbox.half.x
                        }
                    })
                    .collect();
                return thr(g);
            }
            let pose = frame_pose(ast.frame)?;
            let ad: Vec<(f64, f64)> = r.iter().map(|p| azimuth_depth(&pose, *p)).collect();
            let depth = ad.iter().map(|x| x.1.abs()).sum::<f64>() / n as f64;
            let reference: Vec<(f64, f64)> = match (ast.anchor, landmark) {
                (_, Some(l)) => vec![azimuth_depth(&pose, l.bbox.center); n],
                (Anchor::OtherReferents, _) => (0..n)
                    .map(|i| {
                        let k = (n - 1).max(1) as f64;
                        let (sa, sd) = (0..n)
                            .filter(|&j| j != i)
                            .fold((0.0, 0.0), |(sa, sd), j| (sa + ad[j].0, sd + ad[j].1));
                        (sa / k, sd / k)
                    })
                    .collect(),
                _ => vec![(0.0, 0.0); n],
            };
            let g = (0..n)
                .map(|i| {
                    if lateral {
                        sign * (ad[i].0 - reference[i].0) * depth
                    } else {
                        // In front of = nearer the viewer than the reference.
                        sign * (reference[i].1 - ad[i].1)
                    }
                })
                .collect();
            thr(g)
        }
    }
}

/// Probability over referents for an expression, from the resolver's
/// perspective. Unresolvable expressions give the uniform distribution.
pub fn resolve(ast: &ExpressionAst, input: &ResolveInput<'_>) -> Vec<f64> {
    let n = input.referents.len();
    if n == 0 {
        return Vec::new();
    }
    let Some(rv) = relation_values(ast, input) else {
        return uniform(n);
    };
    let scale = spacing_scale(input.referents);
    if rv.superlative {
        softmax_scores(&rv.values, input.kappa, scale)
    } else {
        sigmoid_scores(&rv.values, input.kappa, scale)
    }
}

/// Parses then resolves; parse failures give the uniform distribution.
pub fn resolve_text(text: &str, input: &ResolveInput<'_>) -> (Vec<f64>, Result<Parsed, ParseError>) {
    let parsed = parse(text);
    let p = match &parsed {
        Ok(pa) => resolve(&pa.ast, input),
        Err(_) => uniform(input.referents.len()),
    };
    (p, parsed)
}

/// Strategy of an utterance: the AST tag for template text, cue words
/// otherwise. The flag is true when the answer came from cue words, and
/// texts without any cue default to referent-relative.
pub fn classify_text(text: &str) -> (Strategy, bool) {
    if let Ok(p) = parse(text) {
        if p.confidence == Confidence::Exact {
            return (p.ast.strategy, false);
        }
    }
    let tokens = normalize(text);
    let s = match strategy_cue(&tokens).map(|c| c.0) {
        Some(Cue::Landmark(_)) => Strategy::LandmarkRelative,
        Some(Cue::Partner) => Strategy::ListenerPerspective,
        Some(Cue::Referent) => Strategy::ReferentRelative,
        Some(Cue::Speaker) => Strategy::SpeakerPerspective,
        None => Strategy::ReferentRelative,
    };
    (s, true)
}
