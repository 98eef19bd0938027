//! Landmark editing attributes and the two-edit plans used for dataset
//! generation.
//!
//! Each [`EditKind`] is a small geometric operator on a 68-point set. A
//! strength of zero is always the identity. Edited points are clamped into
//! `[0, 1]` so aggressive edits stay renderable.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::landmarks::{centroid, interocular_distance, LandmarkError, LandmarkSet, Point, SemanticGroup, N_LANDMARKS};

#[derive(Debug, Error)]
pub enum EditError {
    #[error("unknown edit kind {0:?}")]
    UnknownKind(String),
    #[error("strength {strength} outside the legal range [{lo}, {hi}] for {kind}")]
    IllegalStrength { kind: EditKind, strength: f64, lo: f64, hi: f64 },
    #[error("illegal parameters for {kind}: {reason}")]
    IllegalParams { kind: EditKind, reason: String },
    #[error("an edit plan needs at least two enabled kinds, got {0}")]
    TooFewKinds(usize),
    #[error("edit plan must hold two distinct kinds, got {0} twice")]
    DuplicateKind(EditKind),
    #[error(transparent)]
    Landmark(#[from] LandmarkError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Chubby,
    LinearTransform,
    OpenEyes,
    RaisedEyebrow,
    StretchedNostrils,
    ComponentShift,
}

impl EditKind {
    pub const ALL: [EditKind; 6] = [
        EditKind::Chubby,
        EditKind::LinearTransform,
        EditKind::OpenEyes,
        EditKind::RaisedEyebrow,
        EditKind::StretchedNostrils,
        EditKind::ComponentShift,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EditKind::Chubby => "chubby",
            EditKind::LinearTransform => "linear_transform",
            EditKind::OpenEyes => "open_eyes",
            EditKind::RaisedEyebrow => "raised_eyebrow",
            EditKind::StretchedNostrils => "stretched_nostrils",
            EditKind::ComponentShift => "component_shift",
        }
    }

    /// Strengths accepted by [`apply_edit`].
    pub fn legal_range(self) -> (f64, f64) {
        match self {
            EditKind::Chubby => (-0.15, 0.25),
            // blend factor between identity and the configured transform
            EditKind::LinearTransform => (0.0, 1.0),
            EditKind::OpenEyes => (-0.5, 1.0),
            EditKind::RaisedEyebrow => (0.0, 0.3),
            EditKind::StretchedNostrils => (0.0, 0.6),
            // translation magnitude in normalized units
            EditKind::ComponentShift => (0.0, 0.05),
        }
    }
}

impl fmt::Display for EditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EditKind {
    type Err = EditError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EditKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| EditError::UnknownKind(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Both,
}

impl Side {
    fn includes(self, other: Side) -> bool {
        self == Side::Both || self == other
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    LeftEye,
    RightEye,
    Nose,
    Mouth,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::LeftEye, Component::RightEye, Component::Nose, Component::Mouth];

    pub fn group(self) -> SemanticGroup {
        match self {
            Component::LeftEye => SemanticGroup::LeftEye,
            Component::RightEye => SemanticGroup::RightEye,
            Component::Nose => SemanticGroup::Nose,
            Component::Mouth => SemanticGroup::Mouth,
        }
    }
}

/// Kind-specific parameters of an [`EditOp`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EditParams {
    /// `x ↦ A·(x − c) + c + b` about the face centroid `c`.
    Linear { matrix: [[f64; 2]; 2], offset: [f64; 2] },
    Sided { side: Side },
    Shift { component: Component, direction: [f64; 2] },
    None {},
}

/// One edit: kind, strength and kind-specific parameters.
///
/// Serialized as `{"kind": …, "strength": …, "params": {…}}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WireOp", into = "WireOp")]
pub struct EditOp {
    pub kind: EditKind,
    pub strength: f64,
    pub params: EditParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireOp {
    kind: String,
    strength: f64,
    params: EditParams,
}

impl From<EditOp> for WireOp {
    fn from(op: EditOp) -> Self {
        WireOp { kind: op.kind.as_str().to_string(), strength: op.strength, params: op.params }
    }
}

impl TryFrom<WireOp> for EditOp {
    type Error = EditError;

    fn try_from(w: WireOp) -> Result<Self, Self::Error> {
        let op = EditOp { kind: w.kind.parse()?, strength: w.strength, params: w.params };
        op.check()?;
        Ok(op)
    }
}

fn det(m: &[[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

impl EditOp {
    pub fn chubby(strength: f64) -> Self {
        Self { kind: EditKind::Chubby, strength, params: EditParams::None {} }
    }

    pub fn linear(strength: f64, matrix: [[f64; 2]; 2], offset: [f64; 2]) -> Self {
        Self { kind: EditKind::LinearTransform, strength, params: EditParams::Linear { matrix, offset } }
    }

    pub fn open_eyes(strength: f64, side: Side) -> Self {
        Self { kind: EditKind::OpenEyes, strength, params: EditParams::Sided { side } }
    }

    pub fn raised_eyebrow(strength: f64, side: Side) -> Self {
        Self { kind: EditKind::RaisedEyebrow, strength, params: EditParams::Sided { side } }
    }

    pub fn stretched_nostrils(strength: f64) -> Self {
        Self { kind: EditKind::StretchedNostrils, strength, params: EditParams::None {} }
    }

    /// Translate `component` by `strength` along `direction` (normalized here).
    pub fn component_shift(strength: f64, component: Component, direction: [f64; 2]) -> Self {
        let n = direction[0].hypot(direction[1]);
        let direction = if n > 0.0 { [direction[0] / n, direction[1] / n] } else { [0.0, 0.0] };
        Self { kind: EditKind::ComponentShift, strength, params: EditParams::Shift { component, direction } }
    }

    /// Strength within the legal range and parameters matching the kind.
    pub fn check(&self) -> Result<(), EditError> {
        let (lo, hi) = self.kind.legal_range();
        if !(self.strength.is_finite() && self.strength >= lo && self.strength <= hi) {
            return Err(EditError::IllegalStrength { kind: self.kind, strength: self.strength, lo, hi });
        }
        let bad = |reason: &str| Err(EditError::IllegalParams { kind: self.kind, reason: reason.into() });
        match (self.kind, &self.params) {
            (EditKind::Chubby | EditKind::StretchedNostrils, EditParams::None {}) => Ok(()),
            (EditKind::OpenEyes | EditKind::RaisedEyebrow, EditParams::Sided { .. }) => Ok(()),
            (EditKind::LinearTransform, EditParams::Linear { matrix, offset }) => {
                let d = det(matrix);
                if !(0.5..=2.0).contains(&d) {
                    return bad(&format!("determinant {d} outside [0.5, 2.0]"));
                }
                if !offset.iter().chain(matrix.iter().flatten()).all(|v| v.is_finite()) {
                    return bad("non-finite entries");
                }
                Ok(())
            }
            (EditKind::ComponentShift, EditParams::Shift { direction, .. }) => {
                let n = direction[0].hypot(direction[1]);
                if (n - 1.0).abs() > 1e-9 {
                    return bad("direction must be a unit vector");
                }
                Ok(())
            }
            _ => bad("parameters do not match the kind"),
        }
    }
}

/// Apply one edit and clamp the result into `[0, 1]`.
pub fn apply_edit(lm: &LandmarkSet, op: &EditOp) -> Result<LandmarkSet, EditError> {
    op.check()?;
    if lm.len() != N_LANDMARKS {
        return Err(LandmarkError::WrongCount { expected: N_LANDMARKS, got: lm.len() }.into());
    }
    let s = op.strength;
    if s == 0.0 {
        return Ok(lm.clone());
    }
    let mut pts = lm.points().to_vec();
    match (op.kind, op.params) {
        (EditKind::Chubby, _) => {
            let range = SemanticGroup::Jaw.range();
            let c = centroid(&pts[range.clone()]);
            for p in &mut pts[range] {
                p.x = c.x + (1.0 + s) * (p.x - c.x);
                p.y = c.y + (1.0 + s) * (p.y - c.y);
            }
        }
        (EditKind::LinearTransform, EditParams::Linear { matrix: m, offset: b }) => {
            let c = centroid(&pts);
            let a = [
                [1.0 + s * (m[0][0] - 1.0), s * m[0][1]],
                [s * m[1][0], 1.0 + s * (m[1][1] - 1.0)],
            ];
            for p in &mut pts {
                let (dx, dy) = (p.x - c.x, p.y - c.y);
                *p = Point::new(
                    a[0][0] * dx + a[0][1] * dy + c.x + s * b[0],
                    a[1][0] * dx + a[1][1] * dy + c.y + s * b[1],
                );
            }
        }
        (EditKind::OpenEyes, EditParams::Sided { side }) => {
            for (eye, which) in [(SemanticGroup::LeftEye, Side::Left), (SemanticGroup::RightEye, Side::Right)] {
                if !side.includes(which) {
                    continue;
                }
                let c = centroid(&pts[eye.range()]);
                for p in &mut pts[eye.range()] {
                    p.y = c.y + (1.0 + s) * (p.y - c.y);
                }
            }
        }
        (EditKind::RaisedEyebrow, EditParams::Sided { side }) => {
            let lift = s * interocular_distance(lm)?;
            for (brow, which) in [(SemanticGroup::LeftBrow, Side::Left), (SemanticGroup::RightBrow, Side::Right)] {
                if side.includes(which) {
                    for p in &mut pts[brow.range()] {
                        p.y -= lift;
                    }
                }
            }
        }
        (EditKind::StretchedNostrils, _) => {
            let base = 31..36;
            let cx = centroid(&pts[base.clone()]).x;
            for p in &mut pts[base] {
                p.x = cx + (1.0 + s) * (p.x - cx);
            }
        }
        (EditKind::ComponentShift, EditParams::Shift { component, direction }) => {
            for p in &mut pts[component.group().range()] {
                p.x += s * direction[0];
                p.y += s * direction[1];
            }
        }
        _ => unreachable!("checked above"),
    }
    Ok(LandmarkSet::clamped(pts))
}

/// Two edits of distinct kinds, drawn from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WirePlan", into = "WirePlan")]
pub struct EditPlan {
    pub seed: u64,
    pub ops: [EditOp; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WirePlan {
    seed: u64,
    ops: [EditOp; 2],
}

impl From<EditPlan> for WirePlan {
    fn from(p: EditPlan) -> Self {
        WirePlan { seed: p.seed, ops: p.ops }
    }
}

impl TryFrom<WirePlan> for EditPlan {
    type Error = EditError;

    fn try_from(w: WirePlan) -> Result<Self, Self::Error> {
        EditPlan::new(w.seed, w.ops[0], w.ops[1])
    }
}

impl EditPlan {
    pub fn new(seed: u64, first: EditOp, second: EditOp) -> Result<Self, EditError> {
        if first.kind == second.kind {
            return Err(EditError::DuplicateKind(first.kind));
        }
        Ok(Self { seed, ops: [first, second] })
    }

    pub fn kinds(&self) -> [EditKind; 2] {
        [self.ops[0].kind, self.ops[1].kind]
    }
}

/// Apply the plan's edits in order.
pub fn apply_plan(lm: &LandmarkSet, plan: &EditPlan) -> Result<LandmarkSet, EditError> {
    let once = apply_edit(lm, &plan.ops[0])?;
    apply_edit(&once, &plan.ops[1])
}

/// Sampling ranges for the linear transform `rotation(θ)·scale(sx, sy)·shear(k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearRanges {
    pub rotation_deg: (f64, f64),
    pub scale_x: (f64, f64),
    pub scale_y: (f64, f64),
    pub shear: (f64, f64),
    pub offset: (f64, f64),
}

impl Default for LinearRanges {
    fn default() -> Self {
        Self {
            rotation_deg: (-10.0, 10.0),
            scale_x: (0.85, 1.15),
            scale_y: (0.85, 1.15),
            shear: (-0.1, 0.1),
            offset: (-0.05, 0.05),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditConfig {
    pub enabled: Vec<EditKind>,
    /// Strength sampling range per kind; must lie inside the legal range.
    pub strength_ranges: BTreeMap<EditKind, (f64, f64)>,
    pub linear: LinearRanges,
}

impl Default for EditConfig {
    fn default() -> Self {
        let mut strength_ranges: BTreeMap<EditKind, (f64, f64)> =
            EditKind::ALL.iter().map(|&k| (k, k.legal_range())).collect();
        strength_ranges.insert(EditKind::LinearTransform, (0.5, 1.0));
        Self { enabled: EditKind::ALL.to_vec(), strength_ranges, linear: LinearRanges::default() }
    }
}

impl EditConfig {
    pub fn with_kinds(kinds: &[EditKind]) -> Self {
        Self { enabled: kinds.to_vec(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), EditError> {
        let mut kinds = self.enabled.clone();
        kinds.sort();
        kinds.dedup();
        if kinds.len() < 2 {
            return Err(EditError::TooFewKinds(kinds.len()));
        }
        for &k in &kinds {
            let (lo, hi) = self.range(k);
            let (llo, lhi) = k.legal_range();
            if !(lo <= hi && lo >= llo && hi <= lhi) {
                return Err(EditError::IllegalStrength { kind: k, strength: if lo < llo { lo } else { hi }, lo: llo, hi: lhi });
            }
        }
        Ok(())
    }

    fn range(&self, k: EditKind) -> (f64, f64) {
        self.strength_ranges.get(&k).copied().unwrap_or_else(|| k.legal_range())
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn sample_op<R: Rng>(kind: EditKind, cfg: &EditConfig, rng: &mut R) -> EditOp {
    let strength = uniform(rng, cfg.range(kind));
    let side = |rng: &mut R| [Side::Left, Side::Right, Side::Both][rng.random_range(0..3)];
    match kind {
        EditKind::Chubby => EditOp::chubby(strength),
        EditKind::StretchedNostrils => EditOp::stretched_nostrils(strength),
        EditKind::OpenEyes => EditOp::open_eyes(strength, side(rng)),
        EditKind::RaisedEyebrow => EditOp::raised_eyebrow(strength, side(rng)),
        EditKind::LinearTransform => {
            let r = &cfg.linear;
            let theta = uniform(rng, r.rotation_deg).to_radians();
            let (sx, sy) = (uniform(rng, r.scale_x), uniform(rng, r.scale_y));
            let k = uniform(rng, r.shear);
            let b = [uniform(rng, r.offset), uniform(rng, r.offset)];
            let (c, s) = (theta.cos(), theta.sin());
            // R·S·Sh with S = diag(sx, sy), Sh = [[1, k], [0, 1]]
            let rs = [[c * sx, -s * sy], [s * sx, c * sy]];
            let m = [[rs[0][0], rs[0][0] * k + rs[0][1]], [rs[1][0], rs[1][0] * k + rs[1][1]]];
            EditOp::linear(strength, m, b)
        }
        EditKind::ComponentShift => {
            let component = Component::ALL[rng.random_range(0..Component::ALL.len())];
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            EditOp::component_shift(strength, component, [angle.cos(), angle.sin()])
        }
    }
}

/// Draw two distinct kinds uniformly without replacement and their
/// strengths/parameters uniformly from `cfg`. Deterministic in `seed`.
pub fn sample_edit_plan(seed: u64, cfg: &EditConfig) -> Result<EditPlan, EditError> {
    cfg.validate()?;
    let mut kinds = cfg.enabled.clone();
    kinds.sort();
    kinds.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let i = rng.random_range(0..kinds.len());
    let mut j = rng.random_range(0..kinds.len() - 1);
    if j >= i {
        j += 1;
    }
    let first = sample_op(kinds[i], cfg, &mut rng);
    let second = sample_op(kinds[j], cfg, &mut rng);
    EditPlan::new(seed, first, second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procedural::template_landmarks;

    fn face() -> LandmarkSet {
        template_landmarks()
    }

    #[test]
    fn zero_strength_is_identity_for_every_kind() {
        let lm = face();
        let ops = [
            EditOp::chubby(0.0),
            EditOp::linear(0.0, [[1.1, 0.05], [0.0, 0.95]], [0.03, -0.02]),
            EditOp::open_eyes(0.0, Side::Both),
            EditOp::raised_eyebrow(0.0, Side::Left),
            EditOp::stretched_nostrils(0.0),
            EditOp::component_shift(0.0, Component::Mouth, [1.0, 0.0]),
        ];
        for op in ops {
            assert_eq!(apply_edit(&lm, &op).unwrap(), lm, "{}", op.kind);
        }
    }

    #[test]
    fn identity_matrix_with_offset_translates_x() {
        let lm = face();
        let out = apply_edit(&lm, &EditOp::linear(1.0, [[1.0, 0.0], [0.0, 1.0]], [0.1, 0.0])).unwrap();
        for (a, b) in lm.points().iter().zip(out.points()) {
            assert!((b.x - (a.x + 0.1).min(1.0)).abs() < 1e-12);
            assert!((b.y - a.y).abs() < 1e-12);
        }
    }

    #[test]
    fn chubby_scales_jaw_radii() {
        let lm = face();
        let out = apply_edit(&lm, &EditOp::chubby(0.1)).unwrap();
        let c = lm.group_centroid(SemanticGroup::Jaw);
        for i in 0..68 {
            let (a, b) = (lm.get(i), out.get(i));
            if i < 17 {
                let ra = a.dist(c);
                let rb = b.dist(c);
                assert!((rb - 1.1 * ra).abs() < 1e-12);
                // same ray: cross product of offsets vanishes
                let cross = (a.x - c.x) * (b.y - c.y) - (a.y - c.y) * (b.x - c.x);
                assert!(cross.abs() < 1e-12);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn illegal_inputs_are_rejected() {
        let lm = face();
        assert!(matches!(apply_edit(&lm, &EditOp::chubby(0.5)), Err(EditError::IllegalStrength { .. })));
        let singular = EditOp::linear(1.0, [[0.1, 0.0], [0.0, 0.1]], [0.0, 0.0]);
        assert!(matches!(apply_edit(&lm, &singular), Err(EditError::IllegalParams { .. })));
        assert!(matches!("smile".parse::<EditKind>(), Err(EditError::UnknownKind(_))));
        let json = r#"{"kind":"smile","strength":0.1,"params":{}}"#;
        assert!(serde_json::from_str::<EditOp>(json).is_err());
    }

    #[test]
    fn plans_reject_duplicate_kinds() {
        assert!(matches!(
            EditPlan::new(0, EditOp::chubby(0.1), EditOp::chubby(0.2)),
            Err(EditError::DuplicateKind(EditKind::Chubby))
        ));
        assert!(matches!(
            sample_edit_plan(0, &EditConfig::with_kinds(&[EditKind::Chubby])),
            Err(EditError::TooFewKinds(1))
        ));
    }

    #[test]
    fn plan_json_shape() {
        let plan = sample_edit_plan(11, &EditConfig::default()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&plan).unwrap();
        assert_eq!(v["seed"], 11);
        assert_eq!(v["ops"].as_array().unwrap().len(), 2);
        for op in v["ops"].as_array().unwrap() {
            assert!(op["kind"].is_string() && op["strength"].is_number() && op["params"].is_object());
        }
        let back: EditPlan = serde_json::from_value(v).unwrap();
        assert_eq!(back, plan);
    }
}
