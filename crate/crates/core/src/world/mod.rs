//! Deterministic symbolic kitchen world.
//!
//! A [`Scene`] is the full ground-truth state: zones, objects with affordance
//! flags, the agent pose, and the held item. The module provides the
//! transition function [`step`], the validity oracle [`valid_actions`], the
//! observation projection [`observe`], the success predicate
//! [`check_success`], the per-step violation classifier
//! [`classify_violation`], and a location-sensitive [`state_hash`].
//!
//! Scenes are immutable values: `step` returns a new scene and never mutates
//! its input, so rollout workers can share scenes freely.

mod gen;

pub use gen::{generate_scene, GenError, SceneConfig};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::digest64;

/// Identifier of a zone, e.g. `"z0"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ZoneId(pub String);

impl fmt::Display for ZoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl ZoneId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
}

/// Identifier of an object instance. Each scene carries at most one instance
/// per object type, so ids coincide with type names (e.g. `"Pen"`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub String);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl ObjectId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
}

/// Object type token (`Pen`, `Drawer`, ...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectType(pub String);

impl fmt::Display for ObjectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl ObjectType {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
}

/// One object in a scene with its affordance flags and location.
///
/// Location invariant: exactly one of `zone`, `container`, or the agent's
/// hand (`Scene::holding`) holds the object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: ObjectId,
    #[serde(rename = "type")]
    pub object_type: ObjectType,
    /// Zone the object sits in, when directly in a zone.
    pub zone: Option<ZoneId>,
    pub pickable: bool,
    pub receptacle: bool,
    pub openable: bool,
    /// Defined iff `openable`.
    pub is_open: Option<bool>,
    /// Receptacle holding this object, when contained.
    pub container: Option<ObjectId>,
}

/// Full ground-truth world state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub zones: Vec<ZoneId>,
    pub objects: BTreeMap<ObjectId, ObjectInstance>,
    pub agent_zone: ZoneId,
    pub holding: Option<ObjectId>,
    pub rng_seed: u64,
    pub step_count: u32,
    /// Set by `TaskCompleted`; a terminal scene admits no further actions.
    #[serde(default)]
    pub terminal: bool,
}

/// The six primitive verbs.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Verb {
    Navigate,
    Pick,
    Place,
    Open,
    Close,
    TaskCompleted,
}

impl Verb {
    pub const ALL: [Verb; 6] = [
        Verb::Navigate,
        Verb::Pick,
        Verb::Place,
        Verb::Open,
        Verb::Close,
        Verb::TaskCompleted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verb::Navigate => "Navigate",
            Verb::Pick => "Pick",
            Verb::Place => "Place",
            Verb::Open => "Open",
            Verb::Close => "Close",
            Verb::TaskCompleted => "TaskCompleted",
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A primitive function call: verb plus object argument.
///
/// `arg` is `None` iff the verb is `TaskCompleted`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Action {
    pub verb: Verb,
    pub arg: Option<ObjectId>,
}

impl Action {
    pub fn navigate(id: impl Into<String>) -> Self {
        Action { verb: Verb::Navigate, arg: Some(ObjectId::new(id)) }
    }
    pub fn pick(id: impl Into<String>) -> Self {
        Action { verb: Verb::Pick, arg: Some(ObjectId::new(id)) }
    }
    pub fn place(id: impl Into<String>) -> Self {
        Action { verb: Verb::Place, arg: Some(ObjectId::new(id)) }
    }
    pub fn open(id: impl Into<String>) -> Self {
        Action { verb: Verb::Open, arg: Some(ObjectId::new(id)) }
    }
    pub fn close(id: impl Into<String>) -> Self {
        Action { verb: Verb::Close, arg: Some(ObjectId::new(id)) }
    }
    pub fn task_completed() -> Self {
        Action { verb: Verb::TaskCompleted, arg: None }
    }

    /// Well-formed: `TaskCompleted` carries no argument, every other verb
    /// names an object in the scene's id universe.
    pub fn is_well_formed(&self, scene: &Scene) -> bool {
        match self.verb {
            Verb::TaskCompleted => self.arg.is_none(),
            _ => self
                .arg
                .as_ref()
                .map(|id| scene.objects.contains_key(id))
                .unwrap_or(false),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.arg {
            Some(a) => write!(f, "{}({})", self.verb, a),
            None => write!(f, "{}()", self.verb),
        }
    }
}

/// Goal templates. `item` fields range over pickable types, receptacle
/// fields over receptacle ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum GoalTemplate {
    PlaceIn { item: ObjectType, receptacle: ObjectId },
    PlaceInClosed { item: ObjectType, receptacle: ObjectId },
    SetOpenState { receptacle: ObjectId, open: bool },
    MultiPlace { items: Vec<(ObjectType, ObjectId)> },
}

/// A task goal: template plus its rendered instruction text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub template: GoalTemplate,
    pub instruction_text: String,
}

impl Goal {
    /// Build a goal; the instruction text is a pure function of the template.
    pub fn new(template: GoalTemplate) -> Self {
        let instruction_text = render_instruction(&template);
        Goal { template, instruction_text }
    }

    /// (item type, target receptacle) pairs the goal requires to be placed.
    pub fn placement_pairs(&self) -> Vec<(ObjectType, ObjectId)> {
        match &self.template {
            GoalTemplate::PlaceIn { item, receptacle }
            | GoalTemplate::PlaceInClosed { item, receptacle } => {
                vec![(item.clone(), receptacle.clone())]
            }
            GoalTemplate::SetOpenState { .. } => vec![],
            GoalTemplate::MultiPlace { items } => items.clone(),
        }
    }
}

fn render_instruction(template: &GoalTemplate) -> String {
    match template {
        GoalTemplate::PlaceIn { item, receptacle } => {
            format!("Place the {item} in the {receptacle}.")
        }
        GoalTemplate::PlaceInClosed { item, receptacle } => {
            format!("Place the {item} in the {receptacle} and close it.")
        }
        GoalTemplate::SetOpenState { receptacle, open } => {
            let state = if *open { "open" } else { "closed" };
            format!("Make sure the {receptacle} is {state}.")
        }
        GoalTemplate::MultiPlace { items } => {
            let names: Vec<String> = items.iter().map(|(t, _)| format!("the {t}")).collect();
            let target = items
                .first()
                .map(|(_, r)| r.to_string())
                .unwrap_or_else(|| "nowhere".to_string());
            format!("Place {} in the {}.", names.join(" and "), target)
        }
    }
}

/// The four physical-constraint violation categories.
///
/// Categories are mutually exclusive per step under the precedence
/// C4 > C3 > C1 > C2 (first match wins).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum ViolationCategory {
    /// C1: a pending goal object is visible in the agent's zone, yet the
    /// agent navigates within that zone instead of picking.
    InvalidNavigation,
    /// C2: a pending goal object is visible, yet the agent issues another
    /// search navigation to a different zone.
    RepetitiveSearch,
    /// C3: the agent holds a goal object at its target receptacle's zone,
    /// yet navigates instead of placing.
    ErroneousNavigation,
    /// C4: the goal is satisfied, yet the agent does not terminate.
    FailureToTerminate,
}

impl ViolationCategory {
    pub const ALL: [ViolationCategory; 4] = [
        ViolationCategory::InvalidNavigation,
        ViolationCategory::RepetitiveSearch,
        ViolationCategory::ErroneousNavigation,
        ViolationCategory::FailureToTerminate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ViolationCategory::InvalidNavigation => "InvalidNavigation",
            ViolationCategory::RepetitiveSearch => "RepetitiveSearch",
            ViolationCategory::ErroneousNavigation => "ErroneousNavigation",
            ViolationCategory::FailureToTerminate => "FailureToTerminate",
        }
    }
}

impl fmt::Display for ViolationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One visible object in an observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleObject {
    pub id: ObjectId,
    #[serde(rename = "type")]
    pub object_type: ObjectType,
    pub open_state: Option<bool>,
    pub container: Option<ObjectId>,
}

/// A landmark: receptacle id with its zone. The landmark inventory is global
/// map knowledge and always part of the observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: ObjectId,
    pub zone: ZoneId,
}

/// Egocentric symbolic observation of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent_zone: ZoneId,
    /// Sorted by object id.
    pub visible: Vec<VisibleObject>,
    pub holding: Option<ObjectId>,
    /// All receptacles with their zones, sorted by id.
    pub landmarks: Vec<Landmark>,
}

/// Why an action failed to execute.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ExecError {
    #[error("episode already terminated")]
    EpisodeTerminated,
    #[error("action requires an argument")]
    MissingArgument,
    #[error("TaskCompleted takes no argument")]
    UnexpectedArgument,
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("`{0}` is not a receptacle")]
    NotReceptacle(String),
    #[error("`{0}` is not visible")]
    NotVisible(String),
    #[error("`{0}` is not pickable")]
    NotPickable(String),
    #[error("hand is not empty")]
    HandFull,
    #[error("hand is empty")]
    HandEmpty,
    #[error("receptacle `{0}` is closed")]
    ReceptacleClosed(String),
    #[error("`{0}` is not openable")]
    NotOpenable(String),
    #[error("`{0}` is already open")]
    AlreadyOpen(String),
    #[error("`{0}` is already closed")]
    AlreadyClosed(String),
}

/// Scene invariant breach (generator/deserialization guard).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SceneInvariantError {
    #[error("object `{0}` has ambiguous or missing location")]
    BadLocation(String),
    #[error("object `{0}`: pickable objects cannot be receptacles")]
    PickableReceptacle(String),
    #[error("object `{0}`: openable implies receptacle")]
    OpenableNonReceptacle(String),
    #[error("object `{0}`: is_open defined iff openable")]
    OpenStateMismatch(String),
    #[error("object `{0}`: containment depth exceeds 1")]
    DeepContainment(String),
    #[error("object `{0}` references unknown zone or container")]
    DanglingReference(String),
    #[error("held object `{0}` also has a zone or container")]
    HeldWithLocation(String),
    #[error("zone count {0} outside [3, 8]")]
    ZoneCount(usize),
    #[error("object count {0} outside [6, 20]")]
    ObjectCount(usize),
}

impl Scene {
    /// Zone an object currently resolves to: its own zone, its container's
    /// zone, or `None` when held.
    pub fn object_zone(&self, id: &ObjectId) -> Option<ZoneId> {
        let obj = self.objects.get(id)?;
        if self.holding.as_ref() == Some(id) {
            return None;
        }
        if let Some(container) = &obj.container {
            return self.objects.get(container).and_then(|c| c.zone.clone());
        }
        obj.zone.clone()
    }

    /// Visibility rule: in the agent's zone and not inside a closed
    /// receptacle, or held.
    pub fn is_visible(&self, id: &ObjectId) -> bool {
        if self.holding.as_ref() == Some(id) {
            return true;
        }
        let Some(obj) = self.objects.get(id) else { return false };
        let zone = match self.object_zone(id) {
            Some(z) => z,
            None => return false,
        };
        if zone != self.agent_zone {
            return false;
        }
        if let Some(container) = &obj.container {
            if let Some(c) = self.objects.get(container) {
                if c.openable && c.is_open == Some(false) {
                    return false;
                }
            }
        }
        true
    }

    /// Check every structural invariant; used by the generator and tests.
    pub fn validate(&self) -> Result<(), SceneInvariantError> {
        if !(3..=8).contains(&self.zones.len()) {
            return Err(SceneInvariantError::ZoneCount(self.zones.len()));
        }
        if !(6..=20).contains(&self.objects.len()) {
            return Err(SceneInvariantError::ObjectCount(self.objects.len()));
        }
        for (id, obj) in &self.objects {
            if obj.pickable && obj.receptacle {
                return Err(SceneInvariantError::PickableReceptacle(id.to_string()));
            }
            if obj.openable && !obj.receptacle {
                return Err(SceneInvariantError::OpenableNonReceptacle(id.to_string()));
            }
            if obj.openable != obj.is_open.is_some() {
                return Err(SceneInvariantError::OpenStateMismatch(id.to_string()));
            }
            let held = self.holding.as_ref() == Some(id);
            let in_zone = obj.zone.is_some();
            let contained = obj.container.is_some();
            if held && (in_zone || contained) {
                return Err(SceneInvariantError::HeldWithLocation(id.to_string()));
            }
            if !held && (in_zone == contained) {
                // Exactly one of zone/container must be set when not held.
                return Err(SceneInvariantError::BadLocation(id.to_string()));
            }
            if let Some(z) = &obj.zone {
                if !self.zones.contains(z) {
                    return Err(SceneInvariantError::DanglingReference(id.to_string()));
                }
            }
            if let Some(c) = &obj.container {
                let Some(container) = self.objects.get(c) else {
                    return Err(SceneInvariantError::DanglingReference(id.to_string()));
                };
                if !container.receptacle {
                    return Err(SceneInvariantError::DeepContainment(id.to_string()));
                }
                if container.container.is_some() {
                    return Err(SceneInvariantError::DeepContainment(id.to_string()));
                }
            }
            if obj.receptacle && (obj.container.is_some() || obj.zone.is_none()) {
                return Err(SceneInvariantError::BadLocation(id.to_string()));
            }
        }
        if let Some(held) = &self.holding {
            if !self.objects.contains_key(held) {
                return Err(SceneInvariantError::DanglingReference(held.to_string()));
            }
        }
        Ok(())
    }

    /// Receptacle ids sorted ascending.
    pub fn receptacle_ids(&self) -> Vec<ObjectId> {
        self.objects
            .values()
            .filter(|o| o.receptacle)
            .map(|o| o.id.clone())
            .collect()
    }

    /// Receptacles located in `zone`, ascending by id.
    pub fn receptacles_in_zone(&self, zone: &ZoneId) -> Vec<ObjectId> {
        self.objects
            .values()
            .filter(|o| o.receptacle && o.zone.as_ref() == Some(zone))
            .map(|o| o.id.clone())
            .collect()
    }

    /// First object of the given type, if any.
    pub fn object_of_type(&self, ty: &ObjectType) -> Option<&ObjectInstance> {
        self.objects.values().find(|o| &o.object_type == ty)
    }
}

/// Pure observation projection of a scene.
pub fn observe(scene: &Scene) -> Observation {
    let mut visible: Vec<VisibleObject> = scene
        .objects
        .values()
        .filter(|o| scene.is_visible(&o.id))
        .map(|o| VisibleObject {
            id: o.id.clone(),
            object_type: o.object_type.clone(),
            open_state: o.is_open,
            container: o.container.clone(),
        })
        .collect();
    visible.sort_by(|a, b| a.id.cmp(&b.id));

    let mut landmarks: Vec<Landmark> = scene
        .objects
        .values()
        .filter(|o| o.receptacle)
        .map(|o| Landmark {
            id: o.id.clone(),
            zone: o.zone.clone().expect("receptacles sit in a zone"),
        })
        .collect();
    landmarks.sort_by(|a, b| a.id.cmp(&b.id));

    Observation {
        agent_zone: scene.agent_zone.clone(),
        visible,
        holding: scene.holding.clone(),
        landmarks,
    }
}

/// Enumerate exactly the actions `step` would execute in this scene.
///
/// Rules: `Navigate(L)` for every receptacle `L` (redundant navigation
/// included); `Pick(o)` for visible pickables with an empty hand; `Place(r)`
/// onto visible receptacles (open, if openable) while holding; `Open`/`Close`
/// toggles on visible openables; `TaskCompleted` always.
pub fn valid_actions(scene: &Scene) -> std::collections::BTreeSet<Action> {
    let mut out = std::collections::BTreeSet::new();
    if scene.terminal {
        return out;
    }
    out.insert(Action::task_completed());
    for obj in scene.objects.values() {
        if obj.receptacle {
            out.insert(Action { verb: Verb::Navigate, arg: Some(obj.id.clone()) });
        }
        if !scene.is_visible(&obj.id) {
            continue;
        }
        if obj.pickable && scene.holding.is_none() {
            out.insert(Action { verb: Verb::Pick, arg: Some(obj.id.clone()) });
        }
        if obj.receptacle
            && scene.holding.is_some()
            && (!obj.openable || obj.is_open == Some(true))
        {
            out.insert(Action { verb: Verb::Place, arg: Some(obj.id.clone()) });
        }
        if obj.openable && obj.is_open == Some(false) {
            out.insert(Action { verb: Verb::Open, arg: Some(obj.id.clone()) });
        }
        if obj.openable && obj.is_open == Some(true) {
            out.insert(Action { verb: Verb::Close, arg: Some(obj.id.clone()) });
        }
    }
    out
}

/// Apply `action` to `scene`, returning the successor scene and its
/// observation. The input scene is unchanged on error; invalid attempts are
/// recorded by callers and the episode may continue.
///
/// Precondition checks here are written out independently of
/// [`valid_actions`]; the two paths are cross-checked exhaustively in tests.
pub fn step(scene: &Scene, action: &Action) -> Result<(Scene, Observation), ExecError> {
    if scene.terminal {
        return Err(ExecError::EpisodeTerminated);
    }
    let mut next = scene.clone();
    match action.verb {
        Verb::TaskCompleted => {
            if action.arg.is_some() {
                return Err(ExecError::UnexpectedArgument);
            }
            next.terminal = true;
        }
        Verb::Navigate => {
            let id = require_arg(action)?;
            let obj = lookup(scene, id)?;
            if !obj.receptacle {
                return Err(ExecError::NotReceptacle(id.to_string()));
            }
            next.agent_zone = obj.zone.clone().expect("receptacles sit in a zone");
        }
        Verb::Pick => {
            let id = require_arg(action)?;
            let obj = lookup(scene, id)?;
            if !scene.is_visible(id) {
                return Err(ExecError::NotVisible(id.to_string()));
            }
            if !obj.pickable {
                return Err(ExecError::NotPickable(id.to_string()));
            }
            if scene.holding.is_some() {
                return Err(ExecError::HandFull);
            }
            let o = next.objects.get_mut(id).expect("checked above");
            o.zone = None;
            o.container = None;
            next.holding = Some(id.clone());
        }
        Verb::Place => {
            let id = require_arg(action)?;
            let obj = lookup(scene, id)?;
            let Some(held) = scene.holding.clone() else {
                return Err(ExecError::HandEmpty);
            };
            if !obj.receptacle {
                return Err(ExecError::NotReceptacle(id.to_string()));
            }
            if !scene.is_visible(id) {
                return Err(ExecError::NotVisible(id.to_string()));
            }
            if obj.openable && obj.is_open == Some(false) {
                return Err(ExecError::ReceptacleClosed(id.to_string()));
            }
            let o = next.objects.get_mut(&held).expect("held object exists");
            o.container = Some(id.clone());
            o.zone = None;
            next.holding = None;
        }
        Verb::Open => {
            let id = require_arg(action)?;
            let obj = lookup(scene, id)?;
            if !obj.openable {
                return Err(ExecError::NotOpenable(id.to_string()));
            }
            if !scene.is_visible(id) {
                return Err(ExecError::NotVisible(id.to_string()));
            }
            if obj.is_open == Some(true) {
                return Err(ExecError::AlreadyOpen(id.to_string()));
            }
            next.objects.get_mut(id).expect("checked above").is_open = Some(true);
        }
        Verb::Close => {
            let id = require_arg(action)?;
            let obj = lookup(scene, id)?;
            if !obj.openable {
                return Err(ExecError::NotOpenable(id.to_string()));
            }
            if !scene.is_visible(id) {
                return Err(ExecError::NotVisible(id.to_string()));
            }
            if obj.is_open == Some(false) {
                return Err(ExecError::AlreadyClosed(id.to_string()));
            }
            next.objects.get_mut(id).expect("checked above").is_open = Some(false);
        }
    }
    next.step_count += 1;
    let obs = observe(&next);
    Ok((next, obs))
}

fn require_arg(action: &Action) -> Result<&ObjectId, ExecError> {
    action.arg.as_ref().ok_or(ExecError::MissingArgument)
}

fn lookup<'s>(scene: &'s Scene, id: &ObjectId) -> Result<&'s ObjectInstance, ExecError> {
    scene
        .objects
        .get(id)
        .ok_or_else(|| ExecError::UnknownObject(id.to_string()))
}

/// Does the scene satisfy the goal?
pub fn check_success(scene: &Scene, goal: &Goal) -> bool {
    match &goal.template {
        GoalTemplate::PlaceIn { item, receptacle } => placed(scene, item, receptacle),
        GoalTemplate::PlaceInClosed { item, receptacle } => {
            placed(scene, item, receptacle)
                && scene
                    .objects
                    .get(receptacle)
                    .map(|r| r.is_open == Some(false))
                    .unwrap_or(false)
        }
        GoalTemplate::SetOpenState { receptacle, open } => scene
            .objects
            .get(receptacle)
            .map(|r| r.is_open == Some(*open))
            .unwrap_or(false),
        GoalTemplate::MultiPlace { items } => {
            items.iter().all(|(item, receptacle)| placed(scene, item, receptacle))
        }
    }
}

fn placed(scene: &Scene, item: &ObjectType, receptacle: &ObjectId) -> bool {
    scene
        .objects
        .values()
        .any(|o| &o.object_type == item && o.container.as_ref() == Some(receptacle))
}

/// Goal objects the agent still has to move: instances of a goal item type
/// whose placement requirement is not yet met, paired with their target
/// receptacle. Objects already inside their target are done and no longer
/// count for the navigation-violation categories.
pub fn pending_goal_objects(scene: &Scene, goal: &Goal) -> Vec<(ObjectId, ObjectId)> {
    let mut out = Vec::new();
    for (item, receptacle) in goal.placement_pairs() {
        for obj in scene.objects.values() {
            if obj.object_type == item && obj.container.as_ref() != Some(&receptacle) {
                out.push((obj.id.clone(), receptacle.clone()));
            }
        }
    }
    out
}

/// Classify the action against the four violation categories, applying the
/// precedence C4 > C3 > C1 > C2. Returns `None` for violation-free actions.
pub fn classify_violation(
    scene: &Scene,
    goal: &Goal,
    action: &Action,
) -> Option<ViolationCategory> {
    // C4: task complete but the agent keeps acting.
    if check_success(scene, goal) && action.verb != Verb::TaskCompleted {
        return Some(ViolationCategory::FailureToTerminate);
    }
    if action.verb != Verb::Navigate {
        return None;
    }
    let pending = pending_goal_objects(scene, goal);
    // C3: holding a goal object at its target receptacle's zone, navigating
    // anywhere instead of placing.
    if let Some(held) = &scene.holding {
        if let Some((_, target)) = pending.iter().find(|(o, _)| o == held) {
            if scene.object_zone(target) == Some(scene.agent_zone.clone()) {
                return Some(ViolationCategory::ErroneousNavigation);
            }
        }
    }
    // C1/C2: an unheld pending goal object is in view, yet the agent
    // navigates again. Same-zone targets are C1, cross-zone ones C2.
    let unheld_visible = pending
        .iter()
        .any(|(o, _)| scene.holding.as_ref() != Some(o) && scene.is_visible(o));
    if unheld_visible {
        let target_zone = action.arg.as_ref().and_then(|id| scene.object_zone(id));
        if target_zone == Some(scene.agent_zone.clone()) {
            return Some(ViolationCategory::InvalidNavigation);
        }
        return Some(ViolationCategory::RepetitiveSearch);
    }
    None
}

/// Projection of a scene that defines state identity for hashing: everything
/// except `rng_seed` and `step_count`.
#[derive(Serialize)]
struct HashView<'a> {
    zones: &'a [ZoneId],
    objects: &'a BTreeMap<ObjectId, ObjectInstance>,
    agent_zone: &'a ZoneId,
    holding: &'a Option<ObjectId>,
    terminal: bool,
}

/// 64-bit digest of the scene's canonical serialization, ignoring
/// `rng_seed` and `step_count`. Equal states hash equally.
pub fn state_hash(scene: &Scene) -> u64 {
    let view = HashView {
        zones: &scene.zones,
        objects: &scene.objects,
        agent_zone: &scene.agent_zone,
        holding: &scene.holding,
        terminal: scene.terminal,
    };
    let bytes = serde_json::to_vec(&view).expect("scene serializes");
    digest64(&bytes)
}

#[cfg(test)]
mod tests;
