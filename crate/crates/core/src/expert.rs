//! Expert planners and supervised dataset builders.
//!
//! Two modes: the privileged planner knows hidden object locations and emits
//! the shortest macro-schema plan (this defines the reference length used by
//! path-length-weighted success); the search planner acts only on what it
//! has observed, visiting zones in a fixed order and opening receptacles
//! until the target is found, which is the behavior demonstrations should
//! exhibit.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{
    check_success, classify_violation, observe, state_hash, step, Action, ExecError, Goal,
    Observation, ObjectId, Scene, Verb, ViolationCategory, ZoneId,
};

/// Hard safety cap on planner iterations, independent of the episode cap.
const PLAN_SAFETY_CAP: usize = 128;

/// One step of a rollout or demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// 1-based step index.
    pub t: usize,
    /// Observation before the action (I_t).
    pub observation: Observation,
    pub action: Action,
    /// Whether the action executed (false records an invalid attempt).
    pub executed: bool,
    pub violation: Option<ViolationCategory>,
    pub state_hash_before: u64,
}

/// A complete episode: goal, per-step records, final scene, success flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub goal: Goal,
    pub steps: Vec<TraceStep>,
    pub terminal_scene: Scene,
    pub success: bool,
}

impl Trace {
    /// Actions of steps `1..t-1` as emitted (the history prefix for step `t`,
    /// 1-based).
    pub fn history_before(&self, t: usize) -> Vec<Action> {
        self.steps[..t - 1].iter().map(|s| s.action.clone()).collect()
    }
}

/// One supervised training example.
///
/// `history` is `None` for stage-1 (history-free) samples and `Some` for
/// stage-2 samples; a `Some(vec![])` marks the first step of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedSample {
    pub observation: Observation,
    pub goal: Goal,
    pub history: Option<Vec<Action>>,
    pub target: Action,
}

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("pair is unsolvable: {0}")]
    Unsolvable(String),
    #[error("search plan exceeded the step cap of {0}")]
    StepCapExceeded(usize),
    #[error("planner emitted an invalid action ({0}); this is a planner bug")]
    Internal(#[from] ExecError),
}

/// Zones in ascending id order; the default deterministic search order.
pub fn default_search_order(scene: &Scene) -> Vec<ZoneId> {
    let mut zones = scene.zones.clone();
    zones.sort_by(|a, b| (a.0.len(), &a.0).cmp(&(b.0.len(), &b.0)));
    zones
}

struct PlanRun {
    scene: Scene,
    steps: Vec<TraceStep>,
}

impl PlanRun {
    fn new(scene: &Scene) -> Self {
        PlanRun { scene: scene.clone(), steps: Vec::new() }
    }

    fn emit(&mut self, goal: &Goal, action: Action) -> Result<(), ExpertError> {
        let observation = observe(&self.scene);
        let state_hash_before = state_hash(&self.scene);
        let violation = classify_violation(&self.scene, goal, &action);
        let (next, _) = step(&self.scene, &action)?;
        self.steps.push(TraceStep {
            t: self.steps.len() + 1,
            observation,
            action,
            executed: true,
            violation,
            state_hash_before,
        });
        self.scene = next;
        Ok(())
    }

    fn into_trace(self, goal: &Goal) -> Trace {
        let success = self
            .steps
            .last()
            .map(|s| s.executed && s.action.verb == Verb::TaskCompleted)
            .unwrap_or(false)
            && check_success(&self.scene, goal);
        Trace {
            goal: goal.clone(),
            steps: self.steps,
            terminal_scene: self.scene,
            success,
        }
    }
}

/// First receptacle (ascending id) in `zone`.
fn anchor_receptacle(scene: &Scene, zone: &ZoneId) -> Option<ObjectId> {
    scene.receptacles_in_zone(zone).into_iter().next()
}

/// Pending placement pairs `(object id, target receptacle)` in goal order,
/// restricted to the given pair-index order.
fn pending_in_order(scene: &Scene, goal: &Goal, order: &[usize]) -> Vec<(ObjectId, ObjectId)> {
    let pairs = goal.placement_pairs();
    let mut out = Vec::new();
    for &idx in order {
        let (item, receptacle) = &pairs[idx];
        for obj in scene.objects.values() {
            if &obj.object_type == item && obj.container.as_ref() != Some(receptacle) {
                out.push((obj.id.clone(), receptacle.clone()));
            }
        }
    }
    out
}

/// The open/close subgoal still outstanding, if any: `(receptacle, desired)`.
fn open_state_subgoal(scene: &Scene, goal: &Goal) -> Option<(ObjectId, bool)> {
    match &goal.template {
        crate::world::GoalTemplate::SetOpenState { receptacle, open } => {
            let current = scene.objects.get(receptacle)?.is_open?;
            (current != *open).then(|| (receptacle.clone(), *open))
        }
        crate::world::GoalTemplate::PlaceInClosed { receptacle, .. } => {
            let current = scene.objects.get(receptacle)?.is_open?;
            current.then(|| (receptacle.clone(), false))
        }
        _ => None,
    }
}

/// Emit the deliver action for a held goal object: navigate to the target's
/// zone, open it if closed, place.
fn deliver_step(scene: &Scene, target: &ObjectId) -> Action {
    if scene.object_zone(target) != Some(scene.agent_zone.clone()) {
        return Action { verb: Verb::Navigate, arg: Some(target.clone()) };
    }
    let rec = scene.objects.get(target).expect("target exists");
    if rec.openable && rec.is_open == Some(false) {
        return Action { verb: Verb::Open, arg: Some(target.clone()) };
    }
    Action { verb: Verb::Place, arg: Some(target.clone()) }
}

/// Emit the stash action freeing the hand: place the held item into the
/// first workable receptacle in the current zone.
fn stash_step(scene: &Scene) -> Result<Action, ExpertError> {
    let recs = scene.receptacles_in_zone(&scene.agent_zone);
    // Prefer a receptacle that accepts a Place right now.
    for r in &recs {
        let rec = scene.objects.get(r).expect("receptacle exists");
        if !rec.openable || rec.is_open == Some(true) {
            return Ok(Action { verb: Verb::Place, arg: Some(r.clone()) });
        }
    }
    match recs.first() {
        Some(r) => Ok(Action { verb: Verb::Open, arg: Some(r.clone()) }),
        None => Err(ExpertError::Unsolvable("no receptacle in zone to stash into".into())),
    }
}

fn plan_privileged_ordered(
    scene: &Scene,
    goal: &Goal,
    order: &[usize],
) -> Result<Trace, ExpertError> {
    let mut run = PlanRun::new(scene);
    loop {
        if run.steps.len() >= PLAN_SAFETY_CAP {
            return Err(ExpertError::Unsolvable("privileged plan exceeded safety cap".into()));
        }
        let s = &run.scene;
        if check_success(s, goal) {
            run.emit(goal, Action::task_completed())?;
            return Ok(run.into_trace(goal));
        }
        let pending = pending_in_order(s, goal, order);
        if let Some(held) = s.holding.clone() {
            if let Some((_, target)) = pending.iter().find(|(o, _)| *o == held) {
                let action = deliver_step(s, target);
                run.emit(goal, action)?;
                continue;
            }
            if !pending.is_empty() {
                let action = stash_step(s)?;
                run.emit(goal, action)?;
                continue;
            }
        }
        if s.holding.is_none() {
            if let Some((item, _)) = pending.first() {
                let obj = s.objects.get(item).expect("pending object exists");
                let item_zone = s.object_zone(item).expect("unheld object has a zone");
                let action = if item_zone != s.agent_zone {
                    // Navigate toward the item: its container if contained,
                    // else the zone's anchor receptacle.
                    let nav_target = obj.container.clone().or_else(|| {
                        anchor_receptacle(s, &item_zone)
                    });
                    match nav_target {
                        Some(t) => Action { verb: Verb::Navigate, arg: Some(t) },
                        None => {
                            return Err(ExpertError::Unsolvable(format!(
                                "no receptacle anchors zone {item_zone}"
                            )))
                        }
                    }
                } else if let Some(container) = &obj.container {
                    let c = s.objects.get(container).expect("container exists");
                    if c.openable && c.is_open == Some(false) {
                        Action { verb: Verb::Open, arg: Some(container.clone()) }
                    } else {
                        Action { verb: Verb::Pick, arg: Some(item.clone()) }
                    }
                } else {
                    Action { verb: Verb::Pick, arg: Some(item.clone()) }
                };
                run.emit(goal, action)?;
                continue;
            }
        }
        match open_state_subgoal(&run.scene, goal) {
            Some((receptacle, want_open)) => {
                let s = &run.scene;
                let action = if s.object_zone(&receptacle) != Some(s.agent_zone.clone()) {
                    Action { verb: Verb::Navigate, arg: Some(receptacle) }
                } else if want_open {
                    Action { verb: Verb::Open, arg: Some(receptacle) }
                } else {
                    Action { verb: Verb::Close, arg: Some(receptacle) }
                };
                run.emit(goal, action)?;
            }
            None => {
                return Err(ExpertError::Unsolvable(
                    "no subgoal left yet the goal is unsatisfied".into(),
                ))
            }
        }
    }
}

/// Shortest macro-schema plan under full state knowledge.
///
/// Multi-item goals are planned under every item ordering and the shortest
/// result wins (ties resolve to the listed order).
pub fn plan_privileged(scene: &Scene, goal: &Goal) -> Result<Trace, ExpertError> {
    let n = goal.placement_pairs().len();
    if n <= 1 {
        let order: Vec<usize> = (0..n).collect();
        return plan_privileged_ordered(scene, goal, &order);
    }
    let mut best: Option<Trace> = None;
    for order in permutations(n) {
        let trace = plan_privileged_ordered(scene, goal, &order)?;
        let better = match &best {
            Some(b) => trace.steps.len() < b.steps.len(),
            None => true,
        };
        if better {
            best = Some(trace);
        }
    }
    Ok(best.expect("at least one ordering"))
}

/// All permutations of `0..n` in lexicographic order (n is tiny).
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    permute(&mut items, 0, &mut out);
    out.sort();
    out
}

fn permute(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, out);
        items.swap(k, i);
    }
}

/// Agent memory for the search planner: which pickables it has seen and
/// which receptacle interiors it has inspected.
#[derive(Default)]
struct SearchMemory {
    known: BTreeSet<ObjectId>,
    inspected: BTreeSet<ObjectId>,
    visited: BTreeSet<ZoneId>,
}

impl SearchMemory {
    fn update(&mut self, scene: &Scene) {
        self.visited.insert(scene.agent_zone.clone());
        let obs = observe(scene);
        for v in &obs.visible {
            self.known.insert(v.id.clone());
        }
        for r in scene.receptacles_in_zone(&scene.agent_zone) {
            let rec = scene.objects.get(&r).expect("receptacle exists");
            if !rec.openable || rec.is_open == Some(true) {
                self.inspected.insert(r);
            }
        }
    }

    fn zone_fully_searched(&self, scene: &Scene, zone: &ZoneId) -> bool {
        if !self.visited.contains(zone) {
            return false;
        }
        scene
            .receptacles_in_zone(zone)
            .iter()
            .all(|r| self.inspected.contains(r))
    }
}

/// Successful demonstration using only information visible so far.
///
/// Unknown goal objects are searched for by visiting zones in `search_order`
/// and opening closed receptacles (ascending id); receptacles that turn out
/// not to contain a goal object are closed again before moving on.
pub fn plan_search(
    scene: &Scene,
    goal: &Goal,
    search_order: &[ZoneId],
) -> Result<Trace, ExpertError> {
    let order: Vec<usize> = (0..goal.placement_pairs().len()).collect();
    let cap = PLAN_SAFETY_CAP;
    let mut run = PlanRun::new(scene);
    let mut memory = SearchMemory::default();
    memory.update(&run.scene);
    let mut just_opened: Option<ObjectId> = None;

    loop {
        if run.steps.len() >= cap {
            return Err(ExpertError::StepCapExceeded(cap));
        }
        let s = run.scene.clone();
        if check_success(&s, goal) {
            run.emit(goal, Action::task_completed())?;
            memory.update(&run.scene);
            return Ok(run.into_trace(goal));
        }
        let pending = pending_in_order(&s, goal, &order);

        // Close a receptacle we just peeked into if it held nothing useful.
        if let Some(r) = just_opened.take() {
            let holds_goal_item = pending
                .iter()
                .any(|(o, _)| s.objects.get(o).map(|x| x.container.as_ref()) == Some(Some(&r)));
            if !holds_goal_item {
                run.emit(goal, Action { verb: Verb::Close, arg: Some(r) })?;
                memory.update(&run.scene);
                continue;
            }
        }

        let action = if let Some(held) = s.holding.clone() {
            if let Some((_, target)) = pending.iter().find(|(o, _)| *o == held) {
                deliver_step(&s, target)
            } else if !pending.is_empty() {
                stash_step(&s)?
            } else {
                open_state_action(&s, goal)?
            }
        } else if let Some((item, _)) = pending.first() {
            if memory.known.contains(item) {
                fetch_known(&s, item)?
            } else {
                let (action, opened) = search_step(&s, &memory, search_order)?;
                if let Some(r) = opened {
                    just_opened = Some(r);
                }
                action
            }
        } else {
            open_state_action(&s, goal)?
        };
        run.emit(goal, action)?;
        memory.update(&run.scene);
    }
}

fn open_state_action(scene: &Scene, goal: &Goal) -> Result<Action, ExpertError> {
    let Some((receptacle, want_open)) = open_state_subgoal(scene, goal) else {
        return Err(ExpertError::Unsolvable(
            "no subgoal left yet the goal is unsatisfied".into(),
        ));
    };
    if scene.object_zone(&receptacle) != Some(scene.agent_zone.clone()) {
        return Ok(Action { verb: Verb::Navigate, arg: Some(receptacle) });
    }
    if want_open {
        Ok(Action { verb: Verb::Open, arg: Some(receptacle) })
    } else {
        Ok(Action { verb: Verb::Close, arg: Some(receptacle) })
    }
}

/// Next fetch action for an item whose location the agent knows.
fn fetch_known(scene: &Scene, item: &ObjectId) -> Result<Action, ExpertError> {
    let obj = scene.objects.get(item).expect("known object exists");
    let item_zone = scene
        .object_zone(item)
        .ok_or_else(|| ExpertError::Unsolvable("known item has no zone".into()))?;
    if item_zone != scene.agent_zone {
        let nav = obj
            .container
            .clone()
            .or_else(|| anchor_receptacle(scene, &item_zone))
            .ok_or_else(|| ExpertError::Unsolvable("zone without receptacle".into()))?;
        return Ok(Action { verb: Verb::Navigate, arg: Some(nav) });
    }
    if let Some(container) = &obj.container {
        let c = scene.objects.get(container).expect("container exists");
        if c.openable && c.is_open == Some(false) {
            return Ok(Action { verb: Verb::Open, arg: Some(container.clone()) });
        }
    }
    Ok(Action { verb: Verb::Pick, arg: Some(item.clone()) })
}

/// Next search action: open the first unseen closed receptacle here, else
/// move to the next unsearched zone. Returns the action and, for opens, the
/// receptacle being peeked into.
fn search_step(
    scene: &Scene,
    memory: &SearchMemory,
    search_order: &[ZoneId],
) -> Result<(Action, Option<ObjectId>), ExpertError> {
    for r in scene.receptacles_in_zone(&scene.agent_zone) {
        let rec = scene.objects.get(&r).expect("receptacle exists");
        if rec.openable && rec.is_open == Some(false) && !memory.inspected.contains(&r) {
            return Ok((Action { verb: Verb::Open, arg: Some(r.clone()) }, Some(r)));
        }
    }
    for zone in search_order {
        if *zone == scene.agent_zone || memory.zone_fully_searched(scene, zone) {
            continue;
        }
        let anchor = anchor_receptacle(scene, zone)
            .ok_or_else(|| ExpertError::Unsolvable("zone without receptacle".into()))?;
        return Ok((Action { verb: Verb::Navigate, arg: Some(anchor) }, None));
    }
    Err(ExpertError::Unsolvable("search exhausted all zones".into()))
}

/// The privileged expert's next action from an arbitrary live state.
pub fn expert_next_action(scene: &Scene, goal: &Goal) -> Result<Action, ExpertError> {
    let trace = plan_privileged(scene, goal)?;
    Ok(trace.steps.first().expect("plans are non-empty").action.clone())
}

/// Stage-1 dataset: steps whose action is determined by the current frame.
///
/// Keeps `Pick`/`Place`/`Open`/`Close` steps whose argument is visible in the
/// step's observation, plus terminating steps emitted once the goal already
/// holds. Navigation steps are dropped and the history channel is blocked.
pub fn build_spatial_dataset(traces: &[Trace]) -> Vec<SupervisedSample> {
    let mut out = Vec::new();
    for trace in traces {
        for step in &trace.steps {
            let keep = match step.action.verb {
                Verb::Pick | Verb::Place | Verb::Open | Verb::Close => step
                    .action
                    .arg
                    .as_ref()
                    .map(|arg| step.observation.visible.iter().any(|v| &v.id == arg))
                    .unwrap_or(false),
                Verb::TaskCompleted => {
                    trace.success && step.t == trace.steps.len()
                }
                Verb::Navigate => false,
            };
            if keep {
                out.push(SupervisedSample {
                    observation: step.observation.clone(),
                    goal: trace.goal.clone(),
                    history: None,
                    target: step.action.clone(),
                });
            }
        }
    }
    out
}

/// Stage-2 dataset: one sample per step with the full action history
/// (empty at t=1, never `None`).
pub fn build_temporal_dataset(traces: &[Trace]) -> Vec<SupervisedSample> {
    let mut out = Vec::new();
    for trace in traces {
        for step in &trace.steps {
            out.push(SupervisedSample {
                observation: step.observation.clone(),
                goal: trace.goal.clone(),
                history: Some(trace.history_before(step.t)),
                target: step.action.clone(),
            });
        }
    }
    out
}
