//! Shared fixtures and independent oracles for the integration suites.
//!
//! The oracles here deliberately avoid the library's own shortcut paths:
//! plan lengths come from breadth-first search over the reachable state
//! graph, action validity from clone-and-execute, and goal checks from a
//! re-implementation over the serialized JSON.

#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

use serde_json::Value;
use stagedplan_core::policy::ModelConfig;
use stagedplan_core::world::{
    check_success, step, Action, Goal, Scene, SceneConfig, Verb,
};

/// Small 3-zone generator config with a 31-token vocabulary; paired with
/// [`micro_model_config`] it stays under 500 parameters.
pub fn tiny_scene_config() -> SceneConfig {
    SceneConfig {
        zones: 3,
        receptacles_min: 3,
        receptacles_max: 3,
        pickables_min: 3,
        pickables_max: 3,
        p_hide: 0.3,
        pickable_pool: vec!["Pen".into(), "Apple".into(), "Key".into()],
        openable_pool: vec!["Drawer".into(), "Box".into()],
        plain_pool: vec!["Table".into()],
        ..SceneConfig::default()
    }
}

/// Sub-500-parameter model over the tiny vocabulary.
pub fn micro_model_config(vocab_size: usize) -> ModelConfig {
    ModelConfig { vocab_size, d_model: 3, n_layers: 1, n_heads: 1, context: 40 }
}

/// Small-but-capable model for learning tests.
pub fn small_model_config(vocab_size: usize) -> ModelConfig {
    ModelConfig { vocab_size, d_model: 16, n_layers: 1, n_heads: 2, context: 128 }
}

/// Canonical state identity for oracle bookkeeping: everything except the
/// bookkeeping fields, serialized. Built from public fields only.
pub fn state_key(scene: &Scene) -> String {
    serde_json::to_string(&(
        &scene.zones,
        &scene.objects,
        &scene.agent_zone,
        &scene.holding,
        scene.terminal,
    ))
    .expect("scene serializes")
}

/// Every well-formed action in the scene's universe.
pub fn all_well_formed_actions(scene: &Scene) -> Vec<Action> {
    let mut out = vec![Action::task_completed()];
    for id in scene.objects.keys() {
        for verb in [Verb::Navigate, Verb::Pick, Verb::Place, Verb::Open, Verb::Close] {
            out.push(Action { verb, arg: Some(id.clone()) });
        }
    }
    out
}

/// Brute-force shortest plan length (including the terminating action) via
/// BFS over the reachable state graph, using clone-and-execute transitions.
/// Returns `None` if no plan of length ≤ `cap` exists.
pub fn bfs_shortest_plan_len(scene: &Scene, goal: &Goal, cap: usize) -> Option<usize> {
    if check_success(scene, goal) {
        return Some(1);
    }
    let mut dist: HashMap<String, usize> = HashMap::new();
    let mut queue: VecDeque<(Scene, usize)> = VecDeque::new();
    dist.insert(state_key(scene), 0);
    queue.push_back((scene.clone(), 0));
    let mut explored = 0usize;
    while let Some((s, d)) = queue.pop_front() {
        if d + 1 >= cap {
            continue;
        }
        explored += 1;
        assert!(explored < 2_000_000, "BFS oracle exploded; shrink the fixture");
        for action in all_well_formed_actions(&s) {
            if action.verb == Verb::TaskCompleted {
                continue;
            }
            if let Ok((next, _)) = step(&s, &action) {
                if check_success(&next, goal) {
                    // d+1 world-changing actions, plus the termination.
                    return Some(d + 2);
                }
                let key = state_key(&next);
                if !dist.contains_key(&key) {
                    dist.insert(key, d + 1);
                    queue.push_back((next, d + 1));
                }
            }
        }
    }
    None
}

/// Independent goal predicate over the canonical JSON serialization.
pub fn json_goal_oracle(scene: &Scene, goal: &Goal) -> bool {
    let doc: Value = serde_json::from_str(&serde_json::to_string(scene).unwrap()).unwrap();
    let objects = doc.get("objects").and_then(Value::as_object).expect("objects map");
    let container_of = |type_name: &str| -> Option<String> {
        objects
            .values()
            .find(|o| o.get("type").and_then(Value::as_str) == Some(type_name))
            .and_then(|o| o.get("container").and_then(Value::as_str).map(String::from))
    };
    let is_open = |id: &str| -> Option<bool> {
        objects.get(id).and_then(|o| o.get("is_open")).and_then(Value::as_bool)
    };
    match &goal.template {
        stagedplan_core::world::GoalTemplate::PlaceIn { item, receptacle } => {
            container_of(&item.0).as_deref() == Some(receptacle.0.as_str())
        }
        stagedplan_core::world::GoalTemplate::PlaceInClosed { item, receptacle } => {
            container_of(&item.0).as_deref() == Some(receptacle.0.as_str())
                && is_open(&receptacle.0) == Some(false)
        }
        stagedplan_core::world::GoalTemplate::SetOpenState { receptacle, open } => {
            is_open(&receptacle.0) == Some(*open)
        }
        stagedplan_core::world::GoalTemplate::MultiPlace { items } => items
            .iter()
            .all(|(item, receptacle)| {
                container_of(&item.0).as_deref() == Some(receptacle.0.as_str())
            }),
    }
}
