use super::*;
use crate::world::gen::{generate_scene, SceneConfig};

/// Hand-built three-zone fixture: agent in z0 with a closed Drawer holding a
/// Pen, an open Box, and a Table; a Fridge in z1; a Shelf in z2 with an
/// Apple on the floor of z2.
pub(crate) fn fixture_scene() -> Scene {
    let mut objects = BTreeMap::new();
    let mut add = |id: &str, ty: &str, zone: Option<&str>, pickable: bool, receptacle: bool,
                   openable: bool, is_open: Option<bool>, container: Option<&str>| {
        objects.insert(
            ObjectId::new(id),
            ObjectInstance {
                id: ObjectId::new(id),
                object_type: ObjectType::new(ty),
                zone: zone.map(ZoneId::new),
                pickable,
                receptacle,
                openable,
                is_open,
                container: container.map(ObjectId::new),
            },
        );
    };
    add("Drawer", "Drawer", Some("z0"), false, true, true, Some(false), None);
    add("Box", "Box", Some("z0"), false, true, true, Some(true), None);
    add("Table", "Table", Some("z0"), false, true, false, None, None);
    add("Fridge", "Fridge", Some("z1"), false, true, true, Some(false), None);
    add("Shelf", "Shelf", Some("z2"), false, true, false, None, None);
    add("Pen", "Pen", None, true, false, false, None, Some("Drawer"));
    add("Apple", "Apple", Some("z2"), true, false, false, None, None);
    Scene {
        zones: vec![ZoneId::new("z0"), ZoneId::new("z1"), ZoneId::new("z2")],
        objects,
        agent_zone: ZoneId::new("z0"),
        holding: None,
        rng_seed: 0,
        step_count: 0,
        terminal: false,
    }
}

fn goal_pen_in_box() -> Goal {
    Goal::new(GoalTemplate::PlaceIn {
        item: ObjectType::new("Pen"),
        receptacle: ObjectId::new("Box"),
    })
}

#[test]
fn fixture_satisfies_invariants() {
    fixture_scene().validate().unwrap();
}

#[test]
fn observe_hides_contents_of_closed_receptacles() {
    let s = fixture_scene();
    let obs = observe(&s);
    assert!(obs.visible.iter().all(|v| v.id.0 != "Pen"), "Pen is inside a closed Drawer");
    assert!(obs.visible.iter().any(|v| v.id.0 == "Drawer"));
    assert!(obs.visible.iter().all(|v| v.id.0 != "Apple"), "Apple is in another zone");
}

#[test]
fn observe_reveals_contents_after_open() {
    let s = fixture_scene();
    let (s, obs) = step(&s, &Action::open("Drawer")).unwrap();
    let pen = obs.visible.iter().find(|v| v.id.0 == "Pen").expect("Pen visible");
    assert_eq!(pen.container, Some(ObjectId::new("Drawer")));
    // Purity: observing the stored scene gives the identical observation.
    assert_eq!(observe(&s), obs);
}

#[test]
fn observe_orders_visible_by_id_and_lists_all_landmarks() {
    let s = fixture_scene();
    let obs = observe(&s);
    let ids: Vec<&str> = obs.visible.iter().map(|v| v.id.0.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert_eq!(obs.landmarks.len(), 5, "all receptacles are landmarks");
}

#[test]
fn held_object_is_visible() {
    let s = fixture_scene();
    let (s, _) = step(&s, &Action::open("Drawer")).unwrap();
    let (s, obs) = step(&s, &Action::pick("Pen")).unwrap();
    assert_eq!(s.holding, Some(ObjectId::new("Pen")));
    assert!(obs.visible.iter().any(|v| v.id.0 == "Pen"));
    assert_eq!(s.object_zone(&ObjectId::new("Pen")), None);
}

#[test]
fn valid_actions_excludes_pick_without_visible_pickable() {
    let s = fixture_scene();
    let acts = valid_actions(&s);
    assert!(acts.iter().all(|a| a.verb != Verb::Pick), "no visible pickable in z0");
}

#[test]
fn closed_drawer_blocks_place_until_opened() {
    // Agent holds the Pen next to the closed Drawer: Place(Drawer) must be
    // absent while Open(Drawer) is offered.
    let mut s = fixture_scene();
    let pen = ObjectId::new("Pen");
    s.objects.get_mut(&pen).unwrap().container = None;
    s.holding = Some(pen);
    let acts = valid_actions(&s);
    assert!(!acts.contains(&Action::place("Drawer")));
    assert!(acts.contains(&Action::open("Drawer")));
    assert!(acts.contains(&Action::place("Box")), "open Box accepts a Place");
    assert!(acts.contains(&Action::place("Table")), "plain receptacles accept Places");
}

#[test]
fn navigate_is_always_executable_including_redundant() {
    let s = fixture_scene();
    let acts = valid_actions(&s);
    assert!(acts.contains(&Action::navigate("Drawer")), "redundant navigate stays valid");
    assert!(acts.contains(&Action::navigate("Fridge")));
    assert!(!acts.contains(&Action::navigate("Pen")), "pickables are not navigation targets");
}

#[test]
fn step_navigate_moves_agent_to_target_zone() {
    let s = fixture_scene();
    let (s, obs) = step(&s, &Action::navigate("Fridge")).unwrap();
    assert_eq!(s.agent_zone, ZoneId::new("z1"));
    assert_eq!(obs.agent_zone, ZoneId::new("z1"));
    assert_eq!(s.step_count, 1);
}

#[test]
fn step_pick_from_closed_receptacle_fails_scene_unchanged() {
    let s = fixture_scene();
    let err = step(&s, &Action::pick("Pen")).unwrap_err();
    assert_eq!(err, ExecError::NotVisible("Pen".into()));
    assert_eq!(s.step_count, 0, "scene is unchanged on error");
}

#[test]
fn step_task_completed_freezes_scene() {
    let s = fixture_scene();
    let (s, _) = step(&s, &Action::task_completed()).unwrap();
    assert!(s.terminal);
    assert!(valid_actions(&s).is_empty());
    assert_eq!(step(&s, &Action::navigate("Box")), Err(ExecError::EpisodeTerminated));
}

#[test]
fn check_success_place_in_needs_container_match() {
    let s = fixture_scene();
    let goal = goal_pen_in_box();
    assert!(!check_success(&s, &goal));
    let (s, _) = step(&s, &Action::open("Drawer")).unwrap();
    let (s, _) = step(&s, &Action::pick("Pen")).unwrap();
    let (s, _) = step(&s, &Action::place("Box")).unwrap();
    assert!(check_success(&s, &goal));
}

#[test]
fn check_success_place_in_closed_is_a_conjunction() {
    let goal = Goal::new(GoalTemplate::PlaceInClosed {
        item: ObjectType::new("Pen"),
        receptacle: ObjectId::new("Drawer"),
    });
    let s = fixture_scene();
    // Pen already inside the Drawer, Drawer closed: satisfied.
    assert!(check_success(&s, &goal));
    let (open, _) = step(&s, &Action::open("Drawer")).unwrap();
    assert!(!check_success(&open, &goal), "open target breaks the conjunction");
    let (closed, _) = step(&open, &Action::close("Drawer")).unwrap();
    assert!(check_success(&closed, &goal));
}

#[test]
fn classify_c3_navigate_instead_of_place() {
    let mut s = fixture_scene();
    let pen = ObjectId::new("Pen");
    s.objects.get_mut(&pen).unwrap().container = None;
    s.holding = Some(pen);
    let goal = goal_pen_in_box();
    // Holding the Pen in the Box's zone; any Navigate is erroneous.
    assert_eq!(
        classify_violation(&s, &goal, &Action::navigate("Fridge")),
        Some(ViolationCategory::ErroneousNavigation)
    );
    assert_eq!(
        classify_violation(&s, &goal, &Action::navigate("Box")),
        Some(ViolationCategory::ErroneousNavigation)
    );
    assert_eq!(classify_violation(&s, &goal, &Action::place("Box")), None);
}

#[test]
fn classify_c4_shadows_everything_and_tc_is_clean() {
    let s = fixture_scene();
    let goal = Goal::new(GoalTemplate::PlaceInClosed {
        item: ObjectType::new("Pen"),
        receptacle: ObjectId::new("Drawer"),
    });
    assert!(check_success(&s, &goal));
    assert_eq!(
        classify_violation(&s, &goal, &Action::navigate("Box")),
        Some(ViolationCategory::FailureToTerminate)
    );
    assert_eq!(
        classify_violation(&s, &goal, &Action::open("Drawer")),
        Some(ViolationCategory::FailureToTerminate)
    );
    assert_eq!(classify_violation(&s, &goal, &Action::task_completed()), None);
}

#[test]
fn classify_c1_vs_c2_split_on_target_zone() {
    let mut s = fixture_scene();
    // Reveal the Pen so the pending goal object is visible.
    s.objects.get_mut(&ObjectId::new("Drawer")).unwrap().is_open = Some(true);
    let goal = goal_pen_in_box();
    assert_eq!(
        classify_violation(&s, &goal, &Action::navigate("Table")),
        Some(ViolationCategory::InvalidNavigation),
        "navigate within the zone instead of picking"
    );
    assert_eq!(
        classify_violation(&s, &goal, &Action::navigate("Fridge")),
        Some(ViolationCategory::RepetitiveSearch),
        "navigate away despite having located the object"
    );
    assert_eq!(classify_violation(&s, &goal, &Action::pick("Pen")), None);
}

#[test]
fn classify_ignores_objects_already_placed() {
    // MultiPlace with the Pen already in the Box: only the Apple is pending,
    // and it is not visible from z0, so navigating is violation-free.
    let mut s = fixture_scene();
    let pen = ObjectId::new("Pen");
    s.objects.get_mut(&pen).unwrap().container = Some(ObjectId::new("Box"));
    let goal = Goal::new(GoalTemplate::MultiPlace {
        items: vec![
            (ObjectType::new("Pen"), ObjectId::new("Box")),
            (ObjectType::new("Apple"), ObjectId::new("Box")),
        ],
    });
    assert_eq!(classify_violation(&s, &goal, &Action::navigate("Shelf")), None);
}

#[test]
fn state_hash_ignores_bookkeeping_fields() {
    let s = fixture_scene();
    let mut t = s.clone();
    t.rng_seed = 999;
    t.step_count = 42;
    assert_eq!(state_hash(&s), state_hash(&t));
    let (opened, _) = step(&s, &Action::open("Drawer")).unwrap();
    assert_ne!(state_hash(&s), state_hash(&opened), "open state is hash-relevant");
    assert_eq!(state_hash(&s), state_hash(&s.clone()));
}

#[test]
fn generate_scene_is_deterministic() {
    let config = SceneConfig::default();
    let a = generate_scene(7, &config).unwrap();
    let b = generate_scene(7, &config).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap(),
        "same seed and config must serialize identically"
    );
}

#[test]
fn generate_scene_p_hide_zero_keeps_goal_objects_exposed() {
    let config = SceneConfig { p_hide: 0.0, ..SceneConfig::default() };
    for seed in 0..50 {
        let (scene, _) = generate_scene(seed, &config).unwrap();
        for obj in scene.objects.values() {
            assert!(
                obj.container.is_none(),
                "p_hide=0 must not place objects inside receptacles (seed {seed})"
            );
        }
    }
}

#[test]
fn generated_scenes_respect_bounds_and_invariants() {
    let config = SceneConfig::default();
    for seed in 0..30 {
        let (scene, _) = generate_scene(seed, &config).unwrap();
        scene.validate().unwrap();
        assert_eq!(scene.zones.len(), 4);
        assert!(scene.objects.len() <= 12);
        for zone in &scene.zones {
            assert!(
                !scene.receptacles_in_zone(zone).is_empty(),
                "every zone must hold a receptacle for reachability"
            );
        }
    }
}
