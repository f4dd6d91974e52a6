mod common;

use infoctl::control::{stop_index, ControlKind};
use infoctl::rollout::{run_episode, ActionKind, EpisodeConfig, EpisodeTrace, Mode, ViolationKind};
use infoctl::simenv::{generate_corpus, CorpusSpec, Profile, ScriptedAgent, SimCorpus, SimEnv, TaskRecord};

use common::{ContinueFixture, GOLD};

fn corpus() -> (SimCorpus, Vec<TaskRecord>) {
    let (docs, tasks) = generate_corpus(&CorpusSpec::default()).unwrap();
    (SimCorpus::new(docs).unwrap(), tasks)
}

fn retrieves(t: &EpisodeTrace) -> usize {
    t.actions
        .iter()
        .filter(|a| matches!(a.kind, ActionKind::Retrieve(_)))
        .count()
}

fn events(t: &EpisodeTrace, want: fn(&ControlKind) -> bool) -> usize {
    t.control_events.iter().filter(|e| want(&e.signal.kind)).count()
}

#[test]
fn premature_stopper_gets_exactly_one_extra_step() {
    let env = ContinueFixture::new();
    let mut agent = ScriptedAgent::new(Profile::PrematureStopper);
    let t = run_episode(&env, &mut agent, &EpisodeConfig::default(), Mode::Controlled, 0, 1).unwrap();
    assert_eq!(events(&t, |k| *k == ControlKind::ContinueOneStep), 1);
    assert_eq!(retrieves(&t), 2);
    assert_eq!(t.search_steps.len(), 2);
    assert_eq!(t.answer(), Some(GOLD));
    let cont = t
        .control_events
        .iter()
        .find(|e| e.signal.kind == ControlKind::ContinueOneStep)
        .unwrap();
    assert_eq!(cont.complied, Some(true));
    assert!(t.violations.is_empty(), "{:?}", t.violations);
    assert_eq!(t.reward.total, 1.0);
}

#[test]
fn premature_stopper_in_free_mode_stops_early() {
    let env = ContinueFixture::new();
    let mut agent = ScriptedAgent::new(Profile::PrematureStopper);
    let t = run_episode(&env, &mut agent, &EpisodeConfig::default(), Mode::Free, 0, 1).unwrap();
    assert!(t.control_events.is_empty());
    assert_eq!(retrieves(&t), 1);
    assert_ne!(t.answer(), Some(GOLD));
}

#[test]
fn free_mode_over_retriever_exhausts_the_budget() {
    let (c, tasks) = corpus();
    let env = SimEnv::new(&c, &tasks[0], 5).unwrap();
    let mut agent = ScriptedAgent::new(Profile::OverRetriever);
    let t = run_episode(&env, &mut agent, &EpisodeConfig::default(), Mode::Free, 0, 0).unwrap();
    assert_eq!(t.actions.len(), 8);
    assert_eq!(retrieves(&t), 8);
    assert_eq!(t.answer(), None);
    assert_eq!(t.utilities.len(), 8);
    assert_eq!(t.reward.r_correct, 0.0);
    assert_eq!(t.violations.len(), 1);
    assert_eq!(t.violations[0].kind, ViolationKind::BudgetOverrun);
    assert!((t.reward.total + 0.2).abs() < 1e-12);
}

#[test]
fn obedient_over_retriever_stops_at_the_first_exhausted_window() {
    let (c, tasks) = corpus();
    let cfg = EpisodeConfig::default();
    for (i, task) in tasks.iter().enumerate() {
        let env = SimEnv::new(&c, task, 5).unwrap();
        let mut agent = ScriptedAgent::new(Profile::OverRetriever).with_obedience(true);
        let t = run_episode(&env, &mut agent, &cfg, Mode::Controlled, 0, i as u64).unwrap();
        let stops: Vec<_> = t
            .control_events
            .iter()
            .filter(|e| e.signal.kind == ControlKind::Stop)
            .collect();
        assert_eq!(stops.len(), 1, "{}", task.task_id);
        let values: Vec<f64> = t.utilities.iter().map(|u| u.score.utility).collect();
        let l_star = stop_index(&values, cfg.controller.delta, cfg.controller.m_stop).unwrap();
        let before = t.actions.iter().filter(|a| a.step < stops[0].step);
        let searches_before = before.filter(|a| matches!(a.kind, ActionKind::Retrieve(_))).count();
        assert_eq!(searches_before, l_star + 1);
        // the action right after the signal is the answer, and nothing follows it
        let after: Vec<_> = t.actions.iter().filter(|a| a.step >= stops[0].step).collect();
        assert_eq!(after.len(), 1);
        assert!(matches!(after[0].kind, ActionKind::Answer(_)));
        assert_eq!(stops[0].complied, Some(true));
    }
}

#[test]
fn compliant_agent_follows_expand_directives_without_violations() {
    let (c, tasks) = corpus();
    for (i, task) in tasks.iter().enumerate() {
        let env = SimEnv::new(&c, task, 5).unwrap();
        let mut agent = ScriptedAgent::new(Profile::Compliant);
        let t = run_episode(&env, &mut agent, &EpisodeConfig::default(), Mode::Controlled, 0, i as u64).unwrap();
        assert!(t.violations.is_empty(), "{}: {:?}", task.task_id, t.violations);
        assert!(events(&t, |k| matches!(k, ControlKind::Expand(_))) >= 1);
        assert!(t.control_events.iter().all(|e| e.complied != Some(false)));
        assert!(t.answer().is_some());
    }
}

#[test]
fn utilities_match_closed_retrievals() {
    let (c, tasks) = corpus();
    for profile in Profile::ALL {
        for mode in [Mode::Controlled, Mode::Free] {
            let env = SimEnv::new(&c, &tasks[3], 5).unwrap();
            let mut agent = ScriptedAgent::new(profile);
            let t = run_episode(&env, &mut agent, &EpisodeConfig::default(), mode, 0, 9).unwrap();
            assert_eq!(t.utilities.len(), retrieves(&t), "{profile} {mode:?}");
            assert_eq!(t.utilities.len(), t.search_steps.len());
            for (i, u) in t.utilities.iter().enumerate() {
                assert_eq!(u.search_index, i);
            }
        }
    }
}

#[test]
fn traces_are_deterministic_and_rewards_recompute() {
    let (c, tasks) = corpus();
    let cfg = EpisodeConfig::default();
    for profile in Profile::ALL {
        for mode in [Mode::Controlled, Mode::Free] {
            for task in tasks.iter().take(5) {
                let run = || {
                    let env = SimEnv::new(&c, task, 5).unwrap();
                    let mut agent = ScriptedAgent::new(profile);
                    run_episode(&env, &mut agent, &cfg, mode, 1, 42).unwrap()
                };
                let a = run();
                let b = run();
                assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
                let line = serde_json::to_string(&a).unwrap();
                let back: EpisodeTrace = serde_json::from_str(&line).unwrap();
                assert_eq!(back.recompute_reward(&cfg.reward), a.reward);
                assert_eq!(back, a);
            }
        }
    }
}

#[test]
fn repeat_retrieval_is_less_novel() {
    let (c, tasks) = corpus();
    let env = SimEnv::new(&c, &tasks[0], 5).unwrap();
    let mut agent = ScriptedAgent::new(Profile::OverRetriever);
    let t = run_episode(&env, &mut agent, &EpisodeConfig::default(), Mode::Free, 0, 0).unwrap();
    assert!(t.utilities[1].score.novelty < t.utilities[0].score.novelty);
}

#[test]
fn trace_field_names_are_stable() {
    let env = ContinueFixture::new();
    let mut agent = ScriptedAgent::new(Profile::PrematureStopper);
    let t = run_episode(&env, &mut agent, &EpisodeConfig::default(), Mode::Controlled, 2, 5).unwrap();
    let v: serde_json::Value = serde_json::to_value(&t).unwrap();
    for key in [
        "task_id",
        "mode",
        "epoch",
        "actions",
        "search_steps",
        "utilities",
        "control_events",
        "violations",
        "reward",
        "seed",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["mode"], "controlled");
    assert_eq!(v["actions"][0]["kind"], "retrieve");
    assert!(v["utilities"][0]["novelty"].is_number());
}
