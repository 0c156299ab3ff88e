use oar_core::seed::rng_from_seed;
use oar_core::wav_io::{read_wav, write_wav};
use oar_core::{
    oracle_best_schedule, run_episode, AgentConfig, AudioClip, DqnAgent, EpisodeConfig, EpisodeLog, LearnerEnv,
    ScriptedController, SurrogateEnv, SurrogateParams, TaskParams,
};

fn small_learner() -> LearnerEnv {
    let params = TaskParams {
        n_train: 200,
        n_val: 100,
        ..TaskParams::default()
    };
    LearnerEnv::new(params, 4.0).unwrap()
}

fn agent_episode(env: &mut dyn oar_core::TrainingEnvironment, cfg: &EpisodeConfig, agent: &mut DqnAgent, seed: u64) -> EpisodeLog {
    run_episode(agent, env, cfg, seed, &mut rng_from_seed(seed ^ 1)).unwrap()
}

fn assert_telescopes(log: &EpisodeLog) {
    let sum = log.total_reward();
    let direct = log.initial_state.val_wer - log.final_state().val_wer;
    assert!((sum - direct).abs() < 1e-9, "{sum} vs {direct}");
}

#[test]
fn rewards_telescope_on_both_environments() {
    let cfg = EpisodeConfig::default();
    let mut agent = DqnAgent::new(AgentConfig::default(), 3).unwrap();
    let mut surrogate = SurrogateEnv::new(SurrogateParams::default(), cfg.horizon, cfg.beta_max).unwrap();
    for seed in 0..5 {
        assert_telescopes(&agent_episode(&mut surrogate, &cfg, &mut agent, seed));
    }
    let cfg = EpisodeConfig {
        horizon: 4,
        iterations_per_step: 5,
        ..EpisodeConfig::default()
    };
    let mut learner = small_learner();
    for seed in 0..2 {
        assert_telescopes(&agent_episode(&mut learner, &cfg, &mut agent, seed));
    }
}

#[test]
fn agent_episodes_are_bit_reproducible() {
    let cfg = EpisodeConfig::default();
    let run = || {
        let mut agent = DqnAgent::new(AgentConfig::default(), 11).unwrap();
        let mut env = SurrogateEnv::new(SurrogateParams::default(), cfg.horizon, cfg.beta_max).unwrap();
        let logs: Vec<EpisodeLog> = (0..4).map(|s| agent_episode(&mut env, &cfg, &mut agent, s)).collect();
        (logs, agent.to_json())
    };
    assert_eq!(run(), run());
}

#[test]
fn restoring_a_checkpoint_continues_identically() {
    let cfg = EpisodeConfig::default();
    let mut env = SurrogateEnv::new(SurrogateParams::default(), cfg.horizon, cfg.beta_max).unwrap();
    let mut agent = DqnAgent::new(AgentConfig::default(), 5).unwrap();
    for s in 0..6 {
        agent_episode(&mut env, &cfg, &mut agent, s);
    }
    let mut restored = DqnAgent::from_json(&agent.to_json()).unwrap();
    let a = agent_episode(&mut env, &cfg, &mut agent, 99);
    let b = agent_episode(&mut env, &cfg, &mut restored, 99);
    assert_eq!(a, b);
    assert_eq!(agent.to_json(), restored.to_json());
}

#[test]
fn replaying_the_oracle_matches_its_predicted_error() {
    let params = SurrogateParams {
        noise_std: 0.0,
        ..SurrogateParams::default()
    };
    let cfg = EpisodeConfig::default();
    let oracle = oracle_best_schedule(&params, cfg.horizon, cfg.initial_oar().unwrap());
    let mut env = SurrogateEnv::new(params, cfg.horizon, cfg.beta_max).unwrap();
    let mut ctl = ScriptedController::new(oracle.actions.clone());
    let log = run_episode(&mut ctl, &mut env, &cfg, 0, &mut rng_from_seed(0)).unwrap();
    assert_eq!(log.schedule(), oracle.betas);
    assert!((log.final_state().val_wer - oracle.final_wer).abs() < 1e-9);
}

#[test]
fn wav_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tone.wav");
    let samples: Vec<f64> = (0..1600).map(|i| 0.5 * (i as f64 * 0.05).sin()).collect();
    let clip = AudioClip::new(samples.clone(), 16_000);
    write_wav(&clip, &path).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.sample_rate, 16_000);
    assert_eq!(back.len(), samples.len());
    for (a, b) in back.samples.iter().zip(&samples) {
        assert!((a - b).abs() <= 1.0 / 32767.0);
    }
    write_wav(&back, &path).unwrap();
    assert_eq!(read_wav(&path).unwrap(), back);
}
