//! Decentralized execution of a trained network, and the checkpoint
//! directory that carries it between runs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{argmax, ObservationEncoder};
use crate::error::{Error, Result};
use crate::policies::Policy;
use crate::simcore::{Decision, LocalObservation};
use crate::sso::ActionSpace;
use crate::valuenet::{NetworkSpec, QNetwork};

const FORMAT: &str = "uwan-q-checkpoint";
const MANIFEST_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.toml";

/// Greedy agent over a shared network. Each agent keeps its own recurrent
/// state, which advances on every slot; on a slot without fresh overheard
/// inputs the previous action is repeated.
#[derive(Clone, Debug)]
pub struct TarmAgent {
    name: String,
    net: Arc<QNetwork>,
    actions: Arc<ActionSpace>,
    encoder: ObservationEncoder,
    hidden: Vec<f64>,
    prev_action: usize,
}

impl TarmAgent {
    pub fn new(net: Arc<QNetwork>, actions: Arc<ActionSpace>, encoder: ObservationEncoder) -> Result<Self> {
        let spec = net.spec();
        if spec.input_width != encoder.width() {
            return Err(Error::Shape { expected: encoder.width(), actual: spec.input_width });
        }
        if spec.output_width != actions.len() {
            return Err(Error::Shape { expected: actions.len(), actual: spec.output_width });
        }
        let name = match encoder.variant {
            super::ObservationVariant::Full => "tarm".to_string(),
            v => format!("tarm-{}", v.as_str()),
        };
        let hidden = net.initial_hidden();
        Ok(Self { name, net, actions, encoder, hidden, prev_action: 0 })
    }
}

impl Policy for TarmAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self) {
        self.hidden = self.net.initial_hidden();
        self.prev_action = 0;
    }

    fn annex_bytes(&self) -> u32 {
        self.encoder.variant.annex_bytes()
    }

    fn decide(&mut self, obs: &LocalObservation, _rng: &mut dyn RngCore) -> Result<Decision> {
        let x = self.encoder.encode(obs)?;
        let (q, h) = self.net.forward(&x, &self.hidden)?;
        self.hidden = h;
        if obs.fresh {
            self.prev_action = argmax(&q);
        }
        self.actions.decision(self.prev_action)
    }
}

/// Metadata stored next to the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub network: NetworkSpec,
    pub encoder: ObservationEncoder,
    pub seed: u64,
    pub episode: usize,
    pub mean_eval_reward: f64,
    pub params_file: String,
    pub actions_file: String,
}

/// A loaded checkpoint directory.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub net: QNetwork,
    pub actions: ActionSpace,
}

impl Checkpoint {
    /// One agent per transmitter, all sharing the parameters.
    pub fn agents(&self) -> Result<Vec<TarmAgent>> {
        let net = Arc::new(self.net.clone());
        let actions = Arc::new(self.actions.clone());
        (0..self.manifest.encoder.n_agents)
            .map(|_| TarmAgent::new(net.clone(), actions.clone(), self.manifest.encoder))
            .collect()
    }
}

/// Writes `q.bin`, `actions.txt` and `manifest.toml` into `dir`.
pub fn save_checkpoint(
    dir: &Path,
    net: &QNetwork,
    actions: &ActionSpace,
    encoder: &ObservationEncoder,
    seed: u64,
    episode: usize,
    mean_eval_reward: f64,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        version: MANIFEST_VERSION,
        network: *net.spec(),
        encoder: *encoder,
        seed,
        episode,
        mean_eval_reward,
        params_file: "q.bin".into(),
        actions_file: "actions.txt".into(),
    };
    net.save(&dir.join(&manifest.params_file))?;
    actions.save(&dir.join(&manifest.actions_file))?;
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Accepts the checkpoint directory or its manifest file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let dir = if path.is_file() { path.parent().unwrap_or(Path::new(".")) } else { path };
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::MissingCheckpoint(manifest_path));
    }
    let bad = |detail: String| Error::Format { what: "checkpoint manifest", path: manifest_path.clone(), detail };
    let text = std::fs::read_to_string(&manifest_path)?;
    let manifest: CheckpointManifest = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if manifest.format != FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(bad(format!("unsupported format {} v{}", manifest.format, manifest.version)));
    }
    let net = QNetwork::load(&dir.join(&manifest.params_file))?;
    if *net.spec() != manifest.network {
        return Err(bad("parameter file widths differ from manifest".into()));
    }
    let actions = ActionSpace::load(&dir.join(&manifest.actions_file))?;
    let cp = Checkpoint { manifest, net, actions };
    cp.agents()?;
    Ok(cp)
}

/// Boxed agents for a network of `n` transmitters.
pub fn load_agents(path: &Path, n: usize) -> Result<Vec<Box<dyn Policy>>> {
    let cp = load_checkpoint(path)?;
    if cp.manifest.encoder.n_agents != n {
        return Err(Error::Shape { expected: n, actual: cp.manifest.encoder.n_agents });
    }
    Ok(cp.agents()?.into_iter().map(|a| Box::new(a) as Box<dyn Policy>).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marl::ObservationVariant;
    use crate::seed;
    use crate::simcore::{ring_positions, run_episode, Scenario};
    use crate::sso::{build_action_space, grid_front, ObjectiveEvaluator, ObjectiveModel};

    fn setup() -> (Scenario, ActionSpace, ObservationEncoder, QNetwork) {
        let sc = Scenario { horizon_slots: 20, ..Scenario::reference() };
        let eval = ObjectiveEvaluator::new(
            sc.modes.clone(),
            sc.framing.clone(),
            sc.power.clone(),
            sc.channel.clone(),
            5000.0,
            200,
            ObjectiveModel::FadingExpected,
        )
        .unwrap();
        let space = build_action_space(&grid_front(&eval, 0.5).unwrap(), 6).unwrap();
        let enc = ObservationEncoder::new(3, ObservationVariant::Full);
        let spec =
            NetworkSpec { input_width: enc.width(), hidden_width: 6, recurrent_width: 5, output_width: space.len() };
        let net = QNetwork::random(spec, &mut seed::rng(9, &[])).unwrap();
        (sc, space, enc, net)
    }

    #[test]
    fn checkpoint_round_trip_gives_identical_episodes() {
        let (sc, space, enc, net) = setup();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &net, &space, &enc, 9, 100, 1.5).unwrap();
        let cp = load_checkpoint(&dir.path().join("manifest.toml")).unwrap();
        assert_eq!(cp.net, net);
        assert_eq!(cp.manifest.episode, 100);
        let mut a = load_agents(dir.path(), 3).unwrap();
        let mut b: Vec<Box<dyn Policy>> = TarmAgent::new(Arc::new(net), Arc::new(space), enc)
            .map(|t| vec![t; 3].into_iter().map(|t| Box::new(t) as Box<dyn Policy>).collect())
            .unwrap();
        let ra = run_episode(&mut a, &sc, 4).unwrap();
        let rb = run_episode(&mut b, &sc, 4).unwrap();
        assert_eq!(ra.events.len(), rb.events.len());
        assert_eq!(ra.metrics, rb.metrics);
        assert!(matches!(load_agents(dir.path(), 4), Err(Error::Shape { .. })));
    }

    #[test]
    fn missing_and_mismatched_checkpoints() {
        let (_, space, _, net) = setup();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::MissingCheckpoint(_))));
        let wrong = ObservationEncoder::new(2, ObservationVariant::Full);
        save_checkpoint(dir.path(), &net, &space, &wrong, 1, 1, 0.0).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Shape { .. })));
        let sc = Scenario { positions: ring_positions(&[3000.0, 4000.0]), ..Scenario::reference() };
        assert_eq!(sc.n_transmitters(), 2);
    }

    #[test]
    fn stale_slot_repeats_previous_action() {
        let (sc, space, enc, net) = setup();
        let mut agent = TarmAgent::new(Arc::new(net), Arc::new(space.clone()), enc).unwrap();
        let mut sim = crate::simcore::Simulation::new(&sc, 1, &[10; 3]).unwrap();
        let mut obs = sim.observe().unwrap().remove(0);
        let mut rng = seed::rng(0, &[]);
        let first = agent.decide(&obs, &mut rng).unwrap();
        let h1 = agent.hidden.clone();
        obs.fresh = false;
        obs.time_s += 1.0;
        let second = agent.decide(&obs, &mut rng).unwrap();
        assert_eq!(first, second);
        assert_ne!(agent.hidden, h1);
    }
}
