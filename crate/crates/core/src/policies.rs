//! Per-node MAC policies: the shared decision interface, slotted-Aloha
//! variants, a near-far TDMA schedule, trivial reference policies, and the
//! name-based policy registry.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::modem;
use crate::simcore::{min_power_for, Decision, LocalObservation, Scenario};
use crate::sso::ActionSpace;

/// One transmitter's decision maker.
pub trait Policy: Send {
    fn name(&self) -> &str;

    /// Clears per-episode state.
    fn reset(&mut self) {}

    /// Header bytes this policy adds to every packet it sends.
    fn annex_bytes(&self) -> u32 {
        0
    }

    fn decide(&mut self, obs: &LocalObservation, rng: &mut dyn RngCore) -> Result<Decision>;
}

/// Never transmits.
#[derive(Clone, Copy, Debug, Default)]
pub struct WaitPolicy;

impl Policy for WaitPolicy {
    fn name(&self) -> &str {
        "wait"
    }

    fn decide(&mut self, _obs: &LocalObservation, _rng: &mut dyn RngCore) -> Result<Decision> {
        Ok(Decision::Wait)
    }
}

/// Slotted Aloha: when backlogged, send with a fixed ⟨mode, power⟩ with
/// probability `send_prob`.
#[derive(Clone, Debug)]
pub struct Aloha {
    name: String,
    pub send_prob: f64,
    pub mode: u8,
    pub power_w: f64,
}

impl Aloha {
    pub fn new(name: impl Into<String>, send_prob: f64, mode: u8, power_w: f64) -> Result<Self> {
        if !(send_prob > 0.0 && send_prob <= 1.0) {
            return Err(Error::Config(format!("send probability must lie in (0, 1], got {send_prob}")));
        }
        Ok(Self { name: name.into(), send_prob, mode, power_w })
    }

    /// Lowest mode at full power.
    pub fn plain(scenario: &Scenario) -> Self {
        Self {
            name: "aloha".into(),
            send_prob: 1.0,
            mode: scenario.modes.lowest().index,
            power_w: scenario.power.max_tx_w,
        }
    }
}

impl Policy for Aloha {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(&mut self, obs: &LocalObservation, rng: &mut dyn RngCore) -> Result<Decision> {
        if !obs.has_traffic() {
            return Ok(Decision::Wait);
        }
        if self.send_prob < 1.0 && rng.random::<f64>() >= self.send_prob {
            return Ok(Decision::Wait);
        }
        Ok(Decision::Transmit { mode: self.mode, power_w: self.power_w })
    }
}

/// Uniformly random over an action space, wait included.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    actions: Vec<Decision>,
}

impl RandomPolicy {
    pub fn new(space: &ActionSpace) -> Self {
        Self { actions: space.decisions() }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, _obs: &LocalObservation, rng: &mut dyn RngCore) -> Result<Decision> {
        Ok(self.actions[rng.random_range(0..self.actions.len())])
    }
}

/// Slot assignment that packs sink receptions back to back using the
/// differences in propagation delay.
///
/// Every node uses the lowest mode at the least power that meets its
/// threshold without fading. Nodes are served far first; each takes the
/// earliest slot whose reception starts strictly after the previous one
/// ends. The frame is the least whole number of slots after which the next
/// round's first reception clears the last one.
#[derive(Clone, Debug, PartialEq)]
pub struct NfTdmaSchedule {
    pub frame_slots: usize,
    /// Slot offset within the frame, per transmitter.
    pub offsets: Vec<usize>,
    pub power_w: Vec<f64>,
    pub mode: u8,
    /// Reception interval at the sink of each node's first-frame packet.
    pub receptions: Vec<(f64, f64)>,
}

impl NfTdmaSchedule {
    pub fn build(scenario: &Scenario, frame_slots: Option<usize>, annex_bytes: u32) -> Result<Self> {
        scenario.validate()?;
        let mode = scenario.modes.lowest();
        let n = scenario.n_transmitters();
        let tx = modem::tx_duration(scenario.payload_bytes + annex_bytes, mode, &scenario.framing)?;
        let delta = scenario.slot_s;
        let mut prop = Vec::with_capacity(n);
        let mut power = Vec::with_capacity(n);
        for (i, pos) in scenario.positions.iter().enumerate() {
            prop.push(scenario.delay.delay(i, pos, scenario.sink_id(), &scenario.sink)? / delta);
            let d = pos.distance(&scenario.sink);
            let p = min_power_for(mode, d, scenario)?.ok_or_else(|| {
                Error::Config(format!("node {i} at {d:.0} m cannot reach the sink even at full power"))
            })?;
            power.push(p);
        }
        let tx = tx / delta;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| prop[b].total_cmp(&prop[a]).then(a.cmp(&b)));
        let mut offsets = vec![0usize; n];
        let mut receptions = vec![(0.0, 0.0); n];
        let mut prev_end: Option<f64> = None;
        for &i in &order {
            let s = match prev_end {
                None => 0,
                Some(end) => {
                    let s = (end - prop[i]).floor() + 1.0;
                    s.max(0.0) as usize
                }
            };
            offsets[i] = s;
            let start = s as f64 + prop[i];
            receptions[i] = (start * delta, (start + tx) * delta);
            prev_end = Some(start + tx);
        }
        let first = order.iter().map(|&i| receptions[i].0).fold(f64::INFINITY, f64::min) / delta;
        let last = order.iter().map(|&i| receptions[i].1).fold(f64::NEG_INFINITY, f64::max) / delta;
        let needed = ((last - first).floor() as usize + 1).max(offsets.iter().max().map_or(1, |m| m + 1));
        let frame_slots = match frame_slots {
            None => needed,
            Some(f) if f >= needed => f,
            Some(f) => {
                return Err(Error::Config(format!("frame of {f} slots is too short; the schedule needs {needed}")))
            }
        };
        Ok(Self { frame_slots, offsets, power_w: power, mode: mode.index, receptions })
    }
}

/// Transmits in the node's own slot of every frame.
#[derive(Clone, Debug)]
pub struct NfTdma {
    schedule: Arc<NfTdmaSchedule>,
    node: usize,
}

impl NfTdma {
    pub fn new(schedule: Arc<NfTdmaSchedule>, node: usize) -> Self {
        Self { schedule, node }
    }
}

impl Policy for NfTdma {
    fn name(&self) -> &str {
        "nf-tdma"
    }

    fn decide(&mut self, obs: &LocalObservation, _rng: &mut dyn RngCore) -> Result<Decision> {
        let s = &self.schedule;
        if obs.has_traffic() && obs.slot % s.frame_slots == s.offsets[self.node] {
            Ok(Decision::Transmit { mode: s.mode, power_w: s.power_w[self.node] })
        } else {
            Ok(Decision::Wait)
        }
    }
}

/// Names accepted by [`policy_bundle`].
pub const POLICY_NAMES: &[&str] =
    &["aloha", "aloha-min-energy", "aloha-min-delay", "nf-tdma", "random", "wait", "tarm", "dr-dlma"];

/// Inputs some policies need beyond the scenario.
#[derive(Clone, Copy, Debug, Default)]
pub struct BundleContext<'a> {
    pub actions: Option<&'a ActionSpace>,
    pub checkpoint: Option<&'a Path>,
    pub nf_tdma_frame_slots: Option<usize>,
}

/// One policy per transmitter. `names` holds either one name for all nodes
/// or one name per node.
pub fn policy_bundle(names: &[&str], scenario: &Scenario, ctx: &BundleContext) -> Result<Vec<Box<dyn Policy>>> {
    let n = scenario.n_transmitters();
    let per_node: Vec<&str> = match names.len() {
        1 => vec![names[0]; n],
        k if k == n => names.to_vec(),
        k => return Err(Error::Config(format!("{k} policy names for {n} transmitters"))),
    };
    let need_actions =
        |name: &str| ctx.actions.ok_or_else(|| Error::Config(format!("policy `{name}` needs an action space")));
    let mut schedule: Option<Arc<NfTdmaSchedule>> = None;
    let mut tarm: Option<Vec<Box<dyn Policy>>> = None;
    let mut out: Vec<Box<dyn Policy>> = Vec::with_capacity(n);
    for (i, &name) in per_node.iter().enumerate() {
        let p: Box<dyn Policy> = match name {
            "aloha" => Box::new(Aloha::plain(scenario)),
            "aloha-min-energy" => {
                let s = need_actions(name)?.min_energy();
                Box::new(Aloha::new(name, 1.0, s.mode, s.power_w)?)
            }
            "aloha-min-delay" => {
                let s = need_actions(name)?.min_delay();
                Box::new(Aloha::new(name, 1.0, s.mode, s.power_w)?)
            }
            "nf-tdma" => {
                let sched = match &schedule {
                    Some(s) => Arc::clone(s),
                    None => {
                        let s = Arc::new(NfTdmaSchedule::build(scenario, ctx.nf_tdma_frame_slots, 0)?);
                        schedule = Some(Arc::clone(&s));
                        s
                    }
                };
                Box::new(NfTdma::new(sched, i))
            }
            "random" => Box::new(RandomPolicy::new(need_actions(name)?)),
            "wait" => Box::new(WaitPolicy),
            "tarm" => {
                if tarm.is_none() {
                    let path =
                        ctx.checkpoint.ok_or_else(|| Error::Config("policy `tarm` needs a checkpoint".into()))?;
                    tarm = Some(crate::marl::load_agents(path, n)?);
                }
                let agents = tarm.as_mut().expect("loaded above");
                std::mem::replace(&mut agents[i], Box::new(WaitPolicy))
            }
            "dr-dlma" => return Err(Error::UnknownPolicy("dr-dlma (reserved; no implementation is provided)".into())),
            other => return Err(Error::UnknownPolicy(other.to_owned())),
        };
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::simcore::{detect_conflicts, run_episode, Interval, NeighborView};
    use crate::world::{LocalLoadInfo, PhyStatus, Position};

    fn obs(queue: u32, slot: usize) -> LocalObservation {
        LocalObservation {
            node: 0,
            n_transmitters: 1,
            slot,
            time_s: slot as f64,
            phy_status: PhyStatus::Idle,
            position: Position::default(),
            local: LocalLoadInfo { t_acquire: 0.0, queue_len: queue, est: 0.0 },
            neighbors: Vec::<NeighborView>::new(),
            fresh: true,
        }
    }

    #[test]
    fn aloha_rules() {
        let s = Scenario::reference();
        let mut a = Aloha::plain(&s);
        let mut rng = seed::rng(1, &[]);
        assert_eq!(a.decide(&obs(0, 0), &mut rng).unwrap(), Decision::Wait);
        for t in 0..20 {
            assert_eq!(a.decide(&obs(3, t), &mut rng).unwrap(), Decision::Transmit { mode: 1, power_w: 40.0 });
        }
        assert!(Aloha::new("x", 0.0, 1, 1.0).is_err());
        let mut half = Aloha::new("x", 0.5, 1, 1.0).unwrap();
        let sends = (0..10_000).filter(|&t| half.decide(&obs(1, t), &mut rng).unwrap() != Decision::Wait).count();
        assert!((sends as f64 / 10_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn aloha_success_probability_matches_analysis() {
        // tiny packets and a long slot so a reception always fits in its slot
        let n = 4;
        let q = 0.3;
        let mut sc = Scenario {
            positions: crate::simcore::ring_positions(&vec![3000.0; n]),
            per_node_rate: 50.0,
            slot_s: 4.0,
            horizon_slots: 2000,
            fading: false,
            ..Scenario::reference()
        };
        sc.payload_bytes = 20;
        let mut bundle: Vec<Box<dyn Policy>> =
            (0..n).map(|_| Box::new(Aloha::new("aloha", q, 5, 40.0).unwrap()) as Box<dyn Policy>).collect();
        let r = run_episode(&mut bundle, &sc, 9).unwrap();
        let per_slot = r.metrics.received_count as f64 / (sc.horizon_slots - 1) as f64;
        let expected = n as f64 * q * (1.0 - q).powi(n as i32 - 1);
        assert!((per_slot - expected).abs() < 0.04, "{per_slot} vs {expected}");
    }

    #[test]
    fn nf_tdma_reference_schedule() {
        let sc = Scenario { fading: false, ..Scenario::reference() };
        let sched = NfTdmaSchedule::build(&sc, None, 0).unwrap();
        // far node first: 5 km, then 4 km, then 3 km
        assert_eq!(sched.offsets[2], 0);
        assert!(sched.offsets[1] >= sched.offsets[2] && sched.offsets[0] >= sched.offsets[1]);
        let ivs: Vec<Interval> = sched.receptions.iter().map(|&(a, b)| Interval::new(a, b)).collect();
        assert_eq!(detect_conflicts(&ivs).conflict_count(), 0);
        // each gap is below one slot: the next node could not have gone a slot earlier
        let mut sorted = sched.receptions.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in sorted.windows(2) {
            let gap = w[1].0 - w[0].1;
            assert!(gap > 0.0 && gap <= sc.slot_s, "gap {gap}");
        }
        assert!(NfTdmaSchedule::build(&sc, Some(1), 0).is_err());
    }

    #[test]
    fn nf_tdma_single_node_owns_every_slot_it_needs() {
        let sc = Scenario { positions: vec![Position::new(3000.0, 0.0, 0.0)], ..Scenario::reference() };
        let sched = NfTdmaSchedule::build(&sc, None, 0).unwrap();
        assert_eq!(sched.offsets, vec![0]);
        // a 1.77 s packet needs a two-slot frame
        assert_eq!(sched.frame_slots, 2);
    }

    #[test]
    fn bundle_registry() {
        let sc = Scenario::reference();
        let b = policy_bundle(&["aloha"], &sc, &BundleContext::default()).unwrap();
        assert_eq!(b.len(), 3);
        assert!(b.iter().all(|p| p.name() == "aloha"));
        assert!(matches!(policy_bundle(&["nope"], &sc, &BundleContext::default()), Err(Error::UnknownPolicy(_))));
        assert!(policy_bundle(&["dr-dlma"], &sc, &BundleContext::default()).is_err());
        assert!(policy_bundle(&["random"], &sc, &BundleContext::default()).is_err());
        assert!(matches!(policy_bundle(&["tarm"], &sc, &BundleContext::default()), Err(Error::Config(_))));
        let mixed = policy_bundle(&["aloha", "wait", "nf-tdma"], &sc, &BundleContext::default()).unwrap();
        let names: Vec<&str> = mixed.iter().map(|p| p.name()).collect();
        assert_eq!(names, ["aloha", "wait", "nf-tdma"]);
    }
}
